#pragma once

#include "psl/config.hpp"
#include "psl/data.hpp"
#include "psl/records.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace psl {

enum class Subcommand { train_spectrum, eval_grid, quant_sweep, filter_norms, preact_stats, corrupt_eval, report };

std::string to_string(Subcommand cmd);
Subcommand parse_subcommand(const std::string& name);
const std::vector<std::string>& subcommand_names();

struct RunOptions {
  std::filesystem::path out_dir = "psl_out";
  std::optional<std::uint64_t> seed;  // overrides the config's base seed
  std::size_t jobs = 1;
  std::ostream* log = nullptr;        // summary destination; null is silent
};

/// Files inside a run directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path records() const { return root / "records.jsonl"; }
  std::filesystem::path resolved_config() const { return root / "resolved_config.json"; }
  std::filesystem::path checkpoint(int epsilon_int) const;
  std::filesystem::path report_dir() const { return root / "report"; }
};

struct RunOutcome {
  std::string run_id;
  std::string fingerprint;
  std::vector<ResultRecord> records;         // appended by this run
  std::vector<std::filesystem::path> files;  // written by this run, besides the record store
  std::string summary;
};

struct Datasets {
  DatasetHandle train;
  DatasetHandle test;
};

/// Training and test data described by the config. Synthetic sets use seeds
/// derive_seed(seed, "data/train") and derive_seed(seed, "data/test").
Datasets load_datasets(const ExperimentConfig& cfg);

RunOutcome run(ExperimentConfig cfg, Subcommand cmd, const RunOptions& options);

/// CLI entry: loads the config, runs, prints the summary; returns an exit status.
int run(const std::filesystem::path& config_path, const std::string& subcommand, const RunOptions& options);

/// Builds every report file from a record store, keeping only records whose
/// fingerprint matches. The latest record wins for repeated keys.
RunOutcome write_report(const std::vector<ResultRecord>& records, const std::string& fingerprint,
                        const std::filesystem::path& report_dir);

}  // namespace psl
