#include "support.hpp"

#include "psl/config.hpp"
#include "psl/pipeline.hpp"
#include "psl/records.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <thread>

using namespace psl;
using nlohmann::json;
using psl::testing::scratch_dir;

namespace {

json tiny_config_json() {
  return json::parse(R"({
    "seed": 3,
    "data": {"train_per_class": 24, "test_per_class": 10, "resolution": 4},
    "model_zoo": {"width": 2},
    "train_spectrum": {"epsilons": [0, 4], "epochs": 2, "batch_size": 16, "inner_steps": 2, "decay_epochs": [1]},
    "attacks": {"deltas": [2, 4], "steps": 2, "batch_size": 8},
    "quant_defense": {"betas": [8], "deltas": [0, 4], "steps": 2, "taps": ["conv0"]},
    "analysis": {"corruptions": ["gaussian_noise", "pixelate"], "severities": [0, 2]}
  })");
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Applies `fn` to every scalar leaf of `j` with its JSON pointer.
void for_each_leaf(json& j, const std::string& path, const std::function<void(json&, const std::string&)>& fn) {
  if (j.is_object()) {
    for (auto& [k, v] : j.items()) for_each_leaf(v, path + "/" + k, fn);
  } else if (j.is_array()) {
    if (j.empty()) {
      fn(j, path);
      return;
    }
    for (std::size_t i = 0; i < j.size(); ++i) for_each_leaf(j[i], path + "/" + std::to_string(i), fn);
  } else {
    fn(j, path);
  }
}

}  // namespace

TEST(Config, DefaultsAreMaterialized) {
  const ExperimentConfig cfg = parse_config(json::object());
  const json resolved = cfg.to_json();
  for (const char* section : {"data", "model_zoo", "train_spectrum", "attacks", "quant_defense", "analysis"}) {
    EXPECT_TRUE(resolved.contains(section)) << section;
  }
  EXPECT_EQ(resolved["train_spectrum"]["momentum"], 0.9);
  EXPECT_EQ(resolved["quant_defense"]["betas"], json({4.0, 6.0, 8.0, 10.0, 12.0}));
  EXPECT_EQ(parse_config(resolved).to_json(), resolved);
  EXPECT_EQ(parse_config(resolved).fingerprint(), cfg.fingerprint());
}

TEST(Config, UnknownKeysRejectedWithPath) {
  json doc = tiny_config_json();
  doc["train_spectrum"]["epoch"] = 3;
  try {
    parse_config(doc);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("/train_spectrum/epoch"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config(json{{"extra", 1}}), std::invalid_argument);
  EXPECT_THROW(parse_config(json{{"data", {{"synthetic_style", {{"hue", 1}}}}}}), std::invalid_argument);
}

TEST(Config, TypeAndValueErrorsNamePath) {
  try {
    parse_config(json{{"attacks", {{"steps", "many"}}}});
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("/attacks/steps"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config(json{{"model_zoo", {{"arch", "vgg"}}}}), std::invalid_argument);
  EXPECT_THROW(parse_config(json{{"version", 2}}), std::invalid_argument);
  EXPECT_THROW(parse_config(json{{"data", {{"source", "mnist"}}}}), std::invalid_argument);
}

TEST(Config, FingerprintTracksEveryField) {
  const json resolved = parse_config(tiny_config_json()).to_json();
  const std::string base = parse_config(resolved).fingerprint();
  std::vector<std::string> paths;
  json probe = resolved;
  for_each_leaf(probe, "", [&](json&, const std::string& path) { paths.push_back(path); });
  ASSERT_GT(paths.size(), 30u);
  for (const auto& path : paths) {
    json changed = resolved;
    json& leaf = changed[json::json_pointer(path)];
    if (leaf.is_boolean()) {
      leaf = !leaf.get<bool>();
    } else if (leaf.is_number_integer()) {
      leaf = leaf.get<std::int64_t>() + 1;
    } else if (leaf.is_number()) {
      leaf = leaf.get<double>() * 0.5 + 0.01;
    } else if (leaf.is_null()) {
      leaf = 0.01;
    } else if (leaf.is_array()) {
      continue;
    } else if (path == "/model_zoo/arch") {
      leaf = "mini_resnet";
    } else if (path == "/model_zoo/activation") {
      leaf = "swish";
    } else if (path == "/data/source") {
      continue;  // switching to CIFAR-10 needs files on disk
    } else if (path == "/train_spectrum/seed_policy") {
      leaf = "shared";
    } else if (path.starts_with("/quant_defense/attack_kinds")) {
      leaf = "pgd";
    } else if (path.starts_with("/analysis/corruptions")) {
      leaf = "contrast";
    } else {
      leaf = leaf.get<std::string>() + "x";
    }
    if (path == "/version") continue;
    ExperimentConfig cfg;
    try {
      cfg = parse_config(changed);
    } catch (const std::invalid_argument&) {
      continue;  // mutation produced an invalid config; nothing to fingerprint
    }
    EXPECT_NE(cfg.fingerprint(), base) << path;
  }
}

TEST(Records, LineRoundTripKeepsFieldOrder) {
  ResultRecord r;
  r.run_id = "run";
  r.timestamp = "2020-01-01T00:00:00Z";
  r.fingerprint = "ab";
  r.kind = RecordKind::quant_acc;
  r.keys.model_eps = 4;
  r.keys.attack = "bpda";
  r.keys.delta = 8;
  r.keys.tap = "conv0";
  r.keys.beta = 8.0;
  r.value = 37.4;
  r.seed = 18446744073709551615ull;
  const std::string line = r.to_line();
  EXPECT_EQ(line.find("{\"version\":1,\"run_id\""), 0u) << line;
  EXPECT_LT(line.find("\"kind\""), line.find("\"keys\""));
  EXPECT_LT(line.find("\"value\""), line.find("\"seed\""));
  const ResultRecord back = ResultRecord::from_line(line);
  EXPECT_EQ(back.keys, r.keys);
  EXPECT_EQ(back.value, r.value);
  EXPECT_EQ(back.seed, r.seed);
  EXPECT_EQ(back.kind, RecordKind::quant_acc);
  EXPECT_THROW(ResultRecord::from_line(R"({"version":2})"), std::exception);
}

TEST(Records, ConcurrentAppendsStayWholeLines) {
  const auto dir = scratch_dir("records_concurrent");
  {
    RecordSink sink(dir / "r.jsonl", "run", "fp");
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&, t] {
        for (int i = 0; i < 200; ++i) {
          RecordKeys k;
          k.model_eps = t;
          k.delta = i;
          sink.append(RecordKind::robust_err, k, t * 1000.0 + i, 1);
        }
      });
    }
    for (auto& th : threads) th.join();
  }
  const auto records = read_records(dir / "r.jsonl");
  EXPECT_EQ(records.size(), 800u);
  for (const auto& r : records) EXPECT_EQ(r.value, *r.keys.model_eps * 1000.0 + *r.keys.delta);
}

TEST(Records, InterruptedTailIgnoredCorruptLineRejected) {
  const auto dir = scratch_dir("records_tail");
  {
    RecordSink sink(dir / "r.jsonl", "run", "fp");
    sink.append(RecordKind::clean_acc, {}, 90.0, 1);
  }
  std::ofstream(dir / "r.jsonl", std::ios::app) << R"({"version":1,"run_id":"ru)";
  EXPECT_EQ(read_records(dir / "r.jsonl").size(), 1u);
  std::ofstream(dir / "r.jsonl", std::ios::app) << "\n";
  EXPECT_THROW(read_records(dir / "r.jsonl"), std::runtime_error);
}

class Pipeline : public ::testing::Test {
 protected:
  static std::vector<ResultRecord> run_all(const std::filesystem::path& out, std::size_t jobs) {
    const ExperimentConfig cfg = parse_config(tiny_config_json());
    RunOptions opts{.out_dir = out, .jobs = jobs};
    std::vector<ResultRecord> all;
    for (auto cmd : {Subcommand::train_spectrum, Subcommand::eval_grid, Subcommand::quant_sweep,
                     Subcommand::filter_norms, Subcommand::preact_stats, Subcommand::corrupt_eval}) {
      const auto outcome = run(cfg, cmd, opts);
      EXPECT_FALSE(outcome.records.empty()) << to_string(cmd);
      all.insert(all.end(), outcome.records.begin(), outcome.records.end());
    }
    return all;
  }
};

TEST_F(Pipeline, RerunsAreBitwiseIdentical) {
  const auto dir = scratch_dir("pipeline_rerun");
  const auto first = run_all(dir, 1);
  const auto second = run_all(dir, 1);
  const auto parallel = run_all(scratch_dir("pipeline_parallel"), 3);
  ASSERT_EQ(first.size(), second.size());
  ASSERT_EQ(first.size(), parallel.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    EXPECT_EQ(first[i].fingerprint, second[i].fingerprint);
    EXPECT_EQ(first[i].keys, second[i].keys);
    EXPECT_EQ(first[i].value, second[i].value);
    EXPECT_EQ(first[i].seed, second[i].seed);
    EXPECT_NEAR(first[i].value, parallel[i].value, 1e-12);
  }
  EXPECT_EQ(read_records(dir / "records.jsonl").size(), 2 * first.size());
}

TEST_F(Pipeline, ReportIsPureFunctionOfRecords) {
  const auto dir = scratch_dir("pipeline_report");
  run_all(dir, 1);
  const ExperimentConfig cfg = parse_config(tiny_config_json());
  const auto outcome = run(cfg, Subcommand::report, {.out_dir = dir});
  const auto report = dir / "report";
  for (const char* f : {"grid.csv", "fig1_curves.csv", "overdesign.csv", "quant_table.csv", "filter_norms.csv",
                        "corruption.csv", "preact.csv", "clean.csv", "summary.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(report / f)) << f;
  }
  const std::string quant = read_text(report / "quant_table.csv");
  EXPECT_EQ(quant.substr(0, quant.find('\n')), "model_eps,attack,delta,tap,beta,accuracy,delta_vs_none");

  // Each quantized row's delta equals its accuracy minus the matching none row.
  const auto records = read_records(dir / "records.jsonl");
  std::istringstream rows(quant);
  std::string line;
  std::getline(rows, line);
  int checked = 0;
  while (std::getline(rows, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() < 7 || cells[3] == "none") continue;
    double none = -1.0;
    for (const auto& r : records) {
      if (r.kind == RecordKind::quant_acc && r.keys.tap == "none" && r.keys.model_eps == std::stoi(cells[0]) &&
          r.keys.attack == cells[1] && r.keys.delta == std::stoi(cells[2])) {
        none = r.value;
      }
    }
    EXPECT_EQ(std::stod(cells[6]), std::stod(cells[5]) - none);
    ++checked;
  }
  EXPECT_GT(checked, 0);

  const std::string curves = read_text(report / "fig1_curves.csv");
  EXPECT_EQ(curves.substr(0, curves.find('\n')), "delta,model_eps,robust_err,is_argmin");
  EXPECT_EQ(std::count(curves.begin(), curves.end(), '\n'), 1 + 3 * 2);

  // Regenerating from the same store gives identical files.
  const std::string summary = read_text(report / "summary.txt");
  run(cfg, Subcommand::report, {.out_dir = dir});
  EXPECT_EQ(read_text(report / "summary.txt"), summary);
  EXPECT_EQ(outcome.summary, summary);
}

TEST_F(Pipeline, MissingCheckpointsReported) {
  const auto dir = scratch_dir("pipeline_missing");
  const ExperimentConfig cfg = parse_config(tiny_config_json());
  EXPECT_THROW(run(cfg, Subcommand::eval_grid, {.out_dir = dir}), std::runtime_error);
  EXPECT_THROW(parse_subcommand("train"), std::invalid_argument);
  EXPECT_EQ(run(dir / "nope.json", "eval-grid", {.out_dir = dir}), 1);
}
