#pragma once

#include "psl/analysis.hpp"
#include "psl/attacks.hpp"
#include "psl/model.hpp"
#include "psl/train.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace psl {

inline constexpr int kConfigVersion = 1;

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "cifar10"
  std::string cifar_dir;
  int num_classes = 2;
  int train_per_class = 400;
  int test_per_class = 200;
  int resolution = 8;
  /// Keep only the first N test examples (0 keeps all).
  int test_limit = 0;
  SyntheticStyle style;
};

struct SpectrumConfig {
  std::vector<int> epsilons = {0, 2, 4, 8};
  TrainConfig train;  // epsilon_int and seed are filled per job
  SeedPolicy seed_policy = SeedPolicy::derived;
};

struct EvalConfig {
  std::vector<int> deltas = {1, 2, 4, 8};
  int steps = 20;
  bool random_start = true;
  bool clamp_to_pixel_range = true;
  Index batch_size = 100;
};

struct QuantSweepConfig {
  std::vector<std::string> taps;  // empty: every tap point of the model
  std::vector<double> betas = {4.0, 6.0, 8.0, 10.0, 12.0};
  std::vector<int> deltas = {0, 2, 4, 8};
  std::vector<AttackKind> attack_kinds = {AttackKind::bpda, AttackKind::transfer};
  int steps = 20;
};

struct AnalysisConfig {
  std::string preact_tap;  // empty: the network's pre-final-activation tap
  std::vector<CorruptionKind> corruptions = {CorruptionKind::gaussian_noise, CorruptionKind::impulse_noise,
                                             CorruptionKind::brightness, CorruptionKind::contrast,
                                             CorruptionKind::pixelate};
  std::vector<int> severities = {1, 2, 3, 4, 5};
};

/// Fully resolved experiment configuration. Sections mirror the modules:
/// data, model_zoo, train_spectrum, attacks, quant_defense, analysis.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ModelSpec model;
  SpectrumConfig spectrum;
  EvalConfig eval;
  QuantSweepConfig quant;
  AnalysisConfig analysis;

  /// Every field, defaults included. Key order is stable.
  nlohmann::json to_json() const;
  /// SHA-256 of to_json().dump().
  std::string fingerprint() const;
};

/// Parses a (possibly partial) config; absent keys take defaults, unknown
/// keys are rejected with their JSON path, e.g. "/train_spectrum/epoch".
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace psl
