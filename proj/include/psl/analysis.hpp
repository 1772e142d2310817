#pragma once

#include "psl/data.hpp"
#include "psl/model.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace psl {

struct LayerFilterNorms {
  std::string layer;
  Index filter_count = 0;
  double mean_linf = 0.0;  // mean over 3x3 kernel slices of max |w|
  double max_linf = 0.0;
};

struct FilterNormReport {
  std::vector<LayerFilterNorms> layers;

  /// Header "layer,count,mean_linf,max_linf", one row per layer.
  std::string to_csv() const;
};

/// Per conv layer, in declaration order. A filter is one Cout x Cin slice
/// of the kernel (nine weights); its norm is the largest absolute weight.
FilterNormReport filter_norms(const Network& net);

struct PreActStats {
  std::string tap;
  double mean = 0.0;
  Index count = 0;
};

/// Mean of every element of the pre-activation feature of `tap` over the
/// dataset. `tap` is a tap point (its "<tap>.preact" feature is used) or a
/// ".preact" name directly. Uses Neumaier summation.
PreActStats preact_mean(const Network& net, const Tensor& images, const std::string& tap, Index batch_size = 100);

enum class CorruptionKind { gaussian_noise, impulse_noise, brightness, contrast, pixelate };

std::string to_string(CorruptionKind kind);
CorruptionKind parse_corruption_kind(const std::string& name);

/// Severity 0 is the identity for every kind; 1..5 index the tables below.
///   gaussian_noise  sigma         0.04 0.08 0.12 0.16 0.20
///   impulse_noise   probability   0.01 0.02 0.04 0.06 0.08  (half to 0, half to 1)
///   brightness      added         0.10 0.20 0.30 0.40 0.50
///   contrast        factor        0.80 0.60 0.40 0.30 0.20  (around the per-image mean)
///   pixelate        block size    2    3    4    5    6     (block means, edge blocks partial)
struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 1;
  std::uint64_t seed = 0;

  double parameter() const;
  std::string label() const;
};

inline constexpr int kMaxSeverity = 5;

/// Applies the corruption and clips to [0, 1]. Deterministic per seed.
Tensor corrupt(const Tensor& batch, const CorruptionSpec& spec);

/// accuracy(i, j): model i on data corrupted by spec j, in percent.
struct CorruptionTable {
  std::vector<int> model_epsilons;
  std::vector<CorruptionSpec> specs;
  Eigen::MatrixXd accuracy;
  Eigen::VectorXd average;  // per model, over specs
};

CorruptionTable corruption_eval(const std::vector<Checkpoint>& checkpoints, const std::vector<CorruptionSpec>& specs,
                                const DatasetHandle& data, Index batch_size = 100, std::size_t jobs = 1);

}  // namespace psl
