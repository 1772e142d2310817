#pragma once

#include "psl/autodiff.hpp"
#include "psl/model.hpp"
#include "psl/random.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

namespace psl::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// He-initialized network whose affine parameters are also perturbed, so no
/// parameter sits at an exactly symmetric value.
inline Network random_network(Arch arch, Activation act, std::uint64_t seed, Index classes = 3, Index channels = 3,
                              Index width = 4) {
  Network net = build(arch, classes, act, seed, {.input_channels = channels, .width = width});
  Rng rng(derive_seed(seed, "perturb"));
  for (auto& [name, p] : net.params()) {
    for (Index i = 0; i < p.size(); ++i) p[i] += 0.1 * rng.normal();
  }
  return net;
}

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Largest relative error between the autodiff gradient stored in `target`
/// and central differences of `loss` with step h.
inline double max_fd_error(Tensor& target, const std::function<double()>& loss, double h = 1e-5) {
  double worst = 0.0;
  for (Index i = 0; i < target.size(); ++i) {
    const double original = target[i];
    target[i] = original + h;
    const double up = loss();
    target[i] = original - h;
    const double down = loss();
    target[i] = original;
    worst = std::max(worst, relative_error((up - down) / (2.0 * h), target.grad()[i]));
  }
  return worst;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("psl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace psl::testing
