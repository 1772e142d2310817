#pragma once

#include "psl/model.hpp"

#include <array>
#include <string>

namespace psl {

inline constexpr double kDefaultBeta = 8.0;
inline constexpr std::array<double, 5> kBetaSweep = {4.0, 6.0, 8.0, 10.0, 12.0};

/// Scaled floor quantization of one named block's output.
struct QuantTap {
  double beta = kDefaultBeta;
  std::string tap_point;
  BackwardMode backward_mode = BackwardMode::identity;
};

/// Elementwise floor(beta * x) / beta. Throws for beta <= 0.
Tensor quantize(const Tensor& x, double beta);

/// Graph transform: quantizes on the forward pass, identity on the backward pass.
FeatureTransform quantize_transform(double beta);

/// Single-entry tap map for `tap_point`. Unknown tap points are reported by forward.
TapMap as_tap(double beta, const std::string& tap_point);
TapMap as_tap(const QuantTap& tap);

}  // namespace psl
