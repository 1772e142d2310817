#include "psl/quant.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace psl {

namespace {

void check_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    std::ostringstream os;
    os << "quantization beta must be positive and finite, got " << beta;
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

Tensor quantize(const Tensor& x, double beta) {
  check_beta(beta);
  Tensor out(x.shape());
  out.data() = x.data().unaryExpr([beta](double v) { return std::floor(beta * v) / beta; });
  return out;
}

FeatureTransform quantize_transform(double beta) {
  check_beta(beta);
  std::ostringstream label;
  label << "quant(beta=" << beta << ")";
  return FeatureTransform{label.str(), BackwardMode::identity, [beta](Var v) { return floor_scale(v, beta); }};
}

TapMap as_tap(double beta, const std::string& tap_point) { return TapMap{{tap_point, quantize_transform(beta)}}; }

TapMap as_tap(const QuantTap& tap) {
  if (tap.backward_mode != BackwardMode::identity) {
    throw std::invalid_argument("quantization taps only support the identity backward approximation");
  }
  return as_tap(tap.beta, tap.tap_point);
}

}  // namespace psl
