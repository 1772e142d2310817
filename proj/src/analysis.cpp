#include "psl/analysis.hpp"

#include "psl/attacks.hpp"
#include "psl/parallel.hpp"
#include "psl/random.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace psl {

std::string FilterNormReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "layer,count,mean_linf,max_linf\n";
  for (const auto& l : layers) os << l.layer << ',' << l.filter_count << ',' << l.mean_linf << ',' << l.max_linf << '\n';
  return os.str();
}

FilterNormReport filter_norms(const Network& net) {
  FilterNormReport report;
  for (const std::string& name : net.conv_kernels()) {
    const Tensor& k = net.param(name);
    const Index filters = k.dim(0) * k.dim(1);
    LayerFilterNorms layer{name.substr(0, name.rfind(".weight")), filters, 0.0, 0.0};
    double total = 0.0;
    for (Index f = 0; f < filters; ++f) {
      const double norm = k.data().segment(f * 9, 9).cwiseAbs().maxCoeff();
      total += norm;
      layer.max_linf = std::max(layer.max_linf, norm);
    }
    layer.mean_linf = filters == 0 ? 0.0 : total / static_cast<double>(filters);
    report.layers.push_back(layer);
  }
  if (report.layers.empty()) throw std::invalid_argument("filter_norms: network has no conv layers");
  return report;
}

PreActStats preact_mean(const Network& net, const Tensor& images, const std::string& tap, Index batch_size) {
  const std::string feature = tap.ends_with(".preact") ? tap : tap + ".preact";
  const auto points = net.tap_points();
  const std::string block = feature.substr(0, feature.size() - std::string(".preact").size());
  if (std::find(points.begin(), points.end(), block) == points.end()) {
    throw std::invalid_argument("preact_mean: unknown tap '" + tap + "'");
  }
  if (batch_size < 1) throw std::invalid_argument("preact_mean: batch size must be positive");
  const Index n = images.rank() == 0 ? 0 : images.dim(0);
  double total = 0.0;
  double compensation = 0.0;
  Index count = 0;
  for (Index begin = 0; begin < n; begin += batch_size) {
    Graph graph;
    const ForwardResult out = forward(graph, net, graph.constant(images.slice(begin, std::min(n, begin + batch_size))));
    const Vector& values = out.features.at(feature).value().data();
    for (Index i = 0; i < values.size(); ++i) {
      const double t = total + values[i];
      compensation += std::abs(total) >= std::abs(values[i]) ? (total - t) + values[i] : (values[i] - t) + total;
      total = t;
    }
    count += values.size();
  }
  return PreActStats{feature, count == 0 ? 0.0 : (total + compensation) / static_cast<double>(count), count};
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::impulse_noise: return "impulse_noise";
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::pixelate: return "pixelate";
  }
  return "gaussian_noise";
}

CorruptionKind parse_corruption_kind(const std::string& name) {
  for (auto kind : {CorruptionKind::gaussian_noise, CorruptionKind::impulse_noise, CorruptionKind::brightness,
                    CorruptionKind::contrast, CorruptionKind::pixelate}) {
    if (to_string(kind) == name) return kind;
  }
  throw std::invalid_argument("unknown corruption kind '" + name + "'");
}

double CorruptionSpec::parameter() const {
  static constexpr std::array<double, 6> kGaussian = {0.0, 0.04, 0.08, 0.12, 0.16, 0.20};
  static constexpr std::array<double, 6> kImpulse = {0.0, 0.01, 0.02, 0.04, 0.06, 0.08};
  static constexpr std::array<double, 6> kBrightness = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  static constexpr std::array<double, 6> kContrast = {1.0, 0.8, 0.6, 0.4, 0.3, 0.2};
  static constexpr std::array<double, 6> kPixelate = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
  if (severity < 0 || severity > kMaxSeverity) {
    throw std::invalid_argument("corruption severity " + std::to_string(severity) + " outside 0..5");
  }
  const auto s = static_cast<std::size_t>(severity);
  switch (kind) {
    case CorruptionKind::gaussian_noise: return kGaussian[s];
    case CorruptionKind::impulse_noise: return kImpulse[s];
    case CorruptionKind::brightness: return kBrightness[s];
    case CorruptionKind::contrast: return kContrast[s];
    case CorruptionKind::pixelate: return kPixelate[s];
  }
  throw std::invalid_argument("unknown corruption kind");
}

std::string CorruptionSpec::label() const { return to_string(kind) + "-" + std::to_string(severity); }

Tensor corrupt(const Tensor& batch, const CorruptionSpec& spec) {
  const double p = spec.parameter();
  if (batch.rank() != 4) throw std::invalid_argument("corrupt: expected N x C x H x W, got " + shape_string(batch.shape()));
  if (batch.size() > 0 && (batch.data().minCoeff() < 0.0 || batch.data().maxCoeff() > 1.0)) {
    throw std::invalid_argument("corrupt: input pixels must lie in [0, 1]");
  }
  Tensor out(batch.shape(), batch.data());
  if (spec.severity == 0) return out;

  Rng rng(spec.seed);
  const Index n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const Index image = c * h * w;
  switch (spec.kind) {
    case CorruptionKind::gaussian_noise:
      for (Index i = 0; i < out.size(); ++i) out[i] += p * rng.normal();
      break;
    case CorruptionKind::impulse_noise:
      for (Index i = 0; i < out.size(); ++i) {
        const double u = rng.uniform();
        if (u < p / 2) {
          out[i] = 0.0;
        } else if (u < p) {
          out[i] = 1.0;
        }
      }
      break;
    case CorruptionKind::brightness: out.data().array() += p; break;
    case CorruptionKind::contrast:
      for (Index i = 0; i < n; ++i) {
        auto seg = out.data().segment(i * image, image);
        const double mean = seg.mean();
        seg = ((seg.array() - mean) * p + mean).matrix();
      }
      break;
    case CorruptionKind::pixelate: {
      const auto block = static_cast<Index>(p);
      for (Index plane = 0; plane < n * c; ++plane) {
        MatrixMap img(out.data().data() + plane * h * w, h, w);
        for (Index y = 0; y < h; y += block) {
          for (Index x = 0; x < w; x += block) {
            const Index bh = std::min(block, h - y), bw = std::min(block, w - x);
            img.block(y, x, bh, bw).setConstant(img.block(y, x, bh, bw).mean());
          }
        }
      }
      break;
    }
  }
  out.data() = out.data().cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

CorruptionTable corruption_eval(const std::vector<Checkpoint>& checkpoints, const std::vector<CorruptionSpec>& specs,
                                const DatasetHandle& data, Index batch_size, std::size_t jobs) {
  if (checkpoints.empty() || specs.empty()) throw std::invalid_argument("corruption_eval: empty inputs");
  if (data.size() == 0) throw std::invalid_argument("corruption_eval: empty dataset");
  CorruptionTable table;
  for (const auto& ck : checkpoints) table.model_epsilons.push_back(ck.metadata.epsilon_int);
  table.specs = specs;
  const auto m = static_cast<Eigen::Index>(checkpoints.size());
  const auto s = static_cast<Eigen::Index>(specs.size());
  table.accuracy.resize(m, s);

  std::vector<Tensor> corrupted(specs.size());
  parallel_for(specs.size(), jobs, [&](std::size_t j) { corrupted[j] = corrupt(data.images, specs[j]); });
  parallel_for(static_cast<std::size_t>(m * s), jobs, [&](std::size_t cell) {
    const auto i = static_cast<Eigen::Index>(cell) / s;
    const auto j = static_cast<Eigen::Index>(cell) % s;
    table.accuracy(i, j) = evaluate_accuracy(checkpoints[static_cast<std::size_t>(i)].network, {},
                                             corrupted[static_cast<std::size_t>(j)], data.labels, AttackKind::none,
                                             AttackConfig{.epsilon_int = 0}, batch_size);
  });
  table.average = table.accuracy.rowwise().mean();
  return table;
}

}  // namespace psl
