#include "psl/attacks.hpp"

#include "psl/random.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace psl {

double default_step_size(int epsilon_int) { return (epsilon_int / 8.0) * (2.0 / 255.0); }

void AttackConfig::validate() const {
  if (epsilon_int < 0) throw std::invalid_argument("attack epsilon must be nonnegative, got " + std::to_string(epsilon_int));
  if (steps < 1) throw std::invalid_argument("attack steps must be at least 1, got " + std::to_string(steps));
  if (alpha && !(*alpha >= 0.0)) throw std::invalid_argument("attack step size must be nonnegative");
}

double AttackResult::accuracy() const {
  if (success_mask.empty()) return 0.0;
  const auto correct = std::count(success_mask.begin(), success_mask.end(), false);
  return 100.0 * static_cast<double>(correct) / static_cast<double>(success_mask.size());
}

Tensor project(const Tensor& candidate, const Tensor& origin, double radius, bool clamp_to_pixel_range) {
  if (candidate.shape() != origin.shape()) {
    throw std::invalid_argument("project: candidate " + shape_string(candidate.shape()) + " vs origin " +
                                shape_string(origin.shape()));
  }
  Tensor out(candidate.shape());
  for (Index i = 0; i < out.size(); ++i) {
    double v = std::clamp(candidate[i], origin[i] - radius, origin[i] + radius);
    if (clamp_to_pixel_range) v = std::clamp(v, 0.0, 1.0);
    out[i] = v;
  }
  return out;
}

std::vector<double> linf_distances(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() == 0) throw std::invalid_argument("linf_distances: shape mismatch");
  const Index n = a.dim(0);
  const Index row = n == 0 ? 0 : a.size() / n;
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] =
        row == 0 ? 0.0 : (a.data().segment(i * row, row) - b.data().segment(i * row, row)).cwiseAbs().maxCoeff();
  }
  return out;
}

namespace {

void check_labels(const Network& net, const Tensor& batch, std::span<const int> labels) {
  if (batch.rank() == 0 || static_cast<Index>(labels.size()) != batch.dim(0)) {
    throw std::invalid_argument("attack: " + std::to_string(labels.size()) + " labels for batch " +
                                shape_string(batch.shape()));
  }
  for (int y : labels) {
    if (y < 0 || y >= net.num_classes()) throw std::invalid_argument("attack: label " + std::to_string(y) + " out of range");
  }
}

struct LossAndGrad {
  double loss;
  Tensor grad;
};

LossAndGrad loss_and_input_grad(const Network& net, const TapMap& taps, const Tensor& x, std::span<const int> labels) {
  Tensor input(x.shape(), x.data());
  input.set_requires_grad(true);
  Graph graph;
  Var in = graph.leaf(input);
  Var loss = softmax_cross_entropy(forward(graph, net, in, taps).logits, labels);
  const double value = loss.value()[0];
  graph.backward(loss);
  return {value, Tensor(x.shape(), input.grad())};
}

std::vector<bool> misclassified(const Network& net, const TapMap& taps, const Tensor& x, std::span<const int> labels) {
  const auto pred = argmax_rows(predict_logits(net, x, taps));
  std::vector<bool> mask(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) mask[i] = pred[i] != labels[i];
  return mask;
}

}  // namespace

double mean_loss(const Network& net, const TapMap& taps, const Tensor& batch, std::span<const int> labels) {
  Graph graph;
  return softmax_cross_entropy(forward(graph, net, graph.constant(batch), taps).logits, labels).value()[0];
}

AttackResult pgd(const Network& net, const TapMap& taps, const Tensor& batch, std::span<const int> labels,
                 const AttackConfig& cfg) {
  cfg.validate();
  check_labels(net, batch, labels);
  const double radius = cfg.radius();
  AttackResult result;

  if (cfg.epsilon_int == 0) {
    result.adversarial_batch = Tensor(batch.shape(), batch.data());
    result.loss_trace.assign(static_cast<std::size_t>(cfg.steps) + 1, mean_loss(net, taps, batch, labels));
  } else {
    Tensor x = Tensor(batch.shape(), batch.data());
    if (cfg.random_start) {
      Rng rng(cfg.seed);
      for (Index i = 0; i < x.size(); ++i) x[i] += rng.uniform(-radius, radius);
      x = project(x, batch, radius, cfg.clamp_to_pixel_range);
    }
    const double alpha = cfg.step_size();
    result.loss_trace.reserve(static_cast<std::size_t>(cfg.steps) + 1);
    for (int step = 0; step < cfg.steps; ++step) {
      LossAndGrad lg = loss_and_input_grad(net, taps, x, labels);
      result.loss_trace.push_back(lg.loss);
      const Tensor direction = sign(lg.grad);
      Tensor candidate(x.shape(), x.data() + alpha * direction.data());
      x = project(candidate, batch, radius, cfg.clamp_to_pixel_range);
    }
    result.loss_trace.push_back(mean_loss(net, taps, x, labels));
    result.adversarial_batch = std::move(x);
  }
  result.linf_distances = linf_distances(result.adversarial_batch, batch);
  result.success_mask = misclassified(net, taps, result.adversarial_batch, labels);
  return result;
}

AttackResult bpda_pgd(const Network& net, const TapMap& defense_taps, const Tensor& batch,
                      std::span<const int> labels, const AttackConfig& cfg) {
  for (const auto& [name, transform] : defense_taps) {
    if (transform.backward != BackwardMode::identity && transform.label != "identity") {
      throw std::invalid_argument("bpda: tap '" + name + "' (" + transform.label +
                                  ") does not declare an identity backward approximation");
    }
  }
  return pgd(net, defense_taps, batch, labels, cfg);
}

AttackResult transfer_pgd(const Network& base_net, const TapMap& defended_taps, const Tensor& batch,
                          std::span<const int> labels, const AttackConfig& cfg) {
  AttackResult result = pgd(base_net, TapMap{}, batch, labels, cfg);
  result.success_mask = misclassified(base_net, defended_taps, result.adversarial_batch, labels);
  return result;
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::none: return "none";
    case AttackKind::pgd: return "pgd";
    case AttackKind::bpda: return "bpda";
    case AttackKind::transfer: return "transfer";
  }
  return "none";
}

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "none" || name == "clean") return AttackKind::none;
  if (name == "pgd") return AttackKind::pgd;
  if (name == "bpda") return AttackKind::bpda;
  if (name == "transfer") return AttackKind::transfer;
  throw std::invalid_argument("unknown attack kind '" + name + "'");
}

double evaluate_accuracy(const Network& net, const TapMap& taps, const Tensor& images, std::span<const int> labels,
                         AttackKind kind, const AttackConfig& cfg, Index batch_size) {
  if (batch_size < 1) throw std::invalid_argument("evaluate_accuracy: batch size must be positive");
  const Index n = images.rank() == 0 ? 0 : images.dim(0);
  if (n == 0) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  if (static_cast<Index>(labels.size()) != n) throw std::invalid_argument("evaluate_accuracy: label count mismatch");
  Index correct = 0;
  Index batch_index = 0;
  for (Index begin = 0; begin < n; begin += batch_size, ++batch_index) {
    const Index end = std::min(n, begin + batch_size);
    const Tensor x = images.slice(begin, end);
    const auto y = labels.subspan(static_cast<std::size_t>(begin), static_cast<std::size_t>(end - begin));
    std::vector<bool> wrong;
    if (kind == AttackKind::none || cfg.epsilon_int == 0) {
      wrong = misclassified(net, taps, x, y);
    } else {
      AttackConfig batch_cfg = cfg;
      batch_cfg.seed = derive_seed(cfg.seed, "batch=" + std::to_string(batch_index));
      switch (kind) {
        case AttackKind::pgd: wrong = pgd(net, taps, x, y, batch_cfg).success_mask; break;
        case AttackKind::bpda: wrong = bpda_pgd(net, taps, x, y, batch_cfg).success_mask; break;
        case AttackKind::transfer: wrong = transfer_pgd(net, taps, x, y, batch_cfg).success_mask; break;
        case AttackKind::none: break;
      }
    }
    correct += std::count(wrong.begin(), wrong.end(), false);
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

std::vector<Tensor> craft_adversarial_batches(const Network& net, const TapMap& taps, const Tensor& images,
                                              std::span<const int> labels, const AttackConfig& cfg,
                                              Index batch_size) {
  if (batch_size < 1) throw std::invalid_argument("craft_adversarial_batches: batch size must be positive");
  const Index n = images.rank() == 0 ? 0 : images.dim(0);
  if (static_cast<Index>(labels.size()) != n) {
    throw std::invalid_argument("craft_adversarial_batches: label count mismatch");
  }
  std::vector<Tensor> batches;
  Index batch_index = 0;
  for (Index begin = 0; begin < n; begin += batch_size, ++batch_index) {
    const Index end = std::min(n, begin + batch_size);
    Tensor x = images.slice(begin, end);
    if (cfg.epsilon_int == 0) {
      batches.push_back(std::move(x));
      continue;
    }
    const auto y = labels.subspan(static_cast<std::size_t>(begin), static_cast<std::size_t>(end - begin));
    AttackConfig batch_cfg = cfg;
    batch_cfg.seed = derive_seed(cfg.seed, "batch=" + std::to_string(batch_index));
    batches.push_back(pgd(net, taps, x, y, batch_cfg).adversarial_batch);
  }
  return batches;
}

double accuracy_on_batches(const Network& net, const TapMap& taps, const std::vector<Tensor>& batches,
                           std::span<const int> labels) {
  Index correct = 0;
  std::size_t offset = 0;
  for (const Tensor& x : batches) {
    const auto rows = static_cast<std::size_t>(x.dim(0));
    if (offset + rows > labels.size()) throw std::invalid_argument("accuracy_on_batches: label count mismatch");
    const auto wrong = misclassified(net, taps, x, labels.subspan(offset, rows));
    correct += std::count(wrong.begin(), wrong.end(), false);
    offset += rows;
  }
  if (offset != labels.size() || offset == 0) throw std::invalid_argument("accuracy_on_batches: label count mismatch");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(offset);
}

}  // namespace psl
