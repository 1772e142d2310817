#include "psl/train.hpp"

#include "psl/parallel.hpp"
#include "psl/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

namespace psl {

double LrSchedule::rate_at(int epoch) const {
  double rate = initial;
  for (int boundary : decay_epochs) {
    if (epoch >= boundary) rate *= decay_factor;
  }
  return rate;
}

AttackConfig TrainConfig::inner_attack() const {
  AttackConfig inner = pgd;
  inner.epsilon_int = epsilon_int;
  return inner;
}

void TrainConfig::validate() const {
  if (epsilon_int < 0) throw std::invalid_argument("training epsilon must be nonnegative");
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (!(lr.initial > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (momentum < 0.0 || weight_decay < 0.0) throw std::invalid_argument("momentum and weight decay must be nonnegative");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("validation fraction must be in [0, 1)");
  }
  inner_attack().validate();
}

void SgdMomentum::step(Network& net, double learning_rate) {
  for (auto& [name, p] : net.params()) {
    if (!p.has_grad()) continue;
    Vector g = p.grad() + weight_decay_ * p.data();
    auto [it, fresh] = velocity_.try_emplace(name, Vector::Zero(p.size()));
    Vector& v = it->second;
    v = momentum_ * v + g;
    p.data() -= learning_rate * v;
  }
}

double accumulate_gradients(Network& net, const Tensor& batch, std::span<const int> labels) {
  Graph graph;
  Var loss = softmax_cross_entropy(forward_trainable(graph, net, graph.constant(batch), {}).logits, labels);
  const double value = loss.value()[0];
  graph.backward(loss);
  return value;
}

namespace {

struct ValidationScore {
  double clean_error;
  double robust_error;
};

ValidationScore score_validation(const Network& net, const DatasetHandle& val, const TrainConfig& cfg) {
  if (val.size() == 0) return {0.0, 0.0};
  AttackConfig attack = cfg.inner_attack();
  attack.seed = derive_seed(cfg.seed, "validation");
  const double clean = evaluate_accuracy(net, {}, val.images, val.labels, AttackKind::none, attack, cfg.batch_size);
  const double robust = evaluate_accuracy(net, {}, val.images, val.labels, AttackKind::pgd, attack, cfg.batch_size);
  return {100.0 - clean, 100.0 - robust};
}

}  // namespace

TrainResult adversarial_train(Network net, const DatasetHandle& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("adversarial_train: dataset is empty");
  const SplitPair split = split_validation(data, cfg.validation_fraction, derive_seed(cfg.seed, "validation-split"));
  const DatasetHandle& train = split.train;
  if (train.size() == 0) throw std::invalid_argument("adversarial_train: no training examples after the validation split");

  for (auto& [name, p] : net.params()) p.set_requires_grad(true);
  SgdMomentum optimizer(cfg.momentum, cfg.weight_decay);
  const AttackConfig inner = cfg.inner_attack();

  TrainResult result{net, 0, {}};
  double best = std::numeric_limits<double>::infinity();
  long step_index = 0;
  const Index n = train.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr.rate_at(epoch);
    Rng shuffle(derive_seed(cfg.seed, "epoch=" + std::to_string(epoch)));
    const auto order = shuffle.permutation(static_cast<std::size_t>(n));
    double loss_sum = 0.0;
    Index batches = 0;
    for (Index begin = 0; begin < n; begin += cfg.batch_size, ++batches, ++step_index) {
      const Index end = std::min(n, begin + cfg.batch_size);
      const DatasetHandle batch = subset(train, std::vector<std::size_t>(order.begin() + begin, order.begin() + end));

      AttackConfig attack = inner;
      attack.seed = derive_seed(cfg.seed, "epoch=" + std::to_string(epoch) + "/batch=" + std::to_string(batches));
      const Tensor adversarial = pgd(net, {}, batch.images, batch.labels, attack).adversarial_batch;

      net.zero_grad();
      const double loss = accumulate_gradients(net, adversarial, batch.labels);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step_index) +
                                 " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches) + ")");
      }
      optimizer.step(net, lr);
      loss_sum += loss;
    }
    net.zero_grad();

    const ValidationScore score = score_validation(net, split.validation, cfg);
    result.history.push_back(EpochMetrics{epoch, lr, loss_sum / static_cast<double>(batches), score.clean_error,
                                          score.robust_error});
    if (score.robust_error <= best) {
      best = score.robust_error;
      result.best_epoch = epoch;
      result.network = net;
    }
  }
  for (auto& [name, p] : result.network.params()) p.set_requires_grad(false);
  return result;
}

std::uint64_t job_seed(std::uint64_t base_seed, int epsilon_int, SeedPolicy policy) {
  return policy == SeedPolicy::shared ? base_seed : derive_seed(base_seed, "eps=" + std::to_string(epsilon_int));
}

std::vector<Checkpoint> train_spectrum(const DatasetHandle& data, const ModelSpec& spec,
                                       const std::vector<int>& epsilons, const TrainConfig& base_cfg,
                                       SeedPolicy policy, std::size_t jobs) {
  if (epsilons.empty()) throw std::invalid_argument("train_spectrum: no epsilons");
  for (std::size_t i = 1; i < epsilons.size(); ++i) {
    if (epsilons[i] <= epsilons[i - 1]) throw std::invalid_argument("train_spectrum: epsilons must be strictly increasing");
  }
  std::vector<std::optional<Checkpoint>> slots(epsilons.size());
  parallel_for(epsilons.size(), jobs, [&](std::size_t i) {
    TrainConfig cfg = base_cfg;
    cfg.epsilon_int = epsilons[i];
    cfg.seed = job_seed(base_cfg.seed, epsilons[i], policy);
    TrainResult trained = adversarial_train(build(spec, derive_seed(cfg.seed, "init")), data, cfg);
    nlohmann::json history = nlohmann::json::array();
    for (const EpochMetrics& m : trained.history) {
      history.push_back({{"epoch", m.epoch},
                         {"learning_rate", m.learning_rate},
                         {"train_loss", m.train_loss},
                         {"validation_clean_error", m.validation_clean_error},
                         {"validation_robust_error", m.validation_robust_error}});
    }
    TrainingMetadata meta{epsilons[i], trained.best_epoch, cfg.seed, kSelectionCriterion,
                          {{"history", std::move(history)}, {"epochs", cfg.epochs}}};
    slots[i].emplace(Checkpoint{std::move(trained.network), std::move(meta)});
  });
  std::vector<Checkpoint> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

void RobustnessGrid::validate() const {
  const auto m = static_cast<Eigen::Index>(model_epsilons.size());
  const auto d = static_cast<Eigen::Index>(attack_deltas.size());
  if (errors.rows() != m || errors.cols() != d || clean_errors.size() != m) {
    throw std::invalid_argument("robustness grid dimensions do not match its index lists");
  }
  if (m > 0 && d > 0 && (errors.minCoeff() < 0.0 || errors.maxCoeff() > 100.0)) {
    throw std::invalid_argument("robustness grid errors must lie in [0, 100]");
  }
}

Eigen::Index RobustnessGrid::column_of(int delta) const {
  auto it = std::find(attack_deltas.begin(), attack_deltas.end(), delta);
  if (it == attack_deltas.end()) throw std::invalid_argument("delta " + std::to_string(delta) + " is not in the grid");
  return it - attack_deltas.begin();
}

RobustnessGrid eval_grid(const std::vector<Checkpoint>& checkpoints, const std::vector<int>& deltas,
                         const DatasetHandle& test, const GridConfig& cfg, std::size_t jobs) {
  if (checkpoints.empty()) throw std::invalid_argument("eval_grid: no checkpoints");
  if (deltas.empty()) throw std::invalid_argument("eval_grid: no deltas");
  RobustnessGrid grid;
  for (const auto& c : checkpoints) grid.model_epsilons.push_back(c.metadata.epsilon_int);
  grid.attack_deltas = deltas;
  const auto m = static_cast<Eigen::Index>(checkpoints.size());
  const auto d = static_cast<Eigen::Index>(deltas.size());
  grid.errors.resize(m, d);
  grid.clean_errors.resize(m);

  parallel_for(static_cast<std::size_t>(m * (d + 1)), jobs, [&](std::size_t cell) {
    const auto i = static_cast<Eigen::Index>(cell) / (d + 1);
    const auto j = static_cast<Eigen::Index>(cell) % (d + 1) - 1;
    const Network& net = checkpoints[static_cast<std::size_t>(i)].network;
    AttackConfig attack{.epsilon_int = j < 0 ? 0 : deltas[static_cast<std::size_t>(j)],
                        .steps = cfg.attack_steps,
                        .random_start = cfg.random_start,
                        .clamp_to_pixel_range = cfg.clamp_to_pixel_range};
    attack.seed = derive_seed(cfg.seed, "delta=" + std::to_string(attack.epsilon_int));
    const AttackKind kind = j < 0 ? AttackKind::none : AttackKind::pgd;
    const double error = 100.0 - evaluate_accuracy(net, {}, test.images, test.labels, kind, attack, cfg.batch_size);
    if (j < 0) {
      grid.clean_errors[i] = error;
    } else {
      grid.errors(i, j) = error;
    }
  });
  return grid;
}

std::string to_string(SelectionMode mode) { return mode == SelectionMode::grid_argmin ? "grid_argmin" : "early_stop"; }

OverdesignChoice select_overdesign(const RobustnessGrid& grid, int delta, SelectionMode mode) {
  grid.validate();
  const Eigen::Index col = grid.column_of(delta);
  if (grid.errors.rows() == 0) throw std::invalid_argument("select_overdesign: empty error row");
  const Eigen::VectorXd row = grid.errors.col(col);
  OverdesignChoice choice{delta, 0, mode};
  if (mode == SelectionMode::grid_argmin) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < row.size(); ++i) {
      if (row[i] < row[best] || (row[i] == row[best] && grid.model_epsilons[i] < grid.model_epsilons[best])) best = i;
    }
    choice.epsilon_star = grid.model_epsilons[static_cast<std::size_t>(best)];
    return choice;
  }
  // Walk upward in epsilon order, independent of column ordering in the grid.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(row.size()));
  for (Eigen::Index i = 0; i < row.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(),
            [&](auto a, auto b) { return grid.model_epsilons[a] < grid.model_epsilons[b]; });
  auto start = std::find_if(order.begin(), order.end(), [&](auto i) { return grid.model_epsilons[i] > delta; });
  if (start == order.end()) {
    throw std::invalid_argument("select_overdesign: no model epsilon exceeds delta " + std::to_string(delta));
  }
  Eigen::Index current = *start;
  for (auto it = start + 1; it != order.end() && row[*it] <= row[current]; ++it) current = *it;
  choice.epsilon_star = grid.model_epsilons[static_cast<std::size_t>(current)];
  return choice;
}

}  // namespace psl
