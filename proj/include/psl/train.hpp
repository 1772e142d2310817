#pragma once

#include "psl/attacks.hpp"
#include "psl/data.hpp"
#include "psl/model.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace psl {

/// Step decay: initial * factor^(number of decay epochs <= epoch), epochs counted from 0.
struct LrSchedule {
  double initial = 0.05;
  std::vector<int> decay_epochs = {10, 13};
  double decay_factor = 0.1;

  double rate_at(int epoch) const;
};

struct TrainConfig {
  int epsilon_int = 0;
  int epochs = 15;
  Index batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  LrSchedule lr;
  /// Inner maximization. Its epsilon is overwritten by epsilon_int; alpha
  /// follows the default rule unless set.
  AttackConfig pgd{.epsilon_int = 0, .steps = 7};
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;

  AttackConfig inner_attack() const;
  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double validation_clean_error = 0.0;
  double validation_robust_error = 0.0;
};

struct TrainResult {
  /// Parameters from the best-validation epoch.
  Network network;
  int best_epoch = 0;
  std::vector<EpochMetrics> history;
};

inline constexpr const char* kSelectionCriterion =
    "min robust validation error at the training epsilon, ties to the later epoch";

/// SGD with momentum and L2 weight decay:
///   g = grad + weight_decay * p;  v = momentum * v + g;  p -= lr * v.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  /// Applies one step to every parameter that has a gradient.
  void step(Network& net, double learning_rate);

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, Vector> velocity_;
};

/// Cross-entropy of one batch with gradients accumulated into net's parameters.
double accumulate_gradients(Network& net, const Tensor& batch, std::span<const int> labels);

/// Min-max training: each batch is replaced by its inner PGD attack, then
/// one SGD step is taken on the adversarial cross-entropy.
///
/// A seeded `validation_fraction` of `data` is held out and scored after
/// every epoch; the best epoch's parameters are returned. Batch order for
/// epoch e is Rng(derive_seed(seed, "epoch=<e>")).permutation(n); the inner
/// attack of batch b uses derive_seed(seed, "epoch=<e>/batch=<b>").
/// Throws std::runtime_error naming the step if the loss is not finite.
TrainResult adversarial_train(Network net, const DatasetHandle& data, const TrainConfig& cfg);

enum class SeedPolicy {
  derived,  // job seed = derive_seed(base seed, "eps=<epsilon>")
  shared,   // every job uses the base seed
};

std::uint64_t job_seed(std::uint64_t base_seed, int epsilon_int, SeedPolicy policy);

/// One checkpoint per epsilon, each trained from build(spec, derive_seed(job seed, "init")).
std::vector<Checkpoint> train_spectrum(const DatasetHandle& data, const ModelSpec& spec,
                                       const std::vector<int>& epsilons, const TrainConfig& base_cfg,
                                       SeedPolicy policy, std::size_t jobs = 1);

/// Robust error (100 - accuracy) of model i under PGD_{delta_j}-N.
struct RobustnessGrid {
  std::vector<int> model_epsilons;
  std::vector<int> attack_deltas;
  Eigen::MatrixXd errors;
  Eigen::VectorXd clean_errors;

  void validate() const;
  /// Column index of `delta`; throws if absent.
  Eigen::Index column_of(int delta) const;
};

struct GridConfig {
  int attack_steps = 20;
  bool random_start = true;
  bool clamp_to_pixel_range = true;
  std::uint64_t seed = 0;
  Index batch_size = 100;
};

/// errors(i, j) is model i under PGD_{delta_j}-N with the default step size.
/// Column j is one error-vs-epsilon curve. Cells for delta d use seed
/// derive_seed(seed, "delta=<d>") so every model faces the same draws.
RobustnessGrid eval_grid(const std::vector<Checkpoint>& checkpoints, const std::vector<int>& deltas,
                         const DatasetHandle& test, const GridConfig& cfg, std::size_t jobs = 1);

enum class SelectionMode { grid_argmin, early_stop };
std::string to_string(SelectionMode mode);

struct OverdesignChoice {
  int delta = 0;
  int epsilon_star = 0;
  SelectionMode selection_mode = SelectionMode::grid_argmin;
};

/// grid_argmin: smallest epsilon attaining the row minimum.
/// early_stop: from the smallest epsilon above delta, keep stepping up while
/// the error does not increase; return the last epsilon before the first
/// strict increase.
OverdesignChoice select_overdesign(const RobustnessGrid& grid, int delta, SelectionMode mode);

}  // namespace psl
