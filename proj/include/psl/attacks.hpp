#pragma once

#include "psl/model.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace psl {

/// Step size rule alpha = (eps / 8) * (2 / 255), in pixel units.
double default_step_size(int epsilon_int);

/// L-infinity PGD settings. The ball radius is epsilon_int / 255.
struct AttackConfig {
  int epsilon_int = 8;
  int steps = 20;
  std::optional<double> alpha;
  bool random_start = true;
  std::uint64_t seed = 0;
  bool clamp_to_pixel_range = true;

  double radius() const { return epsilon_int / 255.0; }
  double step_size() const { return alpha ? *alpha : default_step_size(epsilon_int); }
  void validate() const;
};

struct AttackResult {
  Tensor adversarial_batch;
  std::vector<double> linf_distances;
  /// Mean loss at x^0, x^1, ..., x^N.
  std::vector<double> loss_trace;
  /// True where the prediction on the adversarial input differs from the label.
  std::vector<bool> success_mask;

  /// Percentage of examples still classified correctly.
  double accuracy() const;
};

/// Clip `candidate` into the L-infinity ball of `radius` around `origin`,
/// then optionally into [0, 1].
Tensor project(const Tensor& candidate, const Tensor& origin, double radius, bool clamp_to_pixel_range);

/// Per-example max |a - b| over all non-batch axes.
std::vector<double> linf_distances(const Tensor& a, const Tensor& b);

/// x^{i+1} = project(x^i + alpha * sign(grad_x loss(f(x^i), y))). Gradients
/// flow through `taps` as recorded, so identity-backward taps behave as BPDA.
AttackResult pgd(const Network& net, const TapMap& taps, const Tensor& batch, std::span<const int> labels,
                 const AttackConfig& cfg);

/// PGD against a non-differentiable defense; every defense tap must declare
/// an identity backward approximation.
AttackResult bpda_pgd(const Network& net, const TapMap& defense_taps, const Tensor& batch,
                      std::span<const int> labels, const AttackConfig& cfg);

/// Crafts the attack on the bare network and scores it on the defended one.
AttackResult transfer_pgd(const Network& base_net, const TapMap& defended_taps, const Tensor& batch,
                          std::span<const int> labels, const AttackConfig& cfg);

enum class AttackKind { none, pgd, bpda, transfer };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

/// Accuracy (percent) over a dataset, attacked batch by batch. Batch b uses
/// seed derive_seed(cfg.seed, "batch=<b>"). AttackKind::none and epsilon 0
/// reduce to clean accuracy.
double evaluate_accuracy(const Network& net, const TapMap& taps, const Tensor& images, std::span<const int> labels,
                         AttackKind kind, const AttackConfig& cfg, Index batch_size);

/// Mean cross-entropy of a batch.
/// PGD adversarial batches of `batch_size` rows, using the same per-batch seeds
/// as evaluate_accuracy. With epsilon 0 the clean slices are returned.
std::vector<Tensor> craft_adversarial_batches(const Network& net, const TapMap& taps, const Tensor& images,
                                              std::span<const int> labels, const AttackConfig& cfg,
                                              Index batch_size);

/// Accuracy in percent of the tapped network over pre-built batches.
double accuracy_on_batches(const Network& net, const TapMap& taps, const std::vector<Tensor>& batches,
                           std::span<const int> labels);

double mean_loss(const Network& net, const TapMap& taps, const Tensor& batch, std::span<const int> labels);

}  // namespace psl
