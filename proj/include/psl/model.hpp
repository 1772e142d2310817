#pragma once

#include "psl/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace psl {

enum class Arch { tiny_cnn, mini_resnet };
enum class Activation { relu, swish, none };
enum class BlockKind { conv, residual_conv, dense, pool, activation };

std::string to_string(Arch arch);
std::string to_string(Activation activation);
std::string to_string(BlockKind kind);
Arch parse_arch(const std::string& name);
Activation parse_activation(const std::string& name);

struct BlockSpec {
  std::string name;
  BlockKind kind = BlockKind::conv;
  Index channels_in = 0;
  Index channels_out = 0;
  Activation activation = Activation::none;
};

/// How a feature transform behaves on the backward pass.
enum class BackwardMode {
  exact,     // differentiate the recorded forward operations
  identity,  // forward is non-differentiable; backward passes gradients through unchanged
};

/// Transform applied to a block's output before it is fed forward.
struct FeatureTransform {
  std::string label;
  BackwardMode backward = BackwardMode::exact;
  std::function<Var(Var)> apply;

  static FeatureTransform identity();
};

using TapMap = std::map<std::string, FeatureTransform>;

struct ModelOptions {
  Index input_channels = 3;
  Index width = 8;
  /// Fixed input standardization (x - input_mean) / input_std ahead of conv0.
  double input_mean = 0.5;
  double input_std = 0.25;
};

/// Ordered named blocks plus their parameters.
///
/// Parameter names are "<block>.<part>" e.g. "conv0.weight",
/// "block1.conv_b.weight", "head.bias". Every conv and residual block
/// exposes its post-activation output as a tap point, and its
/// pre-activation output as "<block>.preact".
class Network {
 public:
  Network(Arch arch, Activation activation, Index num_classes, ModelOptions options);

  Arch arch() const { return arch_; }
  Activation activation() const { return activation_; }
  Index num_classes() const { return num_classes_; }
  const ModelOptions& options() const { return options_; }
  const std::vector<BlockSpec>& blocks() const { return blocks_; }

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;

  std::vector<std::string> tap_points() const;
  std::string pre_final_activation_tap() const;
  /// Conv kernel parameter names in block declaration order.
  std::vector<std::string> conv_kernels() const;

  nlohmann::json topology() const;
  void zero_grad();

 private:
  Arch arch_;
  Activation activation_;
  Index num_classes_;
  ModelOptions options_;
  std::vector<BlockSpec> blocks_;
  std::map<std::string, Tensor> params_;
};

/// Deterministic He-initialized network.
///   tiny_cnn:    conv0, block1 (conv), block2 (conv), pool, head
///   mini_resnet: conv0, block1 (residual), block2 (residual), pool, head
Network build(Arch arch, Index num_classes, Activation activation, std::uint64_t seed, ModelOptions options = {});

/// Rebuilds the parameterless skeleton described by Network::topology().
Network from_topology(const nlohmann::json& topology);

struct ForwardResult {
  Var logits;
  /// Raw (pre-transform) block outputs keyed by tap point, plus
  /// "<block>.preact" pre-activation features.
  std::map<std::string, Var> features;
};

/// Parameters enter the graph as constants.
ForwardResult forward(Graph& graph, const Network& net, Var batch, const TapMap& taps = {});

/// Parameters enter the graph as leaves; gradients accumulate into them.
ForwardResult forward_trainable(Graph& graph, Network& net, Var batch, const TapMap& taps = {});

/// Convenience: logits for a batch without recording gradients.
Tensor predict_logits(const Network& net, const Tensor& batch, const TapMap& taps = {});
std::vector<int> argmax_rows(const Tensor& logits);

struct TrainingMetadata {
  int epsilon_int = 0;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string selection_criterion;
  nlohmann::json extra = nlohmann::json::object();
};

struct Checkpoint {
  Network network;
  TrainingMetadata metadata;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "PSL1", u64 header length, JSON header, f64 payloads (all
/// little-endian). The header holds format_version, topology, metadata and
/// a tensor directory of {name, shape, offset} with offsets in bytes from
/// the start of the payload.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// As above, and rejects files whose topology differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const nlohmann::json& expected_topology);

}  // namespace psl

namespace psl {

/// Everything needed to build a fresh network apart from the seed.
struct ModelSpec {
  Arch arch = Arch::tiny_cnn;
  Activation activation = Activation::relu;
  Index num_classes = 2;
  ModelOptions options;
};

inline Network build(const ModelSpec& spec, std::uint64_t seed) {
  return build(spec.arch, spec.num_classes, spec.activation, seed, spec.options);
}

}  // namespace psl
