#include "psl/model.hpp"

#include "psl/random.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace psl {

std::string to_string(Arch arch) { return arch == Arch::tiny_cnn ? "tiny_cnn" : "mini_resnet"; }

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::relu: return "relu";
    case Activation::swish: return "swish";
    case Activation::none: return "none";
  }
  return "none";
}

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::conv: return "conv";
    case BlockKind::residual_conv: return "residual_conv";
    case BlockKind::dense: return "dense";
    case BlockKind::pool: return "pool";
    case BlockKind::activation: return "activation";
  }
  return "conv";
}

Arch parse_arch(const std::string& name) {
  if (name == "tiny_cnn") return Arch::tiny_cnn;
  if (name == "mini_resnet") return Arch::mini_resnet;
  throw std::invalid_argument("unknown architecture '" + name + "' (expected tiny_cnn or mini_resnet)");
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "swish") return Activation::swish;
  if (name == "none") return Activation::none;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

FeatureTransform FeatureTransform::identity() {
  return FeatureTransform{"identity", BackwardMode::exact, [](Var v) { return v; }};
}

namespace {

void add_conv_params(std::map<std::string, Tensor>& params, const std::string& prefix, Index cin, Index cout) {
  params.emplace(prefix + ".weight", Tensor(Shape{cout, cin, 3, 3}));
  params.emplace(prefix + ".scale", Tensor(Shape{cout}, 1.0));
  params.emplace(prefix + ".shift", Tensor(Shape{cout}));
}

}  // namespace

Network::Network(Arch arch, Activation activation, Index num_classes, ModelOptions options)
    : arch_(arch), activation_(activation), num_classes_(num_classes), options_(options) {
  if (num_classes < 1) throw std::invalid_argument("num_classes must be positive");
  if (options.input_channels < 1 || options.width < 1) throw std::invalid_argument("channel counts must be positive");
  if (!(options.input_std > 0.0)) throw std::invalid_argument("input_std must be positive");
  const Index w = options.width;
  const Index cin = options.input_channels;
  if (arch == Arch::tiny_cnn) {
    blocks_ = {{"conv0", BlockKind::conv, cin, w, activation},
               {"block1", BlockKind::conv, w, w, activation},
               {"block2", BlockKind::conv, w, 2 * w, activation},
               {"pool", BlockKind::pool, 2 * w, 2 * w, Activation::none},
               {"head", BlockKind::dense, 2 * w, num_classes, Activation::none}};
  } else {
    blocks_ = {{"conv0", BlockKind::conv, cin, w, activation},
               {"block1", BlockKind::residual_conv, w, w, activation},
               {"block2", BlockKind::residual_conv, w, w, activation},
               {"pool", BlockKind::pool, w, w, Activation::none},
               {"head", BlockKind::dense, w, num_classes, Activation::none}};
  }
  for (const BlockSpec& b : blocks_) {
    switch (b.kind) {
      case BlockKind::conv: add_conv_params(params_, b.name, b.channels_in, b.channels_out); break;
      case BlockKind::residual_conv:
        add_conv_params(params_, b.name + ".conv_a", b.channels_in, b.channels_out);
        add_conv_params(params_, b.name + ".conv_b", b.channels_out, b.channels_out);
        break;
      case BlockKind::dense:
        params_.emplace(b.name + ".weight", Tensor(Shape{b.channels_out, b.channels_in}));
        params_.emplace(b.name + ".bias", Tensor(Shape{b.channels_out}));
        break;
      case BlockKind::pool:
      case BlockKind::activation: break;
    }
  }
}

Tensor& Network::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("network has no parameter '" + name + "'");
  return it->second;
}

const Tensor& Network::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("network has no parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> Network::tap_points() const {
  std::vector<std::string> taps;
  for (const BlockSpec& b : blocks_) {
    if (b.kind == BlockKind::conv || b.kind == BlockKind::residual_conv) taps.push_back(b.name);
  }
  return taps;
}

std::string Network::pre_final_activation_tap() const { return tap_points().back() + ".preact"; }

std::vector<std::string> Network::conv_kernels() const {
  std::vector<std::string> names;
  for (const BlockSpec& b : blocks_) {
    if (b.kind == BlockKind::conv) names.push_back(b.name + ".weight");
    if (b.kind == BlockKind::residual_conv) {
      names.push_back(b.name + ".conv_a.weight");
      names.push_back(b.name + ".conv_b.weight");
    }
  }
  return names;
}

nlohmann::json Network::topology() const {
  nlohmann::json blocks = nlohmann::json::array();
  for (const BlockSpec& b : blocks_) {
    blocks.push_back({{"name", b.name},
                      {"kind", to_string(b.kind)},
                      {"channels_in", b.channels_in},
                      {"channels_out", b.channels_out},
                      {"activation", to_string(b.activation)}});
  }
  return {{"arch", to_string(arch_)},
          {"activation", to_string(activation_)},
          {"num_classes", num_classes_},
          {"input_channels", options_.input_channels},
          {"width", options_.width},
          {"input_mean", options_.input_mean},
          {"input_std", options_.input_std},
          {"blocks", std::move(blocks)}};
}

void Network::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

Network build(Arch arch, Index num_classes, Activation activation, std::uint64_t seed, ModelOptions options) {
  Network net(arch, activation, num_classes, options);
  Rng rng(seed);
  auto he_fill = [&](Tensor& t, Index fan_in) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (Index i = 0; i < t.size(); ++i) t[i] = stddev * rng.normal();
  };
  for (const std::string& name : net.conv_kernels()) {
    Tensor& k = net.param(name);
    he_fill(k, k.dim(1) * 9);
  }
  Tensor& head = net.param("head.weight");
  he_fill(head, head.dim(1));
  return net;
}

Network from_topology(const nlohmann::json& topology) {
  try {
    ModelOptions options{topology.at("input_channels").get<Index>(), topology.at("width").get<Index>(),
                         topology.at("input_mean").get<double>(), topology.at("input_std").get<double>()};
    Network net(parse_arch(topology.at("arch").get<std::string>()),
                parse_activation(topology.at("activation").get<std::string>()),
                topology.at("num_classes").get<Index>(), options);
    if (net.topology() != topology) throw std::invalid_argument("topology descriptor is inconsistent with its arch");
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed topology descriptor: ") + e.what());
  }
}

namespace {

Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::relu: return relu(x);
    case Activation::swish: return swish(x);
    case Activation::none: return x;
  }
  return x;
}

template <class Bind>
ForwardResult run_forward(const Network& net, Var batch, const TapMap& taps, Bind bind) {
  const auto points = net.tap_points();
  for (const auto& [name, transform] : taps) {
    if (std::find(points.begin(), points.end(), name) == points.end()) {
      throw std::invalid_argument("unknown tap point '" + name + "'");
    }
    if (!transform.apply) throw std::invalid_argument("tap '" + name + "' has no transform");
  }
  const Tensor& in = batch.value();
  if (in.rank() != 4 || in.dim(1) != net.options().input_channels) {
    throw std::invalid_argument("network expects N x " + std::to_string(net.options().input_channels) +
                                " x H x W input, got " + shape_string(in.shape()));
  }
  ForwardResult result;
  Graph& graph = *batch.graph;
  const Index channels = net.options().input_channels;
  const double inv_std = 1.0 / net.options().input_std;
  Var x = channel_affine(batch, graph.constant(Tensor(Shape{channels}, inv_std)),
                         graph.constant(Tensor(Shape{channels}, -net.options().input_mean * inv_std)));
  auto conv_unit = [&](Var v, const std::string& prefix) {
    return channel_affine(conv2d(v, bind(prefix + ".weight")), bind(prefix + ".scale"), bind(prefix + ".shift"));
  };
  for (const BlockSpec& b : net.blocks()) {
    switch (b.kind) {
      case BlockKind::conv:
      case BlockKind::residual_conv: {
        Var pre = b.kind == BlockKind::conv
                      ? conv_unit(x, b.name)
                      : add(x, conv_unit(activate(conv_unit(x, b.name + ".conv_a"), b.activation), b.name + ".conv_b"));
        result.features[b.name + ".preact"] = pre;
        x = activate(pre, b.activation);
        result.features[b.name] = x;
        if (auto it = taps.find(b.name); it != taps.end()) x = it->second.apply(x);
        break;
      }
      case BlockKind::pool: x = global_avg_pool(x); break;
      case BlockKind::dense: x = dense(x, bind(b.name + ".weight"), bind(b.name + ".bias")); break;
      case BlockKind::activation: x = activate(x, b.activation); break;
    }
  }
  result.logits = x;
  return result;
}

}  // namespace

ForwardResult forward(Graph& graph, const Network& net, Var batch, const TapMap& taps) {
  return run_forward(net, batch, taps, [&](const std::string& name) { return graph.constant(net.param(name)); });
}

ForwardResult forward_trainable(Graph& graph, Network& net, Var batch, const TapMap& taps) {
  return run_forward(net, batch, taps, [&](const std::string& name) { return graph.leaf(net.param(name)); });
}

Tensor predict_logits(const Network& net, const Tensor& batch, const TapMap& taps) {
  Graph graph;
  auto result = forward(graph, net, graph.constant(batch), taps);
  return result.logits.value();
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("argmax_rows: expected N x K, got " + shape_string(logits.shape()));
  const Index n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  ConstMatrixMap m(logits.data().data(), n, k);
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    m.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace psl
