#pragma once

#include "psl/tensor.hpp"

#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace psl {

enum class OpKind {
  leaf,
  constant,
  conv2d,
  dense,
  relu,
  swish,
  add,
  mul,
  global_avg_pool,
  softmax_cross_entropy,
  floor_scale,
  channel_affine,
  sum,
};

std::string_view op_name(OpKind kind);

class Graph;

/// Handle to a node recorded on a Graph. Cheap to copy; valid until the
/// graph is cleared.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// What a backward function sees for one node.
struct BackwardContext {
  const Vector& grad_out;
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  // Null where the corresponding input does not need a gradient.
  std::span<Vector* const> grad_in;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Append-only tape of operations.
///
/// Node ids are issued in creation order, so inputs always precede outputs
/// and backward can walk ids in reverse. Leaves created from a Tensor with
/// requires_grad set accumulate their gradient into that Tensor, which must
/// outlive the backward call. The tape is released after backward.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor& source);

  Var record(OpKind kind, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Populates gradients of every requires_grad leaf reachable from the
  /// scalar `loss`, accumulating across fan-out, then clears the tape.
  void backward(Var loss);

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool needs_grad = false;
    Tensor* target = nullptr;
    BackwardFn backward;
  };

  void check_owned(Var v, std::string_view op) const;

  std::vector<Node> nodes_;
};

// Differentiable operations. All inputs must live on the same graph.

/// 3x3 convolution, stride 1, zero padding 1.
/// input N x Cin x H x W, kernel Cout x Cin x 3 x 3 -> N x Cout x H x W.
Var conv2d(Var input, Var kernel);

/// input N x F, weight O x F, bias O -> N x O.
Var dense(Var input, Var weight, Var bias);

/// Per-channel scale and shift over N x C x ... inputs.
Var channel_affine(Var input, Var scale, Var shift);

Var relu(Var x);
Var swish(Var x);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var sum(Var x);

/// N x C x H x W -> N x C.
Var global_avg_pool(Var x);

/// Mean over the batch of -log softmax(logits)[label]. Returns a scalar.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

/// floor(beta * x) / beta on the forward pass; identity on the backward pass.
Var floor_scale(Var x, double beta);

struct OpAttrs {
  double beta = 0.0;
  std::span<const int> labels;
};

/// Kind-dispatched entry point over the typed operations above.
Var forward_op(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

}  // namespace psl
