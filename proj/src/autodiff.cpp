#include "psl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace psl {

namespace {

[[noreturn]] void shape_error(std::string_view op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Graph& graph_of(std::span<const Var> vars, std::string_view op) {
  if (vars.empty() || vars[0].graph == nullptr) shape_error(op, "input is not attached to a graph");
  for (const Var& v : vars) {
    if (v.graph != vars[0].graph) shape_error(op, "inputs live on different graphs");
  }
  return *vars[0].graph;
}

// Column matrix for one example: row (c*9 + ky*3 + kx), column (y*W + x).
void im2col(const double* image, Index channels, Index height, Index width, RowMatrix& cols) {
  cols.setZero(channels * 9, height * width);
  for (Index c = 0; c < channels; ++c) {
    const double* plane = image + c * height * width;
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        double* row = cols.row(c * 9 + ky * 3 + kx).data();
        for (Index y = 0; y < height; ++y) {
          const Index sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          for (Index x = 0; x < width; ++x) {
            const Index sx = x + kx - 1;
            if (sx < 0 || sx >= width) continue;
            row[y * width + x] = plane[sy * width + sx];
          }
        }
      }
    }
  }
}

void col2im_add(const RowMatrix& cols, Index channels, Index height, Index width, double* image) {
  for (Index c = 0; c < channels; ++c) {
    double* plane = image + c * height * width;
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        const double* row = cols.row(c * 9 + ky * 3 + kx).data();
        for (Index y = 0; y < height; ++y) {
          const Index sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          for (Index x = 0; x < width; ++x) {
            const Index sx = x + kx - 1;
            if (sx < 0 || sx >= width) continue;
            plane[sy * width + sx] += row[y * width + x];
          }
        }
      }
    }
  }
}

template <class Fn>
Var unary_elementwise(OpKind kind, Var x, Fn forward, BackwardFn backward) {
  Graph& g = graph_of(std::span<const Var>(&x, 1), op_name(kind));
  const Tensor& in = x.value();
  Tensor out(in.shape());
  out.data() = in.data().unaryExpr(forward);
  return g.record(kind, {x}, std::move(out), std::move(backward));
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::conv2d: return "conv2d";
    case OpKind::dense: return "dense";
    case OpKind::relu: return "relu";
    case OpKind::swish: return "swish";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
    case OpKind::floor_scale: return "floor_scale";
    case OpKind::channel_affine: return "channel_affine";
    case OpKind::sum: return "sum";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (graph == nullptr) throw std::logic_error("Var is not attached to a graph");
  return graph->value(*this);
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::constant, {}, std::move(value), false, nullptr, {}});
  return Var{this, nodes_.size() - 1};
}

Var Graph::leaf(Tensor& source) {
  const bool tracked = source.requires_grad();
  nodes_.push_back(Node{OpKind::leaf, {}, Tensor(source.shape(), source.data()), tracked,
                        tracked ? &source : nullptr, {}});
  return Var{this, nodes_.size() - 1};
}

void Graph::check_owned(Var v, std::string_view op) const {
  if (v.graph != this || v.id >= nodes_.size()) {
    throw std::invalid_argument(std::string(op) + ": variable does not belong to this graph");
  }
}

Var Graph::record(OpKind kind, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  Node node{kind, {}, std::move(value), false, nullptr, {}};
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check_owned(in, op_name(kind));
    node.inputs.push_back(in.id);
    node.needs_grad = node.needs_grad || nodes_[in.id].needs_grad;
  }
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

void Graph::backward(Var loss) {
  check_owned(loss, "backward");
  if (value(loss).size() != 1 || value(loss).rank() != 0) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_string(value(loss).shape()));
  }
  std::vector<Vector> grads(nodes_.size());
  grads[loss.id] = Vector::Ones(1);

  std::vector<const Tensor*> in_values;
  std::vector<Vector*> in_grads;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.needs_grad || grads[id].size() == 0) continue;
    if (node.kind == OpKind::leaf) {
      if (node.target != nullptr) node.target->grad_or_zeros() += grads[id];
      continue;
    }
    in_values.clear();
    in_grads.clear();
    for (std::size_t in : node.inputs) {
      in_values.push_back(&nodes_[in].value);
      if (nodes_[in].needs_grad) {
        if (grads[in].size() == 0) grads[in] = Vector::Zero(nodes_[in].value.size());
        in_grads.push_back(&grads[in]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardContext{grads[id], in_values, node.value, in_grads});
    grads[id] = Vector();
  }
  clear();
}

Var conv2d(Var input, Var kernel) {
  const Var vars[] = {input, kernel};
  Graph& g = graph_of(vars, "conv2d");
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  if (x.rank() != 4) shape_error("conv2d", "input must be N x C x H x W, got " + shape_string(x.shape()));
  if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3) {
    shape_error("conv2d", "kernel must be Cout x Cin x 3 x 3, got " + shape_string(w.shape()));
  }
  if (w.dim(1) != x.dim(1)) {
    shape_error("conv2d", "kernel expects " + std::to_string(w.dim(1)) + " input channels, input has " +
                              std::to_string(x.dim(1)));
  }
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3), cout = w.dim(0);
  const Index plane = h * wd;
  Tensor out(Shape{n, cout, h, wd});
  ConstMatrixMap kmat(w.data().data(), cout, cin * 9);
  RowMatrix cols;
  for (Index i = 0; i < n; ++i) {
    im2col(x.data().data() + i * cin * plane, cin, h, wd, cols);
    MatrixMap(out.data().data() + i * cout * plane, cout, plane).noalias() = kmat * cols;
  }
  return g.record(OpKind::conv2d, {input, kernel}, std::move(out), [=](const BackwardContext& ctx) {
    const Tensor& xv = *ctx.inputs[0];
    const Tensor& wv = *ctx.inputs[1];
    ConstMatrixMap km(wv.data().data(), cout, cin * 9);
    RowMatrix c;
    RowMatrix dcols;
    for (Index i = 0; i < n; ++i) {
      ConstMatrixMap gout(ctx.grad_out.data() + i * cout * plane, cout, plane);
      if (ctx.grad_in[1] != nullptr) {
        im2col(xv.data().data() + i * cin * plane, cin, h, wd, c);
        MatrixMap(ctx.grad_in[1]->data(), cout, cin * 9).noalias() += gout * c.transpose();
      }
      if (ctx.grad_in[0] != nullptr) {
        dcols.noalias() = km.transpose() * gout;
        col2im_add(dcols, cin, h, wd, ctx.grad_in[0]->data() + i * cin * plane);
      }
    }
  });
}

Var dense(Var input, Var weight, Var bias) {
  const Var vars[] = {input, weight, bias};
  Graph& g = graph_of(vars, "dense");
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  if (x.rank() != 2) shape_error("dense", "input must be N x F, got " + shape_string(x.shape()));
  if (w.rank() != 2 || w.dim(1) != x.dim(1)) {
    shape_error("dense", "weight " + shape_string(w.shape()) + " does not match input " + shape_string(x.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    shape_error("dense", "bias " + shape_string(b.shape()) + " does not match weight " + shape_string(w.shape()));
  }
  const Index n = x.dim(0), f = x.dim(1), o = w.dim(0);
  Tensor out(Shape{n, o});
  MatrixMap y(out.data().data(), n, o);
  y.noalias() = ConstMatrixMap(x.data().data(), n, f) * ConstMatrixMap(w.data().data(), o, f).transpose();
  y.rowwise() += b.data().transpose();
  return g.record(OpKind::dense, {input, weight, bias}, std::move(out), [=](const BackwardContext& ctx) {
    ConstMatrixMap gout(ctx.grad_out.data(), n, o);
    if (ctx.grad_in[0] != nullptr) {
      MatrixMap(ctx.grad_in[0]->data(), n, f).noalias() +=
          gout * ConstMatrixMap(ctx.inputs[1]->data().data(), o, f);
    }
    if (ctx.grad_in[1] != nullptr) {
      MatrixMap(ctx.grad_in[1]->data(), o, f).noalias() +=
          gout.transpose() * ConstMatrixMap(ctx.inputs[0]->data().data(), n, f);
    }
    if (ctx.grad_in[2] != nullptr) *ctx.grad_in[2] += gout.colwise().sum().transpose();
  });
}

Var channel_affine(Var input, Var scale, Var shift) {
  const Var vars[] = {input, scale, shift};
  Graph& g = graph_of(vars, "channel_affine");
  const Tensor& x = input.value();
  if (x.rank() < 2) shape_error("channel_affine", "input must be N x C x ..., got " + shape_string(x.shape()));
  const Index n = x.dim(0), c = x.dim(1);
  if (scale.value().shape() != Shape{c} || shift.value().shape() != Shape{c}) {
    shape_error("channel_affine", "scale " + shape_string(scale.value().shape()) + " and shift " +
                                      shape_string(shift.value().shape()) + " must both be [" + std::to_string(c) +
                                      "] for input " + shape_string(x.shape()));
  }
  const Index inner = n * c == 0 ? 0 : x.size() / (n * c);
  Tensor out(x.shape());
  const Vector& s = scale.value().data();
  const Vector& t = shift.value().data();
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (i * c + ch) * inner;
      out.data().segment(off, inner) = (x.data().segment(off, inner).array() * s[ch] + t[ch]).matrix();
    }
  }
  return g.record(OpKind::channel_affine, {input, scale, shift}, std::move(out), [=](const BackwardContext& ctx) {
    const Vector& xv = ctx.inputs[0]->data();
    const Vector& sv = ctx.inputs[1]->data();
    for (Index i = 0; i < n; ++i) {
      for (Index ch = 0; ch < c; ++ch) {
        const Index off = (i * c + ch) * inner;
        const auto go = ctx.grad_out.segment(off, inner);
        if (ctx.grad_in[0] != nullptr) ctx.grad_in[0]->segment(off, inner) += sv[ch] * go;
        if (ctx.grad_in[1] != nullptr) (*ctx.grad_in[1])[ch] += go.dot(xv.segment(off, inner));
        if (ctx.grad_in[2] != nullptr) (*ctx.grad_in[2])[ch] += go.sum();
      }
    }
  });
}

Var relu(Var x) {
  return unary_elementwise(OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
                           [](const BackwardContext& ctx) {
                             const Vector& in = ctx.inputs[0]->data();
                             for (Index i = 0; i < in.size(); ++i) {
                               if (in[i] > 0.0) (*ctx.grad_in[0])[i] += ctx.grad_out[i];
                             }
                           });
}

Var swish(Var x) {
  return unary_elementwise(OpKind::swish, x, [](double v) { return v * sigmoid(v); },
                           [](const BackwardContext& ctx) {
                             const Vector& in = ctx.inputs[0]->data();
                             for (Index i = 0; i < in.size(); ++i) {
                               const double s = sigmoid(in[i]);
                               (*ctx.grad_in[0])[i] += ctx.grad_out[i] * (s + in[i] * s * (1.0 - s));
                             }
                           });
}

Var add(Var a, Var b) {
  const Var vars[] = {a, b};
  Graph& g = graph_of(vars, "add");
  if (a.shape() != b.shape()) {
    shape_error("add", "operand shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  }
  Tensor out(a.shape(), a.value().data() + b.value().data());
  return g.record(OpKind::add, {a, b}, std::move(out), [](const BackwardContext& ctx) {
    for (Vector* gin : ctx.grad_in) {
      if (gin != nullptr) *gin += ctx.grad_out;
    }
  });
}

Var mul(Var a, Var b) {
  const Var vars[] = {a, b};
  Graph& g = graph_of(vars, "mul");
  if (a.shape() != b.shape()) {
    shape_error("mul", "operand shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  }
  Tensor out(a.shape(), a.value().data().cwiseProduct(b.value().data()));
  return g.record(OpKind::mul, {a, b}, std::move(out), [](const BackwardContext& ctx) {
    if (ctx.grad_in[0] != nullptr) *ctx.grad_in[0] += ctx.grad_out.cwiseProduct(ctx.inputs[1]->data());
    if (ctx.grad_in[1] != nullptr) *ctx.grad_in[1] += ctx.grad_out.cwiseProduct(ctx.inputs[0]->data());
  });
}

Var sum(Var x) {
  Graph& g = graph_of(std::span<const Var>(&x, 1), "sum");
  Tensor out(Shape{}, x.value().data().sum());
  return g.record(OpKind::sum, {x}, std::move(out), [](const BackwardContext& ctx) {
    ctx.grad_in[0]->array() += ctx.grad_out[0];
  });
}

Var global_avg_pool(Var x) {
  Graph& g = graph_of(std::span<const Var>(&x, 1), "global_avg_pool");
  const Tensor& in = x.value();
  if (in.rank() != 4 || in.dim(2) * in.dim(3) == 0) {
    shape_error("global_avg_pool", "input must be N x C x H x W with H, W > 0, got " + shape_string(in.shape()));
  }
  const Index n = in.dim(0), c = in.dim(1), plane = in.dim(2) * in.dim(3);
  Tensor out(Shape{n, c});
  for (Index i = 0; i < n * c; ++i) out[i] = in.data().segment(i * plane, plane).sum() / static_cast<double>(plane);
  return g.record(OpKind::global_avg_pool, {x}, std::move(out), [=](const BackwardContext& ctx) {
    for (Index i = 0; i < n * c; ++i) {
      ctx.grad_in[0]->segment(i * plane, plane).array() += ctx.grad_out[i] / static_cast<double>(plane);
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Graph& g = graph_of(std::span<const Var>(&logits, 1), "softmax_cross_entropy");
  const Tensor& z = logits.value();
  if (z.rank() != 2) shape_error("softmax_cross_entropy", "logits must be N x K, got " + shape_string(z.shape()));
  const Index n = z.dim(0), k = z.dim(1);
  if (static_cast<Index>(labels.size()) != n) {
    shape_error("softmax_cross_entropy", std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  if (n == 0) shape_error("softmax_cross_entropy", "empty batch");
  RowMatrix probs(n, k);
  double total = 0.0;
  ConstMatrixMap zm(z.data().data(), n, k);
  for (Index i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= k) {
      shape_error("softmax_cross_entropy", "label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
    const double m = zm.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (zm.row(i).array() - m).exp().matrix();
    const double s = e.sum();
    probs.row(i) = e / s;
    total += std::log(s) + m - zm(i, label);
  }
  std::vector<int> kept(labels.begin(), labels.end());
  return g.record(OpKind::softmax_cross_entropy, {logits}, Tensor(Shape{}, total / static_cast<double>(n)),
                  [=, probs = std::move(probs), kept = std::move(kept)](const BackwardContext& ctx) {
                    const double scale = ctx.grad_out[0] / static_cast<double>(n);
                    MatrixMap gz(ctx.grad_in[0]->data(), n, k);
                    for (Index i = 0; i < n; ++i) {
                      gz.row(i) += scale * probs.row(i);
                      gz(i, kept[static_cast<std::size_t>(i)]) -= scale;
                    }
                  });
}

Var floor_scale(Var x, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("floor_scale: beta must be positive, got " + std::to_string(beta));
  return unary_elementwise(OpKind::floor_scale, x, [beta](double v) { return std::floor(beta * v) / beta; },
                           [](const BackwardContext& ctx) { *ctx.grad_in[0] += ctx.grad_out; });
}

Var forward_op(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs) {
  auto expect = [&](std::size_t count) {
    if (inputs.size() != count) {
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(count) +
                                  " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::conv2d: expect(2); return conv2d(inputs[0], inputs[1]);
    case OpKind::dense: expect(3); return dense(inputs[0], inputs[1], inputs[2]);
    case OpKind::channel_affine: expect(3); return channel_affine(inputs[0], inputs[1], inputs[2]);
    case OpKind::relu: expect(1); return relu(inputs[0]);
    case OpKind::swish: expect(1); return swish(inputs[0]);
    case OpKind::add: expect(2); return add(inputs[0], inputs[1]);
    case OpKind::mul: expect(2); return mul(inputs[0], inputs[1]);
    case OpKind::sum: expect(1); return sum(inputs[0]);
    case OpKind::global_avg_pool: expect(1); return global_avg_pool(inputs[0]);
    case OpKind::softmax_cross_entropy: expect(1); return softmax_cross_entropy(inputs[0], attrs.labels);
    case OpKind::floor_scale: expect(1); return floor_scale(inputs[0], attrs.beta);
    case OpKind::leaf:
    case OpKind::constant: break;
  }
  throw std::invalid_argument(std::string("forward_op: ") + std::string(op_name(kind)) + " is not a computed operation");
}

}  // namespace psl
