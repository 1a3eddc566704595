#pragma once

#include <array>
#include <functional>
#include <vector>

#include "lipsync/tensor.hpp"

namespace lipsync::ad {

class Tape;

// Lightweight handle to a tape node.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  const Tensor& val() const;
  const Tensor& grad() const;  // valid after Tape::backward
  bool has_grad() const;
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in execution order (define-by-run),
// so a single reverse sweep is a valid topological order.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<int> parents;
    std::function<void(Tape&, int)> back;  // accumulates into parent grads
  };

  Var input(Tensor v) { return make(std::move(v), false, {}, nullptr); }
  Var leaf(Tensor v, bool requires_grad) { return make(std::move(v), requires_grad, {}, nullptr); }

  Var make(Tensor v, bool requires_grad, std::vector<int> parents, std::function<void(Tape&, int)> back) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    n.parents = std::move(parents);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  // Gradient buffer for accumulation; nullptr when the node does not need one.
  Tensor* grad_sink(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
    return &n.grad;
  }

  const Tensor& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad.size() != 0; }

  void backward(const Var& loss);

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

inline const Tensor& Var::val() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }
inline bool Var::has_grad() const { return tape_->has_grad(id_); }

struct ConvSpec {
  int stride = 1;
  int pad = 1;
};

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// Broadcasting variants: b has the same rank as a and every dim of b is
// either equal to a's or 1 (numpy-style, restricted).
Var add_b(Var a, Var b);
Var mul_b(Var a, Var b);
Var scale(Var a, double s);
Var add_const(Var a, double c);
Var leaky_relu(Var x, double slope);
Var sigmoid(Var x);
Var sqrt0(Var x);           // d/dx at x==0 taken as 0 so exact-zero losses stay finite
Var powc(Var x, double p);  // x > 0 expected

// Reductions (scalar results unless stated).
Var sum(Var x);
Var mean(Var x);
Var sum_sq(Var x);
Var rowwise_sumsq(Var x);   // [d0, ...] -> [d0]
Var sumsq_keep(Var x, int keep);  // sum of squares over trailing dims, keep first `keep`
Var sum_keep(Var x, int keep);    // plain sum over trailing dims
Var logsumexp_rows(Var x);  // [n, m] -> [n]
Var take_cols(Var x, std::vector<int> cols);  // y_i = x[i, cols_i]

// Linear algebra.
Var matmul(Var a, Var b);     // [m,k] x [k,n]
Var matmul_nt(Var a, Var b);  // [m,k] x [n,k]^T -> [m,n]
Var linear(Var x, Var w, Var b);  // x[n,k], w[out,k], b[out]

// Shape.
Var reshape(Var x, std::vector<int> shape);
Var slice(Var x, int axis, int start, int len);
Var concat(const std::vector<Var>& xs, int axis);

// Spatial ops on [N,C,H,W].
Var conv2d(Var x, Var w, ConvSpec spec);
// Per-sample weights w[N,O,C,kh,kw]; backbone of style-modulated convolution.
Var conv2d_mw(Var x, Var w, ConvSpec spec);
// Fused epilogues (bias add and optional leaky-rectifier) save full-tensor
// memory passes; gradients flow to x, w and bias.
Var conv2d_bias_act(Var x, Var w, Var bias, ConvSpec spec, double slope);
Var conv2d_mw_bias(Var x, Var w, Var bias, ConvSpec spec);
Var conv2d_mw_bias_act(Var x, Var w, Var bias, ConvSpec spec, double slope);
Var upsample2(Var x);
Var avgpool2(Var x);
Var global_avgpool(Var x);  // -> [N,C]

// Weighted 3-tap average along the time axis of [B,T,R,D] with replicate
// padding at both ends.
Var smooth3_time(Var x, std::array<double, 3> alpha);

// Composites.
Var mse(Var a, Var b);
Var l2_normalize_rows(Var x);  // [n,d]; throws on a near-zero row

}  // namespace lipsync::ad
