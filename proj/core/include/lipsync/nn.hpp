#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lipsync/autodiff.hpp"
#include "lipsync/tensor.hpp"

namespace lipsync::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

// Ordered, uniquely named parameter registry. Iteration order == creation
// order, which keeps optimizer updates and checkpoints deterministic.
class ParamStore {
 public:
  Param& create(const std::string& name, Tensor init, bool trainable = true) {
    require(index_.find(name) == index_.end(), ErrorCode::InvalidArgument,
            "duplicate parameter name: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->grad = Tensor(init.shape());
    p->value = std::move(init);
    p->trainable = trainable;
    params_.push_back(std::move(p));
    index_[name] = params_.size() - 1;
    return *params_.back();
  }

  Param* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Param* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  size_t size() const { return params_.size(); }
  Param& at(size_t i) { return *params_[i]; }
  const Param& at(size_t i) const { return *params_[i]; }

  std::vector<Param*> all() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0);
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, size_t> index_;
};

// Binds Params onto a tape once per forward pass and pushes node gradients
// back into Param::grad after backward.
class Binder {
 public:
  // freeze=true binds every parameter without gradient tracking (frozen
  // expert during generator training, pure inference passes).
  explicit Binder(ad::Tape& tape, bool freeze = false) : tape_(&tape), freeze_(freeze) {}

  ad::Var operator()(Param& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    ad::Var v = tape_->leaf(p.value, p.trainable && !freeze_);
    bound_.emplace(&p, v);
    order_.push_back(&p);
    return v;
  }

  // Accumulate tape gradients into Param::grad (call after Tape::backward).
  void collect_grads() {
    for (Param* p : order_) {
      ad::Var v = bound_.at(p);
      if (!v.has_grad()) continue;
      const Tensor& g = v.grad();
      for (int64_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    }
  }

 private:
  ad::Tape* tape_;
  bool freeze_ = false;
  std::map<Param*, ad::Var> bound_;
  std::vector<Param*> order_;
};

// Adam with bias correction. State is keyed by parameter identity; update
// order follows the provided list, which callers keep deterministic.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Param*>& params) {
    ++t_;
    double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (Param* p : params) {
      if (!p->trainable) continue;
      State& s = state(p);
      for (int64_t i = 0; i < p->value.size(); ++i) {
        double g = p->grad[i];
        s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * g;
        s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * g * g;
        double mhat = s.m[i] / c1;
        double vhat = s.v[i] / c2;
        p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  int64_t steps_taken() const { return t_; }

 private:
  struct State {
    Tensor m, v;
  };
  State& state(Param* p) {
    auto it = state_.find(p);
    if (it == state_.end()) {
      State s{Tensor(p->value.shape()), Tensor(p->value.shape())};
      it = state_.emplace(p, std::move(s)).first;
    }
    return it->second;
  }

  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::map<Param*, State> state_;
};

// Kaiming-style init for convolutions feeding leaky-rectifier units.
Tensor conv_init(Rng& rng, int out_ch, int in_ch, int kh, int kw, double neg_slope = 0.2);
Tensor linear_init(Rng& rng, int out_dim, int in_dim);

}  // namespace lipsync::nn
