#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "densr/autograd.hpp"
#include "densr/tensor.hpp"

namespace densr {

/// Adam over a fixed list of named parameters. Moment tensors are exposed by
/// name so checkpoints can carry the full optimizer state.
template <class S>
class Adam {
 public:
  struct Slot {
    std::string name;
    ag::Var<S> param;
    Tensor<S> m, v;
  };

  Adam(S lr, S beta1 = S(0.5), S beta2 = S(0.999), S eps = S(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void add_param(const std::string& name, const ag::Var<S>& p) {
    Slot s;
    s.name = name;
    s.param = p;
    s.m = Tensor<S>::zeros(p.value().shape);
    s.v = Tensor<S>::zeros(p.value().shape);
    slots_.push_back(std::move(s));
  }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  /// One update from the gradients currently accumulated on the parameters.
  /// Parameters without a gradient this step are left untouched.
  void step() {
    ++t_;
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1_), static_cast<double>(t_)));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2_), static_cast<double>(t_)));
    for (auto& s : slots_) {
      if (!s.param.has_grad()) continue;
      const Tensor<S>& g = s.param.grad();
      Tensor<S>& p = s.param.mutable_value();
      for (std::int64_t i = 0; i < p.numel(); ++i) {
        s.m[i] = beta1_ * s.m[i] + (S(1) - beta1_) * g[i];
        s.v[i] = beta2_ * s.v[i] + (S(1) - beta2_) * g[i] * g[i];
        const S mhat = s.m[i] / bc1;
        const S vhat = s.v[i] / bc2;
        p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  std::vector<Slot>& slots() { return slots_; }
  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  S learning_rate() const { return lr_; }

 private:
  S lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace densr
