#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "densr/ops.hpp"
#include "densr/rng.hpp"

namespace densr {

template <class S>
using Var = ag::Var<S>;

namespace nn {

using densr::Var;

/// Base class with a named parameter/buffer registry. Parameters are graph
/// leaves updated by the optimizer; buffers (running statistics) are
/// checkpointed but not trained.
template <class S>
class Module {
 public:
  virtual ~Module() = default;

  Var<S>& add_param(const std::string& name, Tensor<S> init) {
    params_.emplace_back(name, Var<S>::leaf(std::move(init), true));
    return params_.back().second;
  }
  Tensor<S>* add_buffer(const std::string& name, Tensor<S>* t) {
    buffers_.emplace_back(name, t);
    return t;
  }
  void add_child(const std::string& name, Module<S>* m) { children_.emplace_back(name, m); }

  void for_each_param(const std::function<void(const std::string&, Var<S>&)>& fn,
                      const std::string& prefix = "") {
    for (auto& [n, v] : params_) fn(prefix + n, v);
    for (auto& [n, m] : children_) m->for_each_param(fn, prefix + n + ".");
  }
  void for_each_buffer(const std::function<void(const std::string&, Tensor<S>&)>& fn,
                       const std::string& prefix = "") {
    for (auto& [n, t] : buffers_) fn(prefix + n, *t);
    for (auto& [n, m] : children_) m->for_each_buffer(fn, prefix + n + ".");
  }

  void set_training(bool t) {
    training_ = t;
    for (auto& [n, m] : children_) m->set_training(t);
  }
  bool training() const { return training_; }

  std::size_t param_count() {
    std::size_t n = 0;
    for_each_param([&](const std::string&, Var<S>& v) { n += static_cast<std::size_t>(v.value().numel()); });
    return n;
  }
  void zero_grad() {
    for_each_param([](const std::string&, Var<S>& v) { v.zero_grad(); });
  }
  void set_requires_grad(bool rg) {
    for_each_param([rg](const std::string&, Var<S>& v) { v.node()->requires_grad = rg; });
  }
  std::uint64_t param_hash() {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for_each_param([&](const std::string& n, Var<S>& v) {
      h = fnv1a(n.data(), n.size(), h);
      h = tensor_hash(v.value(), h);
    });
    return h;
  }

 private:
  std::vector<std::pair<std::string, Var<S>>> params_;
  std::vector<std::pair<std::string, Tensor<S>*>> buffers_;
  std::vector<std::pair<std::string, Module<S>*>> children_;
  bool training_ = true;
};

template <class S>
Tensor<S> kaiming_normal(std::vector<int> shape, int fan_in, Pcg32& rng) {
  Tensor<S> t(std::move(shape));
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& v : t.data) v = static_cast<S>(rng.gaussian() * std);
  return t;
}

struct ConvSpec {
  int cin, cout, k, stride, pad;
  int out_h(int h) const { return (h + 2 * pad - k) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - k) / stride + 1; }
  std::int64_t macs(int h, int w) const {
    return static_cast<std::int64_t>(k) * k * cin * cout * out_h(h) * out_w(w);
  }
};

template <class S>
class Conv2d : public Module<S> {
 public:
  Conv2d(int cin, int cout, int k, int stride, int pad, Pcg32& rng, bool zero_init = false,
         bool bias = true)
      : spec_{cin, cout, k, stride, pad} {
    Tensor<S> w = zero_init ? Tensor<S>::zeros({cout, cin, k, k})
                            : kaiming_normal<S>({cout, cin, k, k}, cin * k * k, rng);
    weight_ = this->add_param("weight", std::move(w));
    if (bias) bias_ = this->add_param("bias", Tensor<S>::zeros({cout}));
  }

  Var<S> forward(const Var<S>& x) const {
    return ag::conv2d(x, weight_, bias_, spec_.stride, spec_.pad);
  }
  const ConvSpec& spec() const { return spec_; }
  Var<S>& weight() { return weight_; }
  Var<S>& bias() { return bias_; }

 private:
  ConvSpec spec_;
  Var<S> weight_, bias_;
};

template <class S>
class Linear : public Module<S> {
 public:
  Linear(int in, int out, Pcg32& rng, bool zero_init = false) : in_(in), out_(out) {
    Tensor<S> w =
        zero_init ? Tensor<S>::zeros({out, in}) : kaiming_normal<S>({out, in}, in, rng);
    weight_ = this->add_param("weight", std::move(w));
    bias_ = this->add_param("bias", Tensor<S>::zeros({out}));
  }
  Var<S> forward(const Var<S>& x) const { return ag::linear(x, weight_, bias_); }
  std::int64_t macs() const { return static_cast<std::int64_t>(in_) * out_; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_, out_;
  Var<S> weight_, bias_;
};

template <class S>
class BatchNorm2d : public Module<S> {
 public:
  explicit BatchNorm2d(int channels) : channels_(channels) {
    gamma_ = this->add_param("gamma", Tensor<S>::full({channels}, S(1)));
    beta_ = this->add_param("beta", Tensor<S>::zeros({channels}));
    state_.running_mean = Tensor<S>::zeros({channels});
    state_.running_var = Tensor<S>::full({channels}, S(1));
    this->add_buffer("running_mean", &state_.running_mean);
    this->add_buffer("running_var", &state_.running_var);
  }
  Var<S> forward(const Var<S>& x) {
    return ag::batchnorm2d(x, gamma_, beta_, state_, this->training());
  }

 private:
  int channels_;
  Var<S> gamma_, beta_;
  ag::BatchNormState<S> state_;
};

/// Largest reduction <= 16 that divides `channels` while keeping the
/// bottleneck at least 4 wide (or `channels` itself when narrower).
inline int default_attention_reduction(int channels) {
  int r = channels / 4;
  if (r > 16) r = 16;
  if (r < 1) r = 1;
  while (channels % r != 0) --r;
  return r;
}

/// Squeeze-excitation gate: global average pool, bottleneck MLP, sigmoid,
/// per-channel rescale.
template <class S>
class ChannelAttention : public Module<S> {
 public:
  ChannelAttention(int channels, int reduction, Pcg32& rng)
      : channels_(channels), reduction_(reduction), fc1_(nullptr), fc2_(nullptr) {
    if (reduction <= 0 || channels % reduction != 0)
      throw std::invalid_argument("channel_attention: channels not divisible by reduction");
    const int mid = channels / reduction;
    fc1_ = std::make_unique<Linear<S>>(channels, mid, rng);
    fc2_ = std::make_unique<Linear<S>>(mid, channels, rng);
    this->add_child("fc1", fc1_.get());
    this->add_child("fc2", fc2_.get());
  }

  /// Gate weights only, in (0,1), shape [N,C].
  Var<S> weights(const Var<S>& x) const {
    Var<S> s = ag::global_avg_pool(x);
    s = ag::relu(fc1_->forward(s));
    return ag::sigmoid(fc2_->forward(s));
  }
  Var<S> forward(const Var<S>& x) const { return ag::channel_scale(x, weights(x)); }
  std::int64_t macs() const { return fc1_->macs() + fc2_->macs(); }

 private:
  int channels_, reduction_;
  std::unique_ptr<Linear<S>> fc1_, fc2_;
};

/// 3x3 convolution + batch norm + ReLU, with optional channel attention.
template <class S>
class ConvBlock : public Module<S> {
 public:
  ConvBlock(int cin, int cout, Pcg32& rng, bool attention, int stride = 1)
      : conv_(cin, cout, 3, stride, 1, rng), bn_(cout) {
    this->add_child("conv", &conv_);
    this->add_child("bn", &bn_);
    if (attention) {
      ca_ = std::make_unique<ChannelAttention<S>>(cout, default_attention_reduction(cout), rng);
      this->add_child("ca", ca_.get());
    }
  }
  Var<S> forward(const Var<S>& x) {
    Var<S> y = ag::relu(bn_.forward(conv_.forward(x)));
    if (ca_) y = ca_->forward(y);
    return y;
  }
  std::int64_t macs(int h, int w) const {
    std::int64_t m = conv_.spec().macs(h, w);
    if (ca_) m += ca_->macs();
    return m;
  }
  const ConvSpec& spec() const { return conv_.spec(); }

 private:
  Conv2d<S> conv_;
  BatchNorm2d<S> bn_;
  std::unique_ptr<ChannelAttention<S>> ca_;
};

/// Two conv layers + channel attention on the residual branch, then the skip
/// addition. The second conv/bn pair is zero-initialized so a fresh block is
/// exactly the identity.
template <class S>
class ResidualBlockCA : public Module<S> {
 public:
  ResidualBlockCA(int channels, Pcg32& rng, bool attention)
      : conv1_(channels, channels, 3, 1, 1, rng),
        bn1_(channels),
        conv2_(channels, channels, 3, 1, 1, rng, /*zero_init=*/true),
        bn2_(channels) {
    this->add_child("conv1", &conv1_);
    this->add_child("bn1", &bn1_);
    this->add_child("conv2", &conv2_);
    this->add_child("bn2", &bn2_);
    if (attention) {
      ca_ = std::make_unique<ChannelAttention<S>>(channels, default_attention_reduction(channels), rng);
      this->add_child("ca", ca_.get());
    }
  }
  Var<S> forward(const Var<S>& x) {
    Var<S> y = ag::relu(bn1_.forward(conv1_.forward(x)));
    y = bn2_.forward(conv2_.forward(y));
    if (ca_) y = ca_->forward(y);
    return ag::add(x, y);
  }
  std::int64_t macs(int h, int w) const {
    std::int64_t m = conv1_.spec().macs(h, w) + conv2_.spec().macs(h, w);
    if (ca_) m += ca_->macs();
    return m;
  }
  Conv2d<S>& final_conv() { return conv2_; }

 private:
  Conv2d<S> conv1_;
  BatchNorm2d<S> bn1_;
  Conv2d<S> conv2_;
  BatchNorm2d<S> bn2_;
  std::unique_ptr<ChannelAttention<S>> ca_;
};

/// 3x3 stride-2 convolution block; halves both spatial dimensions.
template <class S>
class StridedConvBlock : public Module<S> {
 public:
  StridedConvBlock(int cin, int cout, Pcg32& rng, bool attention)
      : block_(cin, cout, rng, attention, /*stride=*/2) {
    this->add_child("block", &block_);
  }
  Var<S> forward(const Var<S>& x) { return block_.forward(x); }
  std::int64_t macs(int h, int w) const { return block_.macs(h, w); }

 private:
  ConvBlock<S> block_;
};

/// Sub-pixel upsampling: channel-expanding 3x3 conv + pixel shuffle + ReLU
/// per x2 stage. `factor` must be a power of two.
template <class S>
class UpsampleBlock : public Module<S> {
 public:
  UpsampleBlock(int channels, int factor, Pcg32& rng) : channels_(channels), factor_(factor) {
    int f = factor;
    if (f < 2 || (f & (f - 1)) != 0) throw std::invalid_argument("upsample factor must be a power of two >= 2");
    int idx = 0;
    while (f > 1) {
      stages_.push_back(std::make_unique<Conv2d<S>>(channels, channels * 4, 3, 1, 1, rng));
      this->add_child("stage" + std::to_string(idx++), stages_.back().get());
      f /= 2;
    }
  }
  Var<S> forward(const Var<S>& x) const {
    Var<S> y = x;
    for (const auto& conv : stages_) y = ag::relu(ag::pixel_shuffle(conv->forward(y), 2));
    return y;
  }
  std::int64_t macs(int h, int w) const {
    std::int64_t m = 0;
    for (const auto& conv : stages_) {
      m += conv->spec().macs(h, w);
      h *= 2;
      w *= 2;
    }
    return m;
  }
  int factor() const { return factor_; }

 private:
  int channels_, factor_;
  std::vector<std::unique_ptr<Conv2d<S>>> stages_;
};

}  // namespace nn
}  // namespace densr
