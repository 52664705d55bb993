#pragma once

#include <memory>
#include <vector>

#include "densr/nn.hpp"

namespace densr {

struct CriticConfig {
  int base_width = 64;
  int input_size = 128;
};

/// Wasserstein critic: five stride-2 convolutions with leaky rectifiers (no
/// normalization layers), then a linear map to one unbounded score per image.
template <class S>
class Critic : public nn::Module<S> {
 public:
  Critic(const CriticConfig& cfg, Pcg32& rng) : input_size_(cfg.input_size) {
    if (cfg.input_size % 32 != 0) throw std::invalid_argument("critic: input size must be divisible by 32");
    const int b = cfg.base_width;
    const int widths[6] = {3, b, 2 * b, 4 * b, 8 * b, 8 * b};
    for (int i = 0; i < 5; ++i) {
      convs_.push_back(std::make_unique<nn::Conv2d<S>>(widths[i], widths[i + 1], 3, 2, 1, rng));
      this->add_child("conv" + std::to_string(i), convs_.back().get());
    }
    const int final_spatial = cfg.input_size / 32;
    flat_dim_ = 8 * b * final_spatial * final_spatial;
    fc_ = std::make_unique<nn::Linear<S>>(flat_dim_, 1, rng);
    this->add_child("fc", fc_.get());
  }

  /// Batched scores, one unbounded scalar per image, shape [N].
  Var<S> score(const Var<S>& img) const {
    const auto& v = img.value();
    if (v.rank() != 4 || v.shape[1] != 3 || v.shape[2] != input_size_ || v.shape[3] != input_size_)
      throw std::invalid_argument("critic expects [N,3," + std::to_string(input_size_) + "," +
                                  std::to_string(input_size_) + "]");
    Var<S> y = img;
    for (const auto& c : convs_) y = ag::leaky_relu(c->forward(y), S(0.2));
    y = fc_->forward(ag::reshape(y, {v.shape[0], flat_dim_}));
    return ag::reshape(y, {v.shape[0]});
  }

  nn::Linear<S>& final_fc() { return *fc_; }
  int input_size() const { return input_size_; }

  std::int64_t multiadds() const {
    std::int64_t m = 0;
    int h = input_size_, w = input_size_;
    for (const auto& c : convs_) {
      m += c->spec().macs(h, w);
      h = c->spec().out_h(h);
      w = c->spec().out_w(w);
    }
    return m + fc_->macs();
  }

 private:
  std::vector<std::unique_ptr<nn::Conv2d<S>>> convs_;
  std::unique_ptr<nn::Linear<S>> fc_;
  int input_size_;
  int flat_dim_;
};

/// Interpolates x_hat = eps*real + (1-eps)*fake per batch element and returns
/// mean((||grad_{x_hat} D||_2 - 1)^2). The caller applies the eta factor.
/// `eps` is injectable for tests; values must lie in [0,1]. The scorer is any
/// callable mapping a [N,...] Var to per-sample scores [N].
template <class S, class ScoreFn>
Var<S> gradient_penalty_fn(const ScoreFn& score, const Tensor<S>& real, const Tensor<S>& fake,
                           const std::vector<S>& eps) {
  check_same_shape(real, fake, "gradient_penalty");
  const int n = real.shape[0];
  if (static_cast<int>(eps.size()) != n)
    throw std::invalid_argument("gradient_penalty: one eps per batch element");

  Tensor<S> mix(real.shape);
  const std::int64_t per = real.numel() / n;
  for (int i = 0; i < n; ++i) {
    const S e = eps[static_cast<std::size_t>(i)];
    if (e < S(0) || e > S(1)) throw std::invalid_argument("gradient_penalty: eps outside [0,1]");
    for (std::int64_t j = 0; j < per; ++j)
      mix[i * per + j] = e * real[i * per + j] + (S(1) - e) * fake[i * per + j];
  }

  Var<S> x_hat = Var<S>::leaf(std::move(mix), true);
  Var<S> scores = score(x_hat);
  // scores decompose per sample, so the gradient of the sum stacks the
  // per-sample input gradients
  Var<S> g = ag::grad(ag::sum_all(scores), {x_hat}, /*create_graph=*/true)[0];
  Var<S> norm = ag::sqrt_op(ag::sum_per_sample(ag::mul(g, g)));
  Var<S> diff = ag::add_scalar(norm, S(-1));
  return ag::mean_all(ag::mul(diff, diff));
}

template <class S>
Var<S> gradient_penalty(const Critic<S>& critic, const Tensor<S>& real, const Tensor<S>& fake,
                        const std::vector<S>& eps) {
  return gradient_penalty_fn<S>([&](const Var<S>& x) { return critic.score(x); }, real, fake, eps);
}

/// Standard WGAN-GP critic objective: mean D(fake) - mean D(real) + eta*GP.
/// `fake` must already be detached from the generator.
template <class S, class ScoreFn>
Var<S> critic_loss_fn(const ScoreFn& score, const Tensor<S>& real, const Tensor<S>& fake,
                      const std::vector<S>& eps, S eta) {
  Var<S> d_fake = ag::mean_all(score(Var<S>::constant(fake)));
  Var<S> d_real = ag::mean_all(score(Var<S>::constant(real)));
  Var<S> gp = gradient_penalty_fn<S>(score, real, fake, eps);
  return ag::add(ag::sub(d_fake, d_real), ag::mul_scalar(gp, eta));
}

template <class S>
Var<S> critic_loss(const Critic<S>& critic, const Tensor<S>& real, const Tensor<S>& fake,
                   const std::vector<S>& eps, S eta) {
  return critic_loss_fn<S>([&](const Var<S>& x) { return critic.score(x); }, real, fake, eps, eta);
}

/// Generator-side adversarial term: -mean D(fake), gradients flowing through
/// `fake` into the generator (critic parameters held fixed by the caller).
template <class S>
Var<S> adversarial_generator_loss(const Critic<S>& critic, const Var<S>& fake) {
  return ag::neg(ag::mean_all(critic.score(fake)));
}

}  // namespace densr
