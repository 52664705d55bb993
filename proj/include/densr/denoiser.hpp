#pragma once

#include <memory>
#include <vector>

#include "densr/nn.hpp"

namespace densr {

struct DenoiserConfig {
  int noise_width = 32;    // noise-estimation subnetwork channels
  int denoise_width = 64;  // encoder-decoder channels
  bool attention = true;
};

/// Noise-estimation subnetwork: five convolution layers at constant width and
/// resolution, final rectifier enforcing a nonnegative per-pixel noise map.
template <class S>
class NoiseEstimator : public nn::Module<S> {
 public:
  NoiseEstimator(const DenoiserConfig& cfg, Pcg32& rng)
      : b1_(3, cfg.noise_width, rng, cfg.attention),
        b2_(cfg.noise_width, cfg.noise_width, rng, cfg.attention),
        b3_(cfg.noise_width, cfg.noise_width, rng, cfg.attention),
        b4_(cfg.noise_width, cfg.noise_width, rng, cfg.attention),
        out_(cfg.noise_width, 3, 3, 1, 1, rng, /*zero_init=*/true) {
    this->add_child("b1", &b1_);
    this->add_child("b2", &b2_);
    this->add_child("b3", &b3_);
    this->add_child("b4", &b4_);
    this->add_child("out", &out_);
  }

  Var<S> forward(const Var<S>& lr_masked) {
    if (lr_masked.value().shape[1] != 3)
      throw std::invalid_argument("noise estimator expects a 3-channel image");
    Var<S> y = b4_.forward(b3_.forward(b2_.forward(b1_.forward(lr_masked))));
    return ag::relu(out_.forward(y));
  }

  nn::Conv2d<S>& output_conv() { return out_; }

  std::int64_t multiadds(int h, int w) const {
    return b1_.macs(h, w) + b2_.macs(h, w) + b3_.macs(h, w) + b4_.macs(h, w) +
           out_.spec().macs(h, w);
  }

 private:
  nn::ConvBlock<S> b1_, b2_, b3_, b4_;
  nn::Conv2d<S> out_;
};

/// Non-blind denoiser: consumes [noise map, image] concatenated along
/// channels, runs a two-level encoder-decoder with a skip connection, and
/// adds the input back (residual). Output is unclamped.
template <class S>
class DenoiseNet : public nn::Module<S> {
 public:
  DenoiseNet(const DenoiserConfig& cfg, Pcg32& rng)
      : e0_(6, cfg.denoise_width, rng, cfg.attention),
        e1_(cfg.denoise_width, cfg.denoise_width, rng, cfg.attention),
        down_(cfg.denoise_width, 2 * cfg.denoise_width, rng, cfg.attention),
        mid_(2 * cfg.denoise_width, 2 * cfg.denoise_width, rng, cfg.attention),
        up_(2 * cfg.denoise_width, 2, rng),
        fuse_(3 * cfg.denoise_width, cfg.denoise_width, rng, cfg.attention),
        out_(cfg.denoise_width, 3, 3, 1, 1, rng, /*zero_init=*/true) {
    this->add_child("e0", &e0_);
    this->add_child("e1", &e1_);
    this->add_child("down", &down_);
    this->add_child("mid", &mid_);
    this->add_child("up", &up_);
    this->add_child("fuse", &fuse_);
    this->add_child("out", &out_);
  }

  Var<S> forward(const Var<S>& lr_masked, const Var<S>& gamma) {
    check_same_shape(gamma.value(), lr_masked.value(), "denoise");
    Var<S> x = ag::concat_channels(gamma, lr_masked);
    Var<S> s1 = e1_.forward(e0_.forward(x));
    Var<S> d = mid_.forward(down_.forward(s1));
    Var<S> u = up_.forward(d);
    Var<S> f = fuse_.forward(ag::concat_channels(u, s1));
    return ag::add(out_.forward(f), lr_masked);
  }

  nn::Conv2d<S>& output_conv() { return out_; }

  std::int64_t multiadds(int h, int w) const {
    return e0_.macs(h, w) + e1_.macs(h, w) + down_.macs(h, w) + mid_.macs(h / 2, w / 2) +
           up_.macs(h / 2, w / 2) + fuse_.macs(h, w) + out_.spec().macs(h, w);
  }

 private:
  nn::ConvBlock<S> e0_, e1_;
  nn::StridedConvBlock<S> down_;
  nn::ConvBlock<S> mid_;
  nn::UpsampleBlock<S> up_;
  nn::ConvBlock<S> fuse_;
  nn::Conv2d<S> out_;
};

template <class S>
struct DenoiserOutput {
  Var<S> gamma;        // estimated noise level map, >= 0
  Var<S> lr_denoised;  // input + residual branch
};

/// Full denoising half of the generator.
template <class S>
class Denoiser : public nn::Module<S> {
 public:
  Denoiser(const DenoiserConfig& cfg, Pcg32& rng) : estimator_(cfg, rng), net_(cfg, rng) {
    this->add_child("est", &estimator_);
    this->add_child("net", &net_);
  }

  Var<S> estimate_noise(const Var<S>& lr_masked) { return estimator_.forward(lr_masked); }
  Var<S> denoise(const Var<S>& lr_masked, const Var<S>& gamma) {
    return net_.forward(lr_masked, gamma);
  }
  DenoiserOutput<S> forward(const Var<S>& lr_masked) {
    DenoiserOutput<S> out;
    out.gamma = estimate_noise(lr_masked);
    out.lr_denoised = denoise(lr_masked, out.gamma);
    return out;
  }

  NoiseEstimator<S>& estimator() { return estimator_; }
  DenoiseNet<S>& net() { return net_; }
  std::int64_t multiadds(int h, int w) const {
    return estimator_.multiadds(h, w) + net_.multiadds(h, w);
  }

 private:
  NoiseEstimator<S> estimator_;
  DenoiseNet<S> net_;
};

}  // namespace densr
