#pragma once

#include <memory>
#include <vector>

#include "densr/bicubic.hpp"
#include "densr/denoiser.hpp"
#include "densr/nn.hpp"

namespace densr {

/// Differentiable bicubic upsampling by an integer factor (a linear map, so
/// its backward is the adjoint scatter of the same tap weights).
template <class S>
Var<S> bicubic_upsample(const Var<S>& x, int factor) {
  const auto& v = x.value();
  if (v.rank() != 4) throw std::invalid_argument("bicubic_upsample expects [N,C,H,W]");
  const int n = v.shape[0], c = v.shape[1], h = v.shape[2], w = v.shape[3];
  const int oh = h * factor, ow = w * factor;

  std::vector<detail::Taps> tx(static_cast<std::size_t>(ow)), ty(static_cast<std::size_t>(oh));
  for (int i = 0; i < ow; ++i) tx[static_cast<std::size_t>(i)] = detail::axis_taps(i, 1.0 / factor);
  for (int i = 0; i < oh; ++i) ty[static_cast<std::size_t>(i)] = detail::axis_taps(i, 1.0 / factor);

  Tensor<S> out({n, c, oh, ow});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int y = 0; y < oh; ++y) {
        const auto& tyr = ty[static_cast<std::size_t>(y)];
        for (int xo = 0; xo < ow; ++xo) {
          const auto& txr = tx[static_cast<std::size_t>(xo)];
          double acc = 0;
          for (std::size_t ki = 0; ki < tyr.w.size(); ++ki) {
            const int iy = detail::reflect_index(tyr.first + static_cast<int>(ki), h);
            double row = 0;
            for (std::size_t kj = 0; kj < txr.w.size(); ++kj)
              row += txr.w[kj] *
                     static_cast<double>(v.at4(in, ic, iy, detail::reflect_index(txr.first + static_cast<int>(kj), w)));
            acc += tyr.w[ki] * row;
          }
          out.at4(in, ic, y, xo) = static_cast<S>(acc);
        }
      }

  return ag::make_op<S>(
      std::move(out), {x},
      [tx, ty, n, c, h, w, oh, ow](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        ag::forbid_create_graph("bicubic_upsample");
        const auto& gv = g.value();
        Tensor<S> dx({n, c, h, w});
        for (int in = 0; in < n; ++in)
          for (int ic = 0; ic < c; ++ic)
            for (int y = 0; y < oh; ++y) {
              const auto& tyr = ty[static_cast<std::size_t>(y)];
              for (int xo = 0; xo < ow; ++xo) {
                const auto& txr = tx[static_cast<std::size_t>(xo)];
                const double gval = static_cast<double>(gv.at4(in, ic, y, xo));
                for (std::size_t ki = 0; ki < tyr.w.size(); ++ki) {
                  const int iy = detail::reflect_index(tyr.first + static_cast<int>(ki), h);
                  for (std::size_t kj = 0; kj < txr.w.size(); ++kj) {
                    const int ix = detail::reflect_index(txr.first + static_cast<int>(kj), w);
                    dx.at4(in, ic, iy, ix) += static_cast<S>(tyr.w[ki] * txr.w[kj] * gval);
                  }
                }
              }
            }
        return {Var<S>::constant(std::move(dx))};
      },
      "bicubic_upsample");
}

struct SuperresConfig {
  int width = 64;
  int coarse_blocks = 3;
  int trunk_blocks = 2;
  int num_landmarks = 81;
  int parsing_classes = 4;
  int scale = 4;  // 4 or 8
  bool attention = true;
};

/// Coarse upsampler: residual blocks at LR resolution, sub-pixel upsampling
/// by the scale factor, and a global bicubic skip. The zero-initialized
/// output convolution makes the initial coarse image exactly the bicubic
/// upsample of its input.
template <class S>
class CoarseSR : public nn::Module<S> {
 public:
  CoarseSR(const SuperresConfig& cfg, Pcg32& rng)
      : head_(3, cfg.width, rng, cfg.attention),
        up_(cfg.width, cfg.scale, rng),
        out_(cfg.width, 3, 3, 1, 1, rng, /*zero_init=*/true),
        scale_(cfg.scale) {
    if (cfg.scale != 4 && cfg.scale != 8) throw std::invalid_argument("coarse_sr: scale must be 4 or 8");
    this->add_child("head", &head_);
    for (int i = 0; i < cfg.coarse_blocks; ++i) {
      blocks_.push_back(std::make_unique<nn::ResidualBlockCA<S>>(cfg.width, rng, cfg.attention));
      this->add_child("res" + std::to_string(i), blocks_.back().get());
    }
    this->add_child("up", &up_);
    this->add_child("out", &out_);
  }

  Var<S> forward(const Var<S>& lr) {
    Var<S> y = head_.forward(lr);
    for (auto& b : blocks_) y = b->forward(y);
    return ag::add(out_.forward(up_.forward(y)), bicubic_upsample(lr, scale_));
  }

  int scale() const { return scale_; }
  std::int64_t multiadds(int h, int w) const {
    std::int64_t m = head_.macs(h, w);
    for (const auto& b : blocks_) m += b->macs(h, w);
    m += up_.macs(h, w);
    m += out_.spec().macs(h * scale_, w * scale_);
    return m;
  }

 private:
  nn::ConvBlock<S> head_;
  std::vector<std::unique_ptr<nn::ResidualBlockCA<S>>> blocks_;
  nn::UpsampleBlock<S> up_;
  nn::Conv2d<S> out_;
  int scale_;
};

template <class S>
struct PriorTensor {
  Var<S> parsing;    // [N, C_p, p, p], per-pixel probabilities
  Var<S> landmarks;  // [N, K, p, p], values in (0,1)

  Var<S> concatenated() const { return ag::concat_channels(parsing, landmarks); }
};

/// Estimates parsing probability maps and landmark heatmaps from the coarse
/// image through a learned 4x downsampling stem (HR -> HR/4).
template <class S>
class PriorEstimator : public nn::Module<S> {
 public:
  PriorEstimator(const SuperresConfig& cfg, Pcg32& rng)
      : stem1_(3, cfg.width, rng, cfg.attention),
        stem2_(cfg.width, cfg.width, rng, cfg.attention),
        parsing_head_(cfg.width, cfg.parsing_classes, 3, 1, 1, rng),
        landmark_head_(cfg.width, cfg.num_landmarks, 3, 1, 1, rng) {
    this->add_child("stem1", &stem1_);
    this->add_child("stem2", &stem2_);
    for (int i = 0; i < cfg.trunk_blocks; ++i) {
      trunk_.push_back(std::make_unique<nn::ResidualBlockCA<S>>(cfg.width, rng, cfg.attention));
      this->add_child("trunk" + std::to_string(i), trunk_.back().get());
    }
    this->add_child("parsing_head", &parsing_head_);
    this->add_child("landmark_head", &landmark_head_);
  }

  PriorTensor<S> forward(const Var<S>& coarse) {
    Var<S> y = stem2_.forward(stem1_.forward(coarse));
    for (auto& b : trunk_) y = b->forward(y);
    PriorTensor<S> prior;
    prior.parsing = ag::softmax_channels(parsing_head_.forward(y));
    prior.landmarks = ag::sigmoid(landmark_head_.forward(y));
    return prior;
  }

  std::int64_t multiadds(int h, int w) const {
    std::int64_t m = stem1_.macs(h, w) + stem2_.macs(h / 2, w / 2);
    for (const auto& b : trunk_) m += b->macs(h / 4, w / 4);
    m += parsing_head_.spec().macs(h / 4, w / 4) + landmark_head_.spec().macs(h / 4, w / 4);
    return m;
  }

 private:
  nn::StridedConvBlock<S> stem1_, stem2_;
  std::vector<std::unique_ptr<nn::ResidualBlockCA<S>>> trunk_;
  nn::Conv2d<S> parsing_head_, landmark_head_;
};

/// HR image -> HR/4 feature map; spatially aligned with the prior.
template <class S>
class Encoder : public nn::Module<S> {
 public:
  Encoder(const SuperresConfig& cfg, Pcg32& rng)
      : head_(3, cfg.width, rng, cfg.attention),
        down1_(cfg.width, cfg.width, rng, cfg.attention),
        down2_(cfg.width, cfg.width, rng, cfg.attention) {
    this->add_child("head", &head_);
    this->add_child("down1", &down1_);
    this->add_child("down2", &down2_);
  }
  Var<S> forward(const Var<S>& coarse) {
    return down2_.forward(down1_.forward(head_.forward(coarse)));
  }
  std::int64_t multiadds(int h, int w) const {
    return head_.macs(h, w) + down1_.macs(h, w) + down2_.macs(h / 2, w / 2);
  }

 private:
  nn::ConvBlock<S> head_;
  nn::StridedConvBlock<S> down1_, down2_;
};

/// Fused features (encoder output ++ prior) -> final HR image, refining the
/// coarse estimate through a global skip. Zero-initialized output conv makes
/// the initial refinement the identity on the coarse image.
template <class S>
class Decoder : public nn::Module<S> {
 public:
  Decoder(const SuperresConfig& cfg, Pcg32& rng)
      : fuse_(cfg.width + cfg.parsing_classes + cfg.num_landmarks, cfg.width, rng, cfg.attention),
        up_(cfg.width, 4, rng),
        out_(cfg.width, 3, 3, 1, 1, rng, /*zero_init=*/true) {
    this->add_child("fuse", &fuse_);
    for (int i = 0; i < cfg.trunk_blocks; ++i) {
      blocks_.push_back(std::make_unique<nn::ResidualBlockCA<S>>(cfg.width, rng, cfg.attention));
      this->add_child("res" + std::to_string(i), blocks_.back().get());
    }
    this->add_child("up", &up_);
    this->add_child("out", &out_);
  }
  Var<S> forward(const Var<S>& fused, const Var<S>& coarse) {
    Var<S> y = fuse_.forward(fused);
    for (auto& b : blocks_) y = b->forward(y);
    return ag::add(out_.forward(up_.forward(y)), coarse);
  }
  std::int64_t multiadds(int h, int w) const {
    std::int64_t m = fuse_.macs(h, w);
    for (const auto& b : blocks_) m += b->macs(h, w);
    m += up_.macs(h, w);
    m += out_.spec().macs(h * 4, w * 4);
    return m;
  }

 private:
  nn::ConvBlock<S> fuse_;
  std::vector<std::unique_ptr<nn::ResidualBlockCA<S>>> blocks_;
  nn::UpsampleBlock<S> up_;
  nn::Conv2d<S> out_;
};

template <class S>
struct SRForwardTrace {
  Var<S> coarse;          // HR-sized coarse estimate
  PriorTensor<S> prior;
  Var<S> fused;           // [encoder features ++ prior]
  Var<S> sr;              // final HR output
};

/// The whole generator: denoising half followed by the super-resolution half.
/// Returns every intermediate the losses consume.
template <class S>
class Generator : public nn::Module<S> {
 public:
  Generator(const DenoiserConfig& dcfg, const SuperresConfig& scfg, Pcg32& rng)
      : denoiser_(dcfg, rng),
        coarse_(scfg, rng),
        prior_(scfg, rng),
        encoder_(scfg, rng),
        decoder_(scfg, rng),
        scale_(scfg.scale) {
    this->add_child("denoiser", &denoiser_);
    this->add_child("coarse", &coarse_);
    this->add_child("prior", &prior_);
    this->add_child("encoder", &encoder_);
    this->add_child("decoder", &decoder_);
  }

  std::pair<DenoiserOutput<S>, SRForwardTrace<S>> forward(const Var<S>& lr_masked) {
    DenoiserOutput<S> den = denoiser_.forward(lr_masked);
    SRForwardTrace<S> trace;
    trace.coarse = coarse_.forward(den.lr_denoised);
    trace.prior = prior_.forward(trace.coarse);
    Var<S> enc = encoder_.forward(trace.coarse);
    trace.fused = ag::concat_channels(enc, trace.prior.concatenated());
    trace.sr = decoder_.forward(trace.fused, trace.coarse);
    return {std::move(den), std::move(trace)};
  }

  Denoiser<S>& denoiser() { return denoiser_; }
  CoarseSR<S>& coarse_net() { return coarse_; }
  PriorEstimator<S>& prior_net() { return prior_; }
  Encoder<S>& encoder() { return encoder_; }
  Decoder<S>& decoder() { return decoder_; }
  int scale() const { return scale_; }

  /// Conv/linear multiply-accumulate count for one LR input of (h, w).
  std::int64_t multiadds(int h, int w) const {
    const int hh = h * scale_, hw = w * scale_;
    return denoiser_.multiadds(h, w) + coarse_.multiadds(h, w) + prior_.multiadds(hh, hw) +
           encoder_.multiadds(hh, hw) + decoder_.multiadds(hh / 4, hw / 4);
  }

 private:
  Denoiser<S> denoiser_;
  CoarseSR<S> coarse_;
  PriorEstimator<S> prior_;
  Encoder<S> encoder_;
  Decoder<S> decoder_;
  int scale_;
};

}  // namespace densr
