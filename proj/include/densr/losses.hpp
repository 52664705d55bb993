#pragma once

#include <array>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "densr/critic.hpp"
#include "densr/features.hpp"
#include "densr/ops.hpp"
#include "densr/superres.hpp"

namespace densr {

/// The weighting constants of the composite objectives. Defaults are the
/// published values; indices follow the order the terms appear in the
/// denoising and super-resolution composites.
struct LossWeights {
  double alpha = 0.3;  // asymmetry parameter, in (0, 0.5)
  // denoising composite: asym, tv, style, perceptual, pixel, smooth
  std::array<double, 6> lambda1 = {0.5, 0.05, 10.0, 0.1, 1.0, 1.0};
  // super-resolution composite: face prior, perceptual, pixel, smooth, identity, adversarial
  std::array<double, 6> lambda2 = {1.0, 0.1, 1.0, 0.01, 1.0, 1e-3};
  double eta = 0.1;  // gradient-penalty coefficient
  double mu = 1.0;   // landmark term weight inside the face prior loss
  double nu = 0.1;   // parsing term weight inside the face prior loss

  void validate() const {
    if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("alpha must lie in (0, 0.5)");
    for (double v : lambda1)
      if (v < 0) throw std::invalid_argument("loss weights must be nonnegative");
    for (double v : lambda2)
      if (v < 0) throw std::invalid_argument("loss weights must be nonnegative");
    if (eta < 0 || mu < 0 || nu < 0) throw std::invalid_argument("loss weights must be nonnegative");
  }
};

// ---------------------------------------------------------------------------
// Individual terms
// ---------------------------------------------------------------------------

/// Asymmetric squared error: mean of |alpha - 1(d < 0)| * d^2 with
/// d = gamma_hat - gamma_gt. Underestimation costs more for alpha < 0.5.
template <class S>
ag::Var<S> asym_loss(const ag::Var<S>& gamma_hat, const ag::Var<S>& gamma_gt, S alpha) {
  check_same_shape(gamma_hat.value(), gamma_gt.value(), "asym_loss");
  if (!(alpha > S(0) && alpha < S(0.5))) throw std::invalid_argument("alpha must lie in (0, 0.5)");
  ag::Var<S> d = ag::sub(gamma_hat, gamma_gt);
  Tensor<S> w(d.value().shape);
  for (std::int64_t i = 0; i < w.numel(); ++i)
    w[i] = std::abs(alpha - (d.value()[i] < S(0) ? S(1) : S(0)));
  return ag::mean_all(ag::mul(ag::Var<S>::constant(std::move(w)), ag::mul(d, d)));
}

/// Squared anisotropic total variation (sum reduction) of the noise map.
template <class S>
ag::Var<S> tv_loss(const ag::Var<S>& gamma_hat) {
  ag::Var<S> dh = ag::diff_h(gamma_hat);
  ag::Var<S> dv = ag::diff_v(gamma_hat);
  return ag::add(ag::sum_all(ag::mul(dh, dh)), ag::sum_all(ag::mul(dv, dv)));
}

/// Mean absolute difference.
template <class S>
ag::Var<S> pixel_loss(const ag::Var<S>& pred, const ag::Var<S>& gt) {
  check_same_shape(pred.value(), gt.value(), "pixel_loss");
  return ag::mean_all(ag::abs_op(ag::sub(pred, gt)));
}

/// L1 distance between feature maps of one extractor layer, normalized by
/// the feature map's spatial size (not its channel count).
template <class S>
ag::Var<S> perceptual_loss(const ag::Var<S>& pred, const ag::Var<S>& gt,
                           const FeatureExtractor<S>& extractor, const std::string& layer) {
  auto fp = extractor.extract(pred, {layer});
  auto fg = extractor.extract(gt, {layer});
  const auto& shape = fp.at(layer).value().shape;
  const S norm = S(1) / static_cast<S>(shape[2] * shape[3]);
  const S batch = static_cast<S>(shape[0]);
  return ag::mul_scalar(ag::sum_all(ag::abs_op(ag::sub(fp.at(layer), fg.at(layer)))), norm / batch);
}

/// Anisotropic L1 total variation (sum reduction) of an image.
template <class S>
ag::Var<S> smooth_loss(const ag::Var<S>& img) {
  return ag::add(ag::sum_all(ag::abs_op(ag::diff_h(img))),
                 ag::sum_all(ag::abs_op(ag::diff_v(img))));
}

/// Channel-by-channel inner products of a [C,H,W] feature map: C x C.
template <class S>
ag::Var<S> gram(const ag::Var<S>& features) {
  const auto& v = features.value();
  if (v.rank() != 3) throw std::invalid_argument("gram expects [C,H,W]");
  ag::Var<S> flat = ag::reshape(features, {v.shape[0], v.shape[1] * v.shape[2]});
  return ag::matmul(flat, flat, false, true);
}

/// Batched gram matrices [N,C,H,W] -> [N,C,C].
template <class S>
ag::Var<S> gram_batch(const ag::Var<S>& features) {
  const auto& v = features.value();
  const int n = v.shape[0], c = v.shape[1];
  const std::int64_t hw = static_cast<std::int64_t>(v.shape[2]) * v.shape[3];
  Tensor<S> out({n, c, c});
  for (int i = 0; i < n; ++i) {
    ag::ECMap<S> F(v.ptr() + static_cast<std::int64_t>(i) * c * hw, c, hw);
    ag::EMap<S> G(out.ptr() + static_cast<std::int64_t>(i) * c * c, c, c);
    G.noalias() = F * F.transpose();
  }
  return ag::make_op<S>(
      std::move(out), {features},
      [features, n, c, hw](const ag::Var<S>& g, const std::vector<char>&) -> std::vector<ag::Var<S>> {
        ag::forbid_create_graph("gram_batch");
        const auto& fv = features.value();
        const auto& gv = g.value();
        Tensor<S> dx(fv.shape);
        for (int i = 0; i < n; ++i) {
          ag::ECMap<S> F(fv.ptr() + static_cast<std::int64_t>(i) * c * hw, c, hw);
          ag::ECMap<S> G(gv.ptr() + static_cast<std::int64_t>(i) * c * c, c, c);
          ag::EMap<S> D(dx.ptr() + static_cast<std::int64_t>(i) * c * hw, c, hw);
          D.noalias() = (G + G.transpose()) * F;
        }
        return {ag::Var<S>::constant(std::move(dx))};
      },
      "gram_batch");
}

/// Sum over extractor layers of F_n * ||Gram(gt) - Gram(pred)||_1 with
/// F_n = 1/(C_n * W_n * H_n), averaged over the batch.
template <class S>
ag::Var<S> style_loss(const ag::Var<S>& pred, const ag::Var<S>& gt,
                      const FeatureExtractor<S>& extractor,
                      const std::vector<std::string>& layers) {
  auto fp = extractor.extract(pred, layers);
  auto fg = extractor.extract(gt, layers);
  ag::Var<S> total;
  for (const auto& layer : layers) {
    const auto& shape = fp.at(layer).value().shape;
    const S fn = S(1) / static_cast<S>(shape[1] * shape[2] * shape[3]);
    const S batch = static_cast<S>(shape[0]);
    ag::Var<S> d =
        ag::sum_all(ag::abs_op(ag::sub(gram_batch(fg.at(layer)), gram_batch(fp.at(layer)))));
    ag::Var<S> term = ag::mul_scalar(d, fn / batch);
    total = total.defined() ? ag::add(total, term) : term;
  }
  return total;
}

namespace lossdet {
template <class S>
ag::Var<S> mean_per_sample_l2(const ag::Var<S>& d) {
  return ag::mean_all(ag::sqrt_op(ag::sum_per_sample(ag::mul(d, d))));
}
}  // namespace lossdet

/// mu * ||landmark difference||_2 + nu * ||parsing difference||_2, batch mean.
template <class S>
ag::Var<S> face_prior_loss(const PriorTensor<S>& pred, const PriorTensor<S>& gt, S mu, S nu) {
  check_same_shape(pred.landmarks.value(), gt.landmarks.value(), "face_prior_loss/landmarks");
  check_same_shape(pred.parsing.value(), gt.parsing.value(), "face_prior_loss/parsing");
  ag::Var<S> lm = lossdet::mean_per_sample_l2(ag::sub(pred.landmarks, gt.landmarks));
  ag::Var<S> ps = lossdet::mean_per_sample_l2(ag::sub(pred.parsing, gt.parsing));
  return ag::add(ag::mul_scalar(lm, mu), ag::mul_scalar(ps, nu));
}

/// Euclidean distance between frozen-embedding vectors, batch mean.
template <class S>
ag::Var<S> identity_loss(const ag::Var<S>& sr, const ag::Var<S>& hr_gt,
                         const IdentityEmbedder<S>& embedder) {
  check_same_shape(sr.value(), hr_gt.value(), "identity_loss");
  return lossdet::mean_per_sample_l2(ag::sub(embedder.embed(sr), embedder.embed(hr_gt)));
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

// Term names in composite order.
inline const std::array<const char*, 6>& denoise_term_names() {
  static const std::array<const char*, 6> n = {"asym", "tv",       "style_lr",
                                               "per_lr", "pixel_lr", "smooth_lr"};
  return n;
}
inline const std::array<const char*, 6>& fsr_term_names() {
  static const std::array<const char*, 6> n = {"fp",        "per_hr",   "pixel_hr",
                                               "smooth_hr", "identity", "adv"};
  return n;
}

inline double total_denoise_loss(const std::array<double, 6>& terms, const LossWeights& w) {
  double s = 0;
  for (int i = 0; i < 6; ++i) s += w.lambda1[static_cast<std::size_t>(i)] * terms[static_cast<std::size_t>(i)];
  return s;
}
inline double total_fsr_loss(const std::array<double, 6>& terms, const LossWeights& w) {
  double s = 0;
  for (int i = 0; i < 6; ++i) s += w.lambda2[static_cast<std::size_t>(i)] * terms[static_cast<std::size_t>(i)];
  return s;
}
inline double total_loss(double l_de, double l_fsr) { return l_de + l_fsr; }

/// Per-step record: raw term values (absent if ablated) and the weighted
/// totals, recomputed in double precision from the reported terms.
struct LossReport {
  std::map<std::string, double> terms;
  double l_de = 0, l_fsr = 0, l_total = 0;

  /// Totals from whatever terms are present; a term is contributed iff its
  /// name is in the map.
  static LossReport build(std::map<std::string, double> term_values, const LossWeights& w) {
    LossReport r;
    r.terms = std::move(term_values);
    for (int i = 0; i < 6; ++i) {
      auto it = r.terms.find(denoise_term_names()[static_cast<std::size_t>(i)]);
      if (it != r.terms.end()) r.l_de += w.lambda1[static_cast<std::size_t>(i)] * it->second;
    }
    for (int i = 0; i < 6; ++i) {
      auto it = r.terms.find(fsr_term_names()[static_cast<std::size_t>(i)]);
      if (it != r.terms.end()) r.l_fsr += w.lambda2[static_cast<std::size_t>(i)] * it->second;
    }
    r.l_total = r.l_de + r.l_fsr;
    return r;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["terms"] = terms;
    j["l_de"] = l_de;
    j["l_fsr"] = l_fsr;
    j["l_total"] = l_total;
    return j;
  }
  static LossReport from_json(const nlohmann::json& j) {
    LossReport r;
    r.terms = j.at("terms").get<std::map<std::string, double>>();
    r.l_de = j.at("l_de").get<double>();
    r.l_fsr = j.at("l_fsr").get<double>();
    r.l_total = j.at("l_total").get<double>();
    return r;
  }
};

}  // namespace densr
