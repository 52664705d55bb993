#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "densr/losses.hpp"
#include "testutil.hpp"

using namespace densr;
using testutil::random_tensor;

namespace {
Var<double> cv(Tensor<double> t) { return Var<double>::constant(std::move(t)); }
}  // namespace

TEST_CASE("asymmetric loss golden values and direction") {
  Tensor<double> z({1, 1, 1, 1}, 0.5);
  REQUIRE(asym_loss(cv(z), cv(z), 0.3).item() == 0.0);

  Tensor<double> gh({1, 1, 1, 1}, 0.0), gt({1, 1, 1, 1}, 1.0);
  // d = -1 (underestimate): |0.3 - 1| * 1 = 0.7
  REQUIRE(std::abs(asym_loss(cv(gh), cv(gt), 0.3).item() - 0.7) < 1e-15);
  // d = +1 (overestimate): |0.3 - 0| * 1 = 0.3
  REQUIRE(std::abs(asym_loss(cv(gt), cv(gh), 0.3).item() - 0.3) < 1e-15);

  // underestimation of magnitude m costs strictly more than overestimation
  Pcg32 rng(1, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const double m = rng.uniform(0.1, 2.0);
    Tensor<double> base = random_tensor({1, 3, 4, 4}, rng, 0.5, 1.5);
    Tensor<double> under(base.shape), over(base.shape);
    for (std::int64_t i = 0; i < base.numel(); ++i) {
      under[i] = base[i] - m;
      over[i] = base[i] + m;
    }
    const double cu = asym_loss(cv(under), cv(base), 0.3).item();
    const double co = asym_loss(cv(over), cv(base), 0.3).item();
    REQUIRE(cu > co);
  }

  REQUIRE_THROWS_AS(asym_loss(cv(z), cv(z), 0.6), std::invalid_argument);
}

TEST_CASE("tv loss golden values and brute-force oracle") {
  Tensor<double> c({1, 1, 3, 3}, 0.42);
  REQUIRE(tv_loss(cv(c)).item() == 0.0);

  Tensor<double> m({1, 1, 2, 2});
  m.at4(0, 0, 0, 0) = 0;
  m.at4(0, 0, 0, 1) = 1;
  m.at4(0, 0, 1, 0) = 0;
  m.at4(0, 0, 1, 1) = 1;
  REQUIRE(std::abs(tv_loss(cv(m)).item() - 2.0) < 1e-15);

  Pcg32 rng(2, 0);
  Tensor<double> r = random_tensor({1, 3, 5, 6}, rng);
  double expect = 0;
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x + 1 < 6; ++x) {
        const double d = r.at4(0, ch, y, x + 1) - r.at4(0, ch, y, x);
        expect += d * d;
      }
    for (int y = 0; y + 1 < 5; ++y)
      for (int x = 0; x < 6; ++x) {
        const double d = r.at4(0, ch, y + 1, x) - r.at4(0, ch, y, x);
        expect += d * d;
      }
  }
  REQUIRE(std::abs(tv_loss(cv(r)).item() - expect) < 1e-12);
}

TEST_CASE("pixel loss golden values and brute-force oracle") {
  Pcg32 rng(3, 0);
  Tensor<double> a = random_tensor({2, 3, 4, 4}, rng);
  REQUIRE(pixel_loss(cv(a), cv(a)).item() == 0.0);

  Tensor<double> b(a.shape);
  for (std::int64_t i = 0; i < a.numel(); ++i) b[i] = a[i] + 0.1;
  REQUIRE(std::abs(pixel_loss(cv(a), cv(b)).item() - 0.1) < 1e-12);

  Tensor<double> c = random_tensor(a.shape, rng);
  double expect = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) expect += std::abs(a[i] - c[i]);
  expect /= static_cast<double>(a.numel());
  REQUIRE(std::abs(pixel_loss(cv(a), cv(c)).item() - expect) < 1e-12);
}

TEST_CASE("smooth loss golden values and brute-force oracle") {
  Tensor<double> c({1, 3, 4, 4}, 0.9);
  REQUIRE(smooth_loss(cv(c)).item() == 0.0);

  Tensor<double> m({1, 1, 2, 2});
  m.at4(0, 0, 0, 0) = 0;
  m.at4(0, 0, 0, 1) = 1;
  m.at4(0, 0, 1, 0) = 0;
  m.at4(0, 0, 1, 1) = 1;
  REQUIRE(std::abs(smooth_loss(cv(m)).item() - 2.0) < 1e-15);

  Pcg32 rng(4, 0);
  Tensor<double> r = random_tensor({1, 3, 6, 5}, rng);
  double expect = 0;
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x + 1 < 5; ++x) expect += std::abs(r.at4(0, ch, y, x + 1) - r.at4(0, ch, y, x));
    for (int y = 0; y + 1 < 6; ++y)
      for (int x = 0; x < 5; ++x) expect += std::abs(r.at4(0, ch, y + 1, x) - r.at4(0, ch, y, x));
  }
  REQUIRE(std::abs(smooth_loss(cv(r)).item() - expect) < 1e-12);
}

TEST_CASE("gram matrix: single channel, brute-force triple loop") {
  Pcg32 rng(5, 0);
  Tensor<double> f1 = random_tensor({1, 3, 4}, rng);
  auto g1 = gram(cv(f1));
  REQUIRE(g1.value().shape == std::vector<int>{1, 1});
  double sq = 0;
  for (std::int64_t i = 0; i < f1.numel(); ++i) sq += f1[i] * f1[i];
  REQUIRE(std::abs(g1.value()[0] - sq) < 1e-12);

  Tensor<double> f = random_tensor({4, 5, 6}, rng);
  auto g = gram(cv(f));
  REQUIRE(g.value().shape == std::vector<int>{4, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0;
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x) acc += f.at3(i, y, x) * f.at3(j, y, x);
      REQUIRE(std::abs(g.value().at2(i, j) - acc) < 1e-10);
    }
}

TEST_CASE("perceptual and style losses: zero at identity, oracle agreement") {
  FeatureExtractorConfig fcfg;
  fcfg.width = 4;
  FeatureExtractor<double> ex(fcfg);
  Pcg32 rng(6, 0);
  Tensor<double> a = random_tensor({1, 3, 8, 8}, rng, 0, 1);
  Tensor<double> b = random_tensor({1, 3, 8, 8}, rng, 0, 1);

  REQUIRE(perceptual_loss(cv(a), cv(a), ex, "conv4").item() == 0.0);
  REQUIRE(style_loss(cv(a), cv(a), ex, FeatureExtractor<double>::layer_names()).item() == 0.0);
  REQUIRE_THROWS_AS(perceptual_loss(cv(a), cv(b), ex, "conv9"), std::invalid_argument);

  // brute-force perceptual oracle on extracted features
  auto fa = ex.extract(cv(a), {"conv4"});
  auto fb = ex.extract(cv(b), {"conv4"});
  const auto& ta = fa.at("conv4").value();
  const auto& tb = fb.at("conv4").value();
  double l1 = 0;
  for (std::int64_t i = 0; i < ta.numel(); ++i) l1 += std::abs(ta[i] - tb[i]);
  const double expect = l1 / (ta.shape[2] * ta.shape[3]);
  REQUIRE(std::abs(perceptual_loss(cv(a), cv(b), ex, "conv4").item() - expect) < 1e-10);

  // homogeneity of the normalized-L1 functional: doubling every feature
  // difference doubles the value
  Tensor<double> tc(ta.shape);
  for (std::int64_t i = 0; i < ta.numel(); ++i) tc[i] = ta[i] + 2.0 * (tb[i] - ta[i]);
  double l1_doubled = 0;
  for (std::int64_t i = 0; i < ta.numel(); ++i) l1_doubled += std::abs(ta[i] - tc[i]);
  REQUIRE(std::abs(l1_doubled - 2.0 * l1) < 1e-10);

  // brute-force style oracle (triple-loop grams per layer)
  auto all_a = ex.extract(cv(a), FeatureExtractor<double>::layer_names());
  auto all_b = ex.extract(cv(b), FeatureExtractor<double>::layer_names());
  double style_expect = 0;
  for (const auto& name : FeatureExtractor<double>::layer_names()) {
    const auto& xa = all_a.at(name).value();
    const auto& xb = all_b.at(name).value();
    const int c = xa.shape[1], h = xa.shape[2], w = xa.shape[3];
    double acc = 0;
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) {
        double ga = 0, gb = 0;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            ga += xa.at4(0, i, y, x) * xa.at4(0, j, y, x);
            gb += xb.at4(0, i, y, x) * xb.at4(0, j, y, x);
          }
        acc += std::abs(gb - ga);
      }
    style_expect += acc / (static_cast<double>(c) * h * w);
  }
  REQUIRE(std::abs(style_loss(cv(a), cv(b), ex, FeatureExtractor<double>::layer_names()).item() -
                   style_expect) < 1e-10);
}

TEST_CASE("face prior loss: identity, weighted norm, brute force") {
  Pcg32 rng(7, 0);
  PriorTensor<double> gt;
  gt.parsing = cv(random_tensor({1, 4, 8, 8}, rng, 0, 1));
  gt.landmarks = cv(random_tensor({1, 5, 8, 8}, rng, 0, 1));
  REQUIRE(face_prior_loss(gt, gt, 1.0, 0.1).item() == 0.0);

  // parsing-only discrepancy: loss = nu * ||delta||_2
  PriorTensor<double> pred;
  pred.landmarks = gt.landmarks;
  Tensor<double> dp = random_tensor({1, 4, 8, 8}, rng, 0, 1);
  pred.parsing = cv(dp);
  double norm = 0;
  for (std::int64_t i = 0; i < dp.numel(); ++i) {
    const double d = dp[i] - gt.parsing.value()[i];
    norm += d * d;
  }
  norm = std::sqrt(norm);
  REQUIRE(std::abs(face_prior_loss(pred, gt, 1.0, 0.1).item() - 0.1 * norm) < 1e-10);

  // both terms, brute force
  pred.landmarks = cv(random_tensor({1, 5, 8, 8}, rng, 0, 1));
  double lnorm = 0;
  for (std::int64_t i = 0; i < pred.landmarks.value().numel(); ++i) {
    const double d = pred.landmarks.value()[i] - gt.landmarks.value()[i];
    lnorm += d * d;
  }
  lnorm = std::sqrt(lnorm);
  REQUIRE(std::abs(face_prior_loss(pred, gt, 1.0, 0.1).item() - (lnorm + 0.1 * norm)) < 1e-10);
}

TEST_CASE("identity loss: zero, symmetry, embedding-space brute force") {
  IdentityEmbedderConfig cfg;
  cfg.width = 4;
  cfg.dim = 16;
  IdentityEmbedder<double> emb(cfg);
  Pcg32 rng(8, 0);
  Tensor<double> a = random_tensor({1, 3, 16, 16}, rng, 0, 1);
  Tensor<double> b = random_tensor({1, 3, 16, 16}, rng, 0, 1);

  REQUIRE(identity_loss(cv(a), cv(a), emb).item() == 0.0);
  REQUIRE(std::abs(identity_loss(cv(a), cv(b), emb).item() -
                   identity_loss(cv(b), cv(a), emb).item()) < 1e-12);

  auto ea = emb.embed_one(a.reshaped({3, 16, 16})), eb = emb.embed_one(b.reshaped({3, 16, 16}));
  double dist = 0;
  for (int i = 0; i < 16; ++i) dist += (ea[i] - eb[i]) * (ea[i] - eb[i]);
  dist = std::sqrt(dist);
  REQUIRE(std::abs(identity_loss(cv(a), cv(b), emb).item() - dist) < 1e-12);
}

TEST_CASE("composite losses reproduce published weighted sums") {
  LossWeights w;
  w.validate();
  std::array<double, 6> ones;
  ones.fill(1.0);
  REQUIRE(std::abs(total_denoise_loss(ones, w) - 12.65) < 1e-12);
  REQUIRE(std::abs(total_fsr_loss(ones, w) - 3.111) < 1e-12);

  std::array<double, 6> zeros{};
  REQUIRE(total_loss(total_denoise_loss(zeros, w), total_fsr_loss(zeros, w)) == 0.0);
}

TEST_CASE("loss report totals recompute from reported terms") {
  LossWeights w;
  std::map<std::string, double> terms;
  Pcg32 rng(9, 0);
  for (const char* n : denoise_term_names()) terms[n] = rng.uniform(0, 3);
  for (const char* n : fsr_term_names()) terms[n] = rng.uniform(0, 3);
  LossReport r = LossReport::build(terms, w);

  double de = 0, fsr = 0;
  for (int i = 0; i < 6; ++i) de += w.lambda1[i] * terms[denoise_term_names()[i]];
  for (int i = 0; i < 6; ++i) fsr += w.lambda2[i] * terms[fsr_term_names()[i]];
  REQUIRE(std::abs(r.l_de - de) <= 1e-9 * std::abs(de));
  REQUIRE(std::abs(r.l_fsr - fsr) <= 1e-9 * std::abs(fsr));
  REQUIRE(std::abs(r.l_total - (de + fsr)) <= 1e-9 * std::abs(de + fsr));

  // ablation: removing a term removes exactly that contribution
  auto reduced = terms;
  reduced.erase("style_lr");
  LossReport r2 = LossReport::build(reduced, w);
  REQUIRE(std::abs(r2.l_de - (de - w.lambda1[2] * terms["style_lr"])) < 1e-12);
  REQUIRE(r2.terms.count("style_lr") == 0);

  // JSON round trip
  LossReport r3 = LossReport::from_json(r.to_json());
  REQUIRE(r3.l_total == r.l_total);
  REQUIRE(r3.terms == r.terms);
}

TEST_CASE("non-negativity across random inputs") {
  Pcg32 rng(10, 0);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor<double> a = random_tensor({1, 3, 6, 6}, rng, 0, 1);
    Tensor<double> b = random_tensor({1, 3, 6, 6}, rng, 0, 1);
    REQUIRE(asym_loss(cv(a), cv(b), 0.3).item() >= 0.0);
    REQUIRE(tv_loss(cv(a)).item() >= 0.0);
    REQUIRE(pixel_loss(cv(a), cv(b)).item() >= 0.0);
    REQUIRE(smooth_loss(cv(a)).item() >= 0.0);
  }
}
