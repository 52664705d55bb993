#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "densr/superres.hpp"
#include "testutil.hpp"

using namespace densr;
using testutil::random_tensor;

namespace {
SuperresConfig tiny(int scale, int landmarks = 5, int classes = 4) {
  SuperresConfig c;
  c.width = 4;
  c.coarse_blocks = 1;
  c.trunk_blocks = 1;
  c.num_landmarks = landmarks;
  c.parsing_classes = classes;
  c.scale = scale;
  return c;
}
DenoiserConfig tiny_den() {
  DenoiserConfig c;
  c.noise_width = 4;
  c.denoise_width = 4;
  return c;
}
}  // namespace

TEST_CASE("coarse SR reaches HR size for both scales") {
  Pcg32 rng(1, 0);
  CoarseSR<double> c4(tiny(4), rng);
  auto y4 = c4.forward(Var<double>::constant(random_tensor({1, 3, 32, 32}, rng, 0, 1)));
  REQUIRE(y4.value().shape == std::vector<int>{1, 3, 128, 128});

  CoarseSR<double> c8(tiny(8), rng);
  auto y8 = c8.forward(Var<double>::constant(random_tensor({1, 3, 16, 16}, rng, 0, 1)));
  REQUIRE(y8.value().shape == std::vector<int>{1, 3, 128, 128});

  REQUIRE_THROWS_AS(CoarseSR<double>(tiny(3), rng), std::invalid_argument);
}

TEST_CASE("zero input through a zero-bias coarse net stays zero") {
  Pcg32 rng(2, 0);
  CoarseSR<double> c(tiny(4), rng);  // biases are zero-initialized throughout
  Tensor<double> zero({1, 3, 32, 32});
  auto y = c.forward(Var<double>::constant(zero));
  for (double v : y.value().data) REQUIRE(v == 0.0);
}

TEST_CASE("prior estimator heads: shapes, probability sums, heatmap range") {
  Pcg32 rng(3, 0);
  SuperresConfig cfg = tiny(4, 7, 4);
  PriorEstimator<double> prior(cfg, rng);
  auto p = prior.forward(Var<double>::constant(random_tensor({2, 3, 128, 128}, rng, 0, 1)));
  REQUIRE(p.parsing.value().shape == std::vector<int>{2, 4, 32, 32});
  REQUIRE(p.landmarks.value().shape == std::vector<int>{2, 7, 32, 32});

  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        double sum = 0;
        for (int c = 0; c < 4; ++c) sum += p.parsing.value().at4(n, c, y, x);
        REQUIRE(std::abs(sum - 1.0) < 1e-6);
      }
  for (double v : p.landmarks.value().data) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("encoder/fusion/decoder shape algebra and exact concatenation") {
  Pcg32 rng(4, 0);
  SuperresConfig cfg = tiny(4, 5, 4);
  Encoder<double> enc(cfg, rng);
  Decoder<double> dec(cfg, rng);
  PriorEstimator<double> prior(cfg, rng);

  Tensor<double> coarse = random_tensor({1, 3, 128, 128}, rng, 0, 1);
  auto e = enc.forward(Var<double>::constant(coarse));
  REQUIRE(e.value().shape == std::vector<int>{1, 4, 32, 32});

  auto p = prior.forward(Var<double>::constant(coarse));
  auto fused = ag::concat_channels(e, p.concatenated());
  REQUIRE(fused.value().shape == std::vector<int>{1, 4 + 4 + 5, 32, 32});

  // exact slice equality with the fused tensor
  auto enc_slice = ag::slice_channels(fused, 0, 4);
  REQUIRE(enc_slice.value().data == e.value().data);
  auto parsing_slice = ag::slice_channels(fused, 4, 8);
  REQUIRE(parsing_slice.value().data == p.parsing.value().data);
  auto lm_slice = ag::slice_channels(fused, 8, 13);
  REQUIRE(lm_slice.value().data == p.landmarks.value().data);

  auto out = dec.forward(fused, Var<double>::constant(coarse));
  REQUIRE(out.value().shape == std::vector<int>{1, 3, 128, 128});
}

TEST_CASE("generator end-to-end: size protocol and eval determinism") {
  Pcg32 rng(5, 0);
  Generator<double> gen(tiny_den(), tiny(4), rng);
  gen.set_training(false);

  Tensor<double> in = random_tensor({1, 3, 32, 32}, rng, 0, 1);
  auto [den, trace] = gen.forward(Var<double>::constant(in));
  REQUIRE(trace.sr.value().shape == std::vector<int>{1, 3, 128, 128});
  REQUIRE(trace.coarse.value().shape == std::vector<int>{1, 3, 128, 128});
  REQUIRE(den.gamma.value().shape == std::vector<int>{1, 3, 32, 32});

  auto [den2, trace2] = gen.forward(Var<double>::constant(in));
  REQUIRE(trace2.sr.value().data == trace.sr.value().data);

  Pcg32 rng8(5, 1);
  Generator<double> gen8(tiny_den(), tiny(8), rng8);
  gen8.set_training(false);
  auto [d8, t8] = gen8.forward(Var<double>::constant(random_tensor({1, 3, 16, 16}, rng8, 0, 1)));
  REQUIRE(t8.sr.value().shape == std::vector<int>{1, 3, 128, 128});
}

TEST_CASE("generator gradients reach every submodule (finite differences)") {
  Pcg32 rng(6, 0);
  Generator<double> gen(tiny_den(), tiny(4, 5, 3), rng);
  gen.set_training(true);
  Tensor<double> in = random_tensor({1, 3, 8, 8}, rng, 0, 1);  // HR 32x32
  Tensor<double> target = random_tensor({1, 3, 32, 32}, rng, 0, 1);

  auto loss_value = [&]() {
    auto [den, trace] = gen.forward(Var<double>::constant(in));
    auto d = ag::sub(trace.sr, Var<double>::constant(target));
    // touch gamma too so the estimator parameters participate
    return ag::add(ag::mean_all(ag::mul(d, d)), ag::mul_scalar(ag::mean_all(den.gamma), 0.1));
  };

  gen.zero_grad();
  ag::backward(loss_value());

  // one sampled parameter from each submodule
  std::vector<nn::Module<double>*> submodules = {&gen.denoiser(), &gen.coarse_net(),
                                                 &gen.prior_net(), &gen.encoder(), &gen.decoder()};
  for (auto* mod : submodules) {
    bool checked = false;
    mod->for_each_param([&](const std::string& name, Var<double>& p) {
      if (checked || !p.has_grad()) return;
      // prefer a parameter with a non-tiny gradient for a stable FD probe
      std::int64_t idx = -1;
      double best = 1e-7;
      for (std::int64_t i = 0; i < p.value().numel(); ++i)
        if (std::abs(p.grad()[i]) > best) {
          best = std::abs(p.grad()[i]);
          idx = i;
        }
      if (idx < 0) return;
      const double orig = p.value()[idx];
      const double h = 1e-5;
      ag::NoGradGuard ng;
      p.mutable_value()[idx] = orig + h;
      const double fp = loss_value().item();
      p.mutable_value()[idx] = orig - h;
      const double fm = loss_value().item();
      p.mutable_value()[idx] = orig;
      const double fd = (fp - fm) / (2 * h);
      INFO(name);
      REQUIRE(testutil::rel_err(p.grad()[idx], fd) < 1e-4);
      checked = true;
    });
    REQUIRE(checked);
  }
}

TEST_CASE("joint path: loss on the SR output reaches denoiser parameters") {
  Pcg32 rng(7, 0);
  Generator<double> gen(tiny_den(), tiny(4, 5, 3), rng);
  gen.set_training(true);
  Tensor<double> in = random_tensor({1, 3, 8, 8}, rng, 0, 1);

  gen.zero_grad();
  auto [den, trace] = gen.forward(Var<double>::constant(in));
  ag::backward(ag::mean_all(ag::mul(trace.sr, trace.sr)));

  bool any = false;
  gen.denoiser().for_each_param([&](const std::string&, Var<double>& p) {
    if (any || !p.has_grad()) return;
    for (double v : p.grad().data)
      if (v != 0.0) {
        any = true;
        break;
      }
  });
  REQUIRE(any);
}
