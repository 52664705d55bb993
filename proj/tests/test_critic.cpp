#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "densr/critic.hpp"
#include "densr/optim.hpp"
#include "testutil.hpp"

using namespace densr;
using testutil::random_tensor;

TEST_CASE("critic scores: shape, batching consistency, zero final layer") {
  Pcg32 rng(1, 0);
  CriticConfig cfg;
  cfg.base_width = 4;
  cfg.input_size = 32;
  Critic<double> critic(cfg, rng);

  Tensor<double> batch = random_tensor({3, 3, 32, 32}, rng, 0, 1);
  auto scores = critic.score(Var<double>::constant(batch));
  REQUIRE(scores.value().shape == std::vector<int>{3});

  // per-image evaluation equals the batched one
  for (int i = 0; i < 3; ++i) {
    Tensor<double> one({1, 3, 32, 32});
    std::copy(batch.data.begin() + i * 3 * 32 * 32, batch.data.begin() + (i + 1) * 3 * 32 * 32,
              one.data.begin());
    auto s = critic.score(Var<double>::constant(one));
    REQUIRE(std::abs(s.value()[0] - scores.value()[i]) < 1e-12);
  }

  critic.final_fc().for_each_param([](const std::string&, Var<double>& p) {
    for (auto& v : p.mutable_value().data) v = 0;
  });
  auto zs = critic.score(Var<double>::constant(batch));
  for (double v : zs.value().data) REQUIRE(v == 0.0);

  Tensor<double> wrong = random_tensor({1, 3, 16, 16}, rng);
  REQUIRE_THROWS_AS(critic.score(Var<double>::constant(wrong)), std::invalid_argument);
}

TEST_CASE("gradient penalty closed-form oracles") {
  Pcg32 rng(2, 0);
  const int N = 2 * 3 * 8 * 8;  // elements per sample
  Tensor<double> real = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  Tensor<double> fake = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  std::vector<double> eps = {0.25, 0.75};
  const int per = 3 * 8 * 8;

  // unit-gradient critic D(x) = sum(x)/sqrt(per): penalty 0
  auto unit_critic = [&](const Var<double>& x) {
    return ag::mul_scalar(ag::sum_per_sample(x), 1.0 / std::sqrt(static_cast<double>(per)));
  };
  double p0 = gradient_penalty_fn<double>(unit_critic, real, fake, eps).item();
  REQUIRE(std::abs(p0) < 1e-10);

  // D(x) = 2*sum(x): gradient norm 2*sqrt(per), penalty (2*sqrt(per)-1)^2
  auto double_critic = [&](const Var<double>& x) {
    return ag::mul_scalar(ag::sum_per_sample(x), 2.0);
  };
  const double expect = std::pow(2.0 * std::sqrt(static_cast<double>(per)) - 1.0, 2.0);
  double p2 = gradient_penalty_fn<double>(double_critic, real, fake, eps).item();
  REQUIRE(std::abs(p2 - expect) < 1e-6);
  (void)N;

  // eps = 1 interpolates to exactly the real batch
  Tensor<double> seen;
  auto recording_critic = [&](const Var<double>& x) {
    seen = x.value();
    return ag::mul_scalar(ag::sum_per_sample(x), 1.0);
  };
  gradient_penalty_fn<double>(recording_critic, real, fake, std::vector<double>{1.0, 1.0});
  REQUIRE(seen.data == real.data);

  REQUIRE_THROWS_AS(gradient_penalty_fn<double>(unit_critic, real, fake, std::vector<double>{0.5}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      gradient_penalty_fn<double>(unit_critic, real, fake, std::vector<double>{0.5, 1.5}),
      std::invalid_argument);
}

TEST_CASE("gradient penalty is nonnegative and zero only at unit norm") {
  Pcg32 rng(3, 0);
  Tensor<double> real = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  Tensor<double> fake = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  std::vector<double> eps = {0.1, 0.9};
  for (double c : {0.3, 0.7, 1.9}) {
    const int per = 3 * 8 * 8;
    auto critic = [&](const Var<double>& x) {
      return ag::mul_scalar(ag::sum_per_sample(x), c / std::sqrt(static_cast<double>(per)));
    };
    const double p = gradient_penalty_fn<double>(critic, real, fake, eps).item();
    REQUIRE(p >= 0.0);
    REQUIRE(std::abs(p - (c - 1) * (c - 1)) < 1e-9);
  }
}

TEST_CASE("critic loss golden cases") {
  Pcg32 rng(4, 0);
  Tensor<double> real = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  std::vector<double> eps = {0.4, 0.6};
  const double eta = 0.1;

  // zero critic: loss = eta * 1 (gradient norm 0 -> penalty 1)
  auto zero_critic = [&](const Var<double>& x) {
    return ag::mul_scalar(ag::sum_per_sample(x), 0.0);
  };
  Tensor<double> fake = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  const double lz = critic_loss_fn<double>(zero_critic, real, fake, eps, eta).item();
  REQUIRE(std::abs(lz - eta) < 1e-12);

  // real == fake with a unit-gradient critic: exact cancellation, zero GP
  const int per = 3 * 8 * 8;
  auto unit_critic = [&](const Var<double>& x) {
    return ag::mul_scalar(ag::sum_per_sample(x), 1.0 / std::sqrt(static_cast<double>(per)));
  };
  const double lc = critic_loss_fn<double>(unit_critic, real, real, eps, eta).item();
  REQUIRE(std::abs(lc) < 1e-10);

  // generator-side adversarial loss of the zero critic is 0
  CriticConfig cfg;
  cfg.base_width = 4;
  cfg.input_size = 32;
  Critic<double> critic(cfg, rng);
  critic.final_fc().for_each_param([](const std::string&, Var<double>& p) {
    for (auto& v : p.mutable_value().data) v = 0;
  });
  Tensor<double> img = random_tensor({2, 3, 32, 32}, rng, 0, 1);
  REQUIRE(adversarial_generator_loss(critic, Var<double>::constant(img)).item() == 0.0);
}

TEST_CASE("critic training smoke: loss decreases over 50 steps") {
  Pcg32 rng(5, 0);
  CriticConfig cfg;
  cfg.base_width = 4;
  cfg.input_size = 32;
  Critic<float> critic(cfg, rng);

  Tensor<float> real({4, 3, 32, 32});
  Tensor<float> fake({4, 3, 32, 32});
  for (auto& v : real.data) v = static_cast<float>(0.5 + 0.3 * rng.gaussian());
  for (auto& v : fake.data) v = static_cast<float>(rng.uniform());

  Adam<float> opt(1e-3f, 0.5f, 0.999f);
  critic.for_each_param([&](const std::string& n, Var<float>& p) { opt.add_param(n, p); });

  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) {
    std::vector<float> eps(4);
    for (auto& e : eps) e = static_cast<float>(rng.uniform());
    opt.zero_grad();
    auto loss = critic_loss(critic, real, fake, eps, 0.1f);
    ag::backward(loss);
    opt.step();
    losses.push_back(loss.item());
  }
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += losses[i] / 5;
    tail += losses[losses.size() - 1 - i] / 5;
  }
  REQUIRE(tail < head);
}

TEST_CASE("gp gradient w.r.t. critic parameters matches finite differences") {
  // the end-to-end property the WGAN-GP update depends on
  Pcg32 rng(6, 0);
  CriticConfig cfg;
  cfg.base_width = 2;
  cfg.input_size = 32;
  Critic<double> critic(cfg, rng);
  Tensor<double> real = random_tensor({2, 3, 32, 32}, rng, 0, 1);
  Tensor<double> fake = random_tensor({2, 3, 32, 32}, rng, 0, 1);
  std::vector<double> eps = {0.3, 0.8};

  critic.zero_grad();
  auto pen = gradient_penalty(critic, real, fake, eps);
  ag::backward(pen);

  // probe a few parameters per tensor
  critic.for_each_param([&](const std::string& name, Var<double>& p) {
    if (!p.has_grad()) return;
    Pcg32 pick(tensor_hash(p.value()), 1);
    for (int probe = 0; probe < 2; ++probe) {
      const std::int64_t idx = pick.below(static_cast<std::uint32_t>(p.value().numel()));
      const double orig = p.value()[idx];
      const double h = 1e-5;
      p.mutable_value()[idx] = orig + h;
      const double fp = gradient_penalty(critic, real, fake, eps).item();
      p.mutable_value()[idx] = orig - h;
      const double fm = gradient_penalty(critic, real, fake, eps).item();
      p.mutable_value()[idx] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = p.grad()[idx];
      INFO(name << " idx " << idx);
      REQUIRE(testutil::rel_err(an, fd) < 1e-4);
    }
  });
}
