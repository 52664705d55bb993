#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "densr/nn.hpp"
#include "testutil.hpp"

using namespace densr;
using testutil::random_tensor;

TEST_CASE("channel attention: range, zero-input fixed point, symmetry") {
  Pcg32 rng(1, 0);
  nn::ChannelAttention<double> ca(16, 4, rng);

  Tensor<double> x0 = random_tensor({2, 16, 5, 5}, rng);
  Var<double> x = Var<double>::constant(x0);
  auto w = ca.weights(x);
  REQUIRE(w.value().shape == std::vector<int>{2, 16});
  for (double v : w.value().data) {
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
  }

  // zero input, zero biases: sigmoid(0) = 0.5 and gated output is 0
  Var<double> z = Var<double>::constant(Tensor<double>::zeros({1, 16, 4, 4}));
  auto wz = ca.weights(z);
  for (double v : wz.value().data) REQUIRE(v == 0.5);
  auto out = ca.forward(z);
  for (double v : out.value().data) REQUIRE(v == 0.0);

  // identical channels + channel-symmetric weights -> identical gates
  nn::ChannelAttention<double> sym(8, 2, rng);
  sym.for_each_param([](const std::string&, Var<double>& p) {
    for (auto& v : p.mutable_value().data) v = 0.05;
  });
  Tensor<double> same({1, 8, 3, 3});
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 9; ++i) same.data[static_cast<std::size_t>(c * 9 + i)] = 0.1 * i;
  auto ws = sym.weights(Var<double>::constant(same));
  for (int c = 1; c < 8; ++c) REQUIRE(ws.value()[c] == ws.value()[0]);

  REQUIRE_THROWS_AS(nn::ChannelAttention<double>(10, 4, rng), std::invalid_argument);
}

TEST_CASE("strided conv halves spatial dims; upsample multiplies by factor") {
  Pcg32 rng(2, 0);
  nn::StridedConvBlock<double> down(3, 8, rng, true);
  Tensor<double> x0 = random_tensor({1, 3, 32, 32}, rng);
  auto y = down.forward(Var<double>::constant(x0));
  REQUIRE(y.value().shape == std::vector<int>{1, 8, 16, 16});

  nn::UpsampleBlock<double> up(8, 4, rng);
  auto z = up.forward(y);
  REQUIRE(z.value().shape == std::vector<int>{1, 8, 64, 64});
}

TEST_CASE("residual block with zero-initialized final conv is the identity") {
  Pcg32 rng(3, 0);
  nn::ResidualBlockCA<double> block(8, rng, true);
  Tensor<double> x0 = random_tensor({2, 8, 6, 6}, rng);
  auto y = block.forward(Var<double>::constant(x0));
  REQUIRE(y.value().data == x0.data);  // exact, by construction
}

TEST_CASE("outputs stay finite through stacked blocks") {
  Pcg32 rng(4, 0);
  nn::ConvBlock<double> b1(3, 8, rng, true);
  nn::ResidualBlockCA<double> b2(8, rng, true);
  nn::StridedConvBlock<double> b3(8, 16, rng, false);
  Tensor<double> x0 = random_tensor({2, 3, 16, 16}, rng, -5, 5);
  auto y = b3.forward(b2.forward(b1.forward(Var<double>::constant(x0))));
  REQUIRE(y.value().all_finite());
  REQUIRE(y.value().shape == std::vector<int>{2, 16, 8, 8});
}

TEST_CASE("parameter counts match analytic formulas") {
  Pcg32 rng(5, 0);
  nn::Conv2d<double> conv(3, 64, 3, 1, 1, rng);
  REQUIRE(conv.param_count() == 3 * 3 * 3 * 64 + 64);

  nn::Linear<double> fc(32, 10, rng);
  REQUIRE(fc.param_count() == 32 * 10 + 10);

  // conv + bn + attention block: conv params + 2C + two bottleneck FCs
  nn::ConvBlock<double> block(16, 32, rng, true);
  const std::size_t conv_p = 3 * 3 * 16 * 32 + 32;
  const std::size_t bn_p = 2 * 32;
  const int red = nn::default_attention_reduction(32);
  const std::size_t mid = static_cast<std::size_t>(32 / red);
  const std::size_t ca_p = 32 * mid + mid + mid * 32 + 32;
  REQUIRE(block.param_count() == conv_p + bn_p + ca_p);

  // attention removal strictly reduces the count
  nn::ConvBlock<double> plain(16, 32, rng, false);
  REQUIRE(plain.param_count() < block.param_count());
}

TEST_CASE("conv MAC accounting") {
  nn::ConvSpec spec{3, 64, 3, 1, 1};
  REQUIRE(spec.macs(32, 32) == 1728 * 32 * 32);
  nn::ConvSpec strided{8, 16, 3, 2, 1};
  REQUIRE(strided.macs(32, 32) == static_cast<std::int64_t>(3) * 3 * 8 * 16 * 16 * 16);
}

TEST_CASE("module parameter registry walks children with prefixed names") {
  Pcg32 rng(6, 0);
  nn::ConvBlock<double> block(4, 8, rng, true);
  std::vector<std::string> names;
  block.for_each_param([&](const std::string& n, Var<double>&) { names.push_back(n); });
  REQUIRE(std::find(names.begin(), names.end(), "conv.weight") != names.end());
  REQUIRE(std::find(names.begin(), names.end(), "bn.gamma") != names.end());
  REQUIRE(std::find(names.begin(), names.end(), "ca.fc1.weight") != names.end());

  const std::uint64_t h0 = block.param_hash();
  block.for_each_param([](const std::string& n, Var<double>& p) {
    if (n == "conv.weight") p.mutable_value().data[0] += 1.0;
  });
  REQUIRE(block.param_hash() != h0);
}
