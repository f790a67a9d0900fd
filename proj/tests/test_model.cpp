#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "salad/losses.hpp"
#include "salad/model.hpp"

using namespace salad;

namespace {

std::vector<double> random_image(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double norm(const LatentVector& z) { return std::sqrt(z.dot(z.values())); }

// toy(16) with seed 42 applied to a constant 0.5 image
const std::vector<double> kGolden{
    -0.19843452883488241, -0.17167457771751687, -0.14611096399808368, -0.12907962550274721,
    0.046564267664354897, 0.038742004593413218, 0.30578611726905242,  0.10648697288919906,
    0.16508641143949168,  -0.38725103552743861, 0.0025808832589364946, -0.064321410539056142,
    -0.021500260880283381, 0.20931476878897412, -0.13190583388099797, 0.20109376220862085,
    0.036275567295083015, -0.12751057202570582, 0.093246617872590906, -0.074341452341764466,
    -0.10295805210991051, 0.032688975023819747, -0.21570199425580208, -0.2786447742669439,
    -0.13909661257481287, 0.23369374939286919, -0.18997215740213597, 0.16431247559545531,
    -0.019073369775301208, -0.012636076059117273, 0.38287803118979269, 0.22215063621081593,
};

}  // namespace

TEST(Encode, UnitSphereOverRandomInputs) {
  std::mt19937_64 rng(4);
  const auto params = init_params(Architecture::toy(20, 6), 9);
  for (int i = 0; i < 200; ++i) EXPECT_NEAR(norm(encode(params, random_image(20, rng))), 1.0, 1e-10);
}

TEST(Encode, Deterministic) {
  std::mt19937_64 rng(4);
  const auto params = init_params(Architecture::toy(20), 9);
  const auto x = random_image(20, rng);
  EXPECT_EQ(encode(params, x), encode(params, x));
}

TEST(Encode, GoldenVector) {
  const auto z = encode(init_params(Architecture::toy(16), 42), std::vector<double>(16, 0.5));
  ASSERT_EQ(z.size(), kGolden.size());
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], kGolden[i], 1e-12) << i;
}

// zero biases map the zero image to the zero vector, which has no direction
TEST(Encode, ZeroInputHasNoDirection) {
  const auto params = init_params(Architecture::toy(16), 42);
  EXPECT_THROW(encode(params, std::vector<double>(16, 0.0)), std::domain_error);
}

TEST(Encode, DimensionMismatch) {
  const auto params = init_params(Architecture::toy(16), 1);
  EXPECT_THROW(encode(params, std::vector<double>(15, 0.5)), std::invalid_argument);
  EXPECT_THROW(decode(params, LatentVector::normalized(std::vector<double>(5, 1.0))), std::invalid_argument);
}

TEST(Decode, RangeAndDeterminism) {
  std::mt19937_64 rng(6);
  const auto params = init_params(Architecture::toy(24, 8), 3);
  for (int i = 0; i < 50; ++i) {
    const auto z = encode(params, random_image(24, rng));
    const auto x = decode(params, z);
    ASSERT_EQ(x.size(), 24u);
    for (double v : x) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    EXPECT_EQ(x, decode(params, z));
  }
}

TEST(Autoencoder, ReconstructionGradientOnSixteenPixels) {
  std::mt19937_64 rng(12);
  const auto params = init_params(Architecture{16, {8}, 4, {8}}, 5);
  const ndgrad::Tensor x({1, 16}, random_image(16, rng));
  auto tensors = params.tensors();
  const double err = ndgrad::grad_check(
      [&](ndgrad::Graph& g) { return mse_loss(g, x, decode(g, params, encode(g, params, x))); }, tensors);
  EXPECT_LT(err, 1e-4);
}

TEST(Init, ReproducibleWithZeroBiases) {
  const auto a = init_params(Architecture::toy(10), 77);
  const auto b = init_params(Architecture::toy(10), 77);
  const auto c = init_params(Architecture::toy(10), 78);
  const auto ta = a.tensors(), tb = b.tensors(), tc = c.tensors();
  ASSERT_EQ(ta.size(), 8u);
  bool differs = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_TRUE(std::equal(ta[i].values().begin(), ta[i].values().end(), tb[i].values().begin()));
    differs = differs || !std::equal(ta[i].values().begin(), ta[i].values().end(), tc[i].values().begin());
  }
  EXPECT_TRUE(differs);
  for (const auto& l : a.encoder) {
    for (double v : l.bias.values()) EXPECT_EQ(v, 0.0);
  }
  for (const auto& l : a.decoder) {
    for (double v : l.bias.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Init, GlorotBoundsAndMean) {
  const auto params = init_params(Architecture{1000, {}, 1000, {}}, 2);
  const auto& w = params.encoder.front().weight;
  const double limit = std::sqrt(6.0 / 2000.0);
  double total = 0.0;
  for (double v : w.values()) {
    ASSERT_LE(std::abs(v), limit);
    total += v;
  }
  const double mean = total / static_cast<double>(w.size());
  EXPECT_GT(mean, -0.01);
  EXPECT_LT(mean, 0.01);
}

namespace {

ndgrad::Tensor scalar_param(double v) { return ndgrad::Tensor({1}, {v}, true); }

void set_grad(ndgrad::Tensor& w, double gval) {
  ndgrad::Graph g;
  g.backward(ndgrad::mul(g, w, gval));
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParams) {
  std::vector<ndgrad::Tensor> ps{ndgrad::Tensor({3}, {1, -2, 3}, true)};
  auto state = AdamState::for_params(ps, 1e-4, 0.5, 0.999);
  adam_step(ps, state);
  EXPECT_EQ(ps[0][0], 1.0);
  EXPECT_EQ(ps[0][1], -2.0);
  EXPECT_EQ(ps[0][2], 3.0);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepIsSignScaled) {
  for (double gval : {3.0, -0.2, 1e-3}) {
    std::vector<ndgrad::Tensor> ps{scalar_param(0.5)};
    auto state = AdamState::for_params(ps, 1e-4, 0.5, 0.999);
    set_grad(ps[0], gval);
    adam_step(ps, state);
    EXPECT_NEAR(ps[0][0] - 0.5, -1e-4 * (gval > 0 ? 1.0 : -1.0), 1e-4 * 1e-4);
  }
}

TEST(Adam, MinimizesSquare) {
  // independent scalar recurrence as the oracle
  double w_ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const double g = 2.0 * w_ref;
    m = 0.5 * m + 0.5 * g;
    v = 0.999 * v + 0.001 * g * g;
    w_ref -= 0.1 * (m / (1.0 - std::pow(0.5, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
  }
  std::vector<ndgrad::Tensor> ps{scalar_param(1.0)};
  auto state = AdamState::for_params(ps, 0.1, 0.5, 0.999);
  for (int t = 0; t < 100; ++t) {
    ndgrad::Graph g;
    g.backward(ndgrad::square(g, ps[0]));
    adam_step(ps, state);
    ps[0].zero_grad();
  }
  EXPECT_NEAR(ps[0][0], w_ref, 1e-12);
  EXPECT_LT(std::abs(ps[0][0]), 0.5);
  EXPECT_EQ(state.step, 100u);
}

TEST(Adam, ZeroBetasIsSignDescent) {
  std::vector<ndgrad::Tensor> ps{scalar_param(2.0)};
  auto state = AdamState::for_params(ps, 0.01, 0.0, 0.0);
  for (int t = 0; t < 5; ++t) {
    const double before = ps[0][0];
    set_grad(ps[0], t % 2 ? -4.0 : 0.25);
    adam_step(ps, state);
    ps[0].zero_grad();
    EXPECT_NEAR(ps[0][0] - before, t % 2 ? 0.01 : -0.01, 1e-8);
  }
}

TEST(Adam, ShapeMismatch) {
  std::vector<ndgrad::Tensor> ps{ndgrad::Tensor({2}, {1, 2}, true)};
  auto state = AdamState::for_params(ps, 1e-3, 0.9, 0.999);
  std::vector<ndgrad::Tensor> other{ndgrad::Tensor({3}, {1, 2, 3}, true)};
  EXPECT_THROW(adam_step(other, state), std::invalid_argument);
}

TEST(Autoencoder, ReconstructionLossMostlyDecreases) {
  std::mt19937_64 rng(31);
  std::vector<double> flat;
  for (int i = 0; i < 16; ++i) {
    auto img = random_image(16, rng);
    flat.insert(flat.end(), img.begin(), img.end());
  }
  const ndgrad::Tensor x({16, 16}, flat);
  auto params = init_params(Architecture::toy(16, 8), 1);
  auto tensors = params.tensors();
  auto state = AdamState::for_params(tensors, 1e-4, 0.5, 0.999);
  std::vector<double> losses;
  for (int step = 0; step <= 50; ++step) {
    ndgrad::Graph g;
    auto loss = mse_loss(g, x, decode(g, params, encode(g, params, x)));
    losses.push_back(loss.item());
    g.backward(loss);
    adam_step(tensors, state);
    params.zero_grad();
  }
  int decreases = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) decreases += losses[i] < losses[i - 1] ? 1 : 0;
  EXPECT_GE(decreases, 45);
}
