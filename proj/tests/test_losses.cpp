#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "salad/losses.hpp"

using namespace salad;
using ndgrad::Graph;
using ndgrad::Tensor;

namespace {

// 1/tau scales the logits; a coarser step keeps cancellation noise below tiny gradient entries
constexpr double kStep = 1e-3;

Tensor random_tensor(ndgrad::Shape shape, std::mt19937_64& rng, bool rg = true) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(ndgrad::numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v), rg);
}

Tensor unit_rows(const std::vector<std::vector<double>>& rows) {
  Graph g(Graph::Mode::no_grad);
  return l2_normalize(g, Tensor::matrix(rows)).detach();
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

// -log of the mass the softmax over bank slots puts on `targets`, by direct evaluation
double neg_log_mass(const MemoryBank& bank, std::span<const double> z, const std::vector<std::size_t>& targets) {
  std::vector<double> e(bank.size());
  double total = 0.0;
  for (std::size_t j = 0; j < bank.size(); ++j) {
    double dot = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) dot += z[c] * bank.slot(j)[c];
    e[j] = std::exp(dot / bank.temperature());
    total += e[j];
  }
  double mass = 0.0;
  for (auto t : targets) mass += e[t] / total;
  return -std::log(mass);
}

}  // namespace

TEST(Mse, Values) {
  Graph g;
  const Tensor x({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  EXPECT_EQ(mse_loss(g, x, x).item(), 0.0);
  EXPECT_EQ(mse_loss(g, Tensor({1, 2}, {1, 0}), Tensor({1, 2}, {0, 0})).item(), 1.0);
  // two rows: (1 + 4) / 2
  EXPECT_EQ(mse_loss(g, Tensor({2, 1}, {1, 2}), Tensor({2, 1}, {0, 0})).item(), 2.5);
  EXPECT_THROW(mse_loss(g, Tensor({1, 2}, {1, 0}), Tensor({2, 1}, {0, 0})), std::invalid_argument);
}

TEST(Mse, Gradient) {
  std::mt19937_64 rng(3);
  for (int seed = 0; seed < 20; ++seed) {
    auto x = random_tensor({1, 8}, rng);
    auto y = random_tensor({1, 8}, rng, false);
    EXPECT_LT(ndgrad::grad_check([&](Graph& g, const Tensor& t) { return mse_loss(g, y, t); }, x), 1e-6);
  }
}

TEST(SampleSpecific, PerfectSelfIdentification) {
  const auto z = unit_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  std::vector<std::vector<double>> slots;
  for (std::size_t i = 0; i < 3; ++i) slots.emplace_back(z.values().begin() + i * 3, z.values().begin() + (i + 1) * 3);
  const auto bank = MemoryBank::from_slots(3, slots, {false, false, false}, 0.01, 0.5);
  Graph g;
  const double loss = sample_specific_loss(g, MiniBatch::identity(iota(3)), bank, z).item();
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 1e-40);
}

TEST(SampleSpecific, HalfMass) {
  const auto bank = MemoryBank::from_slots(2, {{0.6, 0.8}, {0.6, 0.8}}, {false, false}, 0.1, 0.5);
  Graph g;
  const double loss = sample_specific_loss(g, MiniBatch::identity({0}), bank, unit_rows({{1, 0}})).item();
  EXPECT_NEAR(loss, 0.69315, 1e-5);
  EXPECT_NEAR(loss, std::log(2.0), 1e-15);
}

TEST(SampleSpecific, ViewsAreAveraged) {
  std::mt19937_64 rng(5);
  const auto bank = MemoryBank::random(5, 3, 2, 0.5);
  const auto views = unit_rows({{1, 0, 0}, {0, 1, 0}, {0.3, 0.3, 0.9}, {-1, 0.2, 0}});
  const auto batch = MiniBatch::with_views({2, 4}, {{0, 1}, {2, 3}});
  Graph g;
  const double loss = sample_specific_loss(g, batch, bank, views).item();
  double expect = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    double mass = 0.0;
    for (auto r : batch.views[b]) mass += std::exp(-neg_log_mass(bank, views.values().subspan(r * 3, 3), {batch.samples[b]}));
    expect += -std::log(mass / 2.0);
  }
  EXPECT_NEAR(loss, expect / 2.0, 1e-12);
}

TEST(SampleSpecific, Errors) {
  const auto bank = MemoryBank::random(4, 2, 1);
  const auto z = unit_rows({{1, 0}, {0, 1}});
  Graph g;
  EXPECT_THROW(sample_specific_loss(g, MiniBatch::with_views({0, 1}, {{0}, {}}), bank, z), std::invalid_argument);
  EXPECT_THROW(sample_specific_loss(g, MiniBatch::with_views({0, 1}, {{0}, {0}}), bank, z), std::logic_error);
  EXPECT_THROW(sample_specific_loss(g, MiniBatch::with_views({0, 9}, {{0}, {1}}), bank, z), std::out_of_range);
}

TEST(SampleSpecific, GradientOnToyBank) {
  std::mt19937_64 rng(9);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto bank = MemoryBank::random(6, 4, seed, 0.1);
    auto raw = random_tensor({6, 4}, rng);
    const auto batch = MiniBatch::with_views({0, 3, 5}, {{0, 1}, {2, 3}, {4, 5}});
    auto f = [&](Graph& g, const Tensor& x) { return sample_specific_loss(g, batch, bank, l2_normalize(g, x)); };
    EXPECT_LT(ndgrad::grad_check(f, raw, kStep), 1e-4) << seed;
  }
}

TEST(Aggregation, FullSupportIsZero) {
  const auto bank = MemoryBank::random(7, 3, 4);
  Graph g;
  const auto z = unit_rows({{1, 2, 3}, {-1, 0, 1}});
  EXPECT_NEAR(aggregation_loss(g, MiniBatch::identity({0, 1}), bank, z, 7).item(), 0.0, 1e-15);
}

TEST(Aggregation, QuarterMass) {
  const std::vector<double> s{0.6, 0.8};
  const auto bank = MemoryBank::from_slots(2, {s, s, s, s}, {false, false, false, false}, 0.1, 0.5);
  Graph g;
  const double loss = aggregation_loss(g, MiniBatch::identity({2}), bank, unit_rows({{0, 1}}), 1).item();
  EXPECT_NEAR(loss, 1.38629, 1e-5);
  EXPECT_NEAR(loss, std::log(4.0), 1e-15);
}

TEST(Aggregation, MatchesDirectEvaluation) {
  std::mt19937_64 rng(15);
  const auto bank = MemoryBank::random(12, 4, 8, 0.2);
  const auto z = unit_rows({{1, 0.2, 0, 0.1}, {0, 1, -0.5, 0}, {0.3, 0.3, 0.3, -1}});
  for (std::size_t k = 1; k <= 12; ++k) {
    Graph g;
    const double loss = aggregation_loss(g, MiniBatch::identity({0, 4, 9}), bank, z, k).item();
    double expect = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
      const auto zr = z.values().subspan(r * 4, 4);
      expect += neg_log_mass(bank, zr, bank.top_k_neighbors(LatentVector::from_unit(zr), k).indices);
    }
    EXPECT_NEAR(loss, expect / 3.0, 1e-12) << k;
  }
}

TEST(Aggregation, ShrinkingKNeverRaisesMass) {
  std::mt19937_64 rng(19);
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const auto bank = MemoryBank::random(15, 5, trial, 0.1);
    const auto z = random_tensor({1, 5}, rng, false);
    const auto u = unit_rows({{z[0], z[1], z[2], z[3], z[4]}});
    double previous = -1.0;
    for (std::size_t k = 1; k <= 15; ++k) {
      Graph g;
      const double mass = std::exp(-aggregation_loss(g, MiniBatch::identity({0}), bank, u, k).item());
      EXPECT_GE(mass, previous - 1e-15);
      previous = mass;
    }
  }
}

TEST(Aggregation, PrototypicalSubset) {
  const auto bank = MemoryBank::random(10, 3, 6, 0.3);
  const auto z = unit_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  auto batch = MiniBatch::identity({1, 5, 7});
  batch.prototypical = {2, 0};
  Graph g;
  const double subset = aggregation_loss(g, batch, bank, z, 3).item();
  const double a = aggregation_loss(g, MiniBatch::identity({7}), bank, unit_rows({{0, 0, 1}}), 3).item();
  const double b = aggregation_loss(g, MiniBatch::identity({1}), bank, unit_rows({{1, 0, 0}}), 3).item();
  EXPECT_NEAR(subset, (a + b) / 2.0, 1e-12);
}

TEST(Aggregation, ExcludeSelfDropsOwnSlot) {
  const auto bank = MemoryBank::random(8, 3, 12, 0.5);
  const auto z = LatentVector::from_unit(bank.slot(2), 1e-8);
  const auto zt = unit_rows({{z[0], z[1], z[2]}});
  Graph g;
  const double loss = aggregation_loss(g, MiniBatch::identity({2}), bank, zt, 2, true).item();
  // oracle: softmax and neighbors over the other seven slots
  std::vector<std::vector<double>> rest;
  for (std::size_t i = 0; i < 8; ++i) {
    if (i != 2) rest.emplace_back(bank.slot(i).begin(), bank.slot(i).end());
  }
  const auto reduced = MemoryBank::from_slots(3, rest, std::vector<bool>(7, false), 0.5, 0.5);
  const auto nn = reduced.top_k_neighbors(z, 2).indices;
  EXPECT_NEAR(loss, neg_log_mass(reduced, z.values(), nn), 1e-12);
  EXPECT_THROW(aggregation_loss(g, MiniBatch::identity({2}), bank, zt, 8, true), std::invalid_argument);
}

TEST(Aggregation, Errors) {
  const auto bank = MemoryBank::random(4, 2, 1);
  const auto z = unit_rows({{1, 0}});
  Graph g;
  EXPECT_THROW(aggregation_loss(g, MiniBatch::identity({0}), bank, z, 0), std::invalid_argument);
  EXPECT_THROW(aggregation_loss(g, MiniBatch::identity({0}), bank, z, 5), std::invalid_argument);
}

TEST(Aggregation, GradientOnToyBank) {
  std::mt19937_64 rng(27);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto bank = MemoryBank::random(8, 4, seed, 0.1);
    auto raw = random_tensor({4, 4}, rng);
    auto f = [&](Graph& g, const Tensor& x) {
      return aggregation_loss(g, MiniBatch::identity({0, 2, 4, 6}), bank, l2_normalize(g, x), 3);
    };
    EXPECT_LT(ndgrad::grad_check(f, raw, kStep), 1e-4) << seed;
  }
}

// gradient steps on the aggregation term alone, bank frozen
TEST(Aggregation, NeighborMassGrowsUnderDescent) {
  std::mt19937_64 rng(41);
  const auto bank = MemoryBank::random(20, 4, 3, 0.1);
  auto raw = random_tensor({5, 4}, rng);
  const auto batch = MiniBatch::identity({0, 1, 2, 3, 4});
  auto masses = [&] {
    Graph g(Graph::Mode::no_grad);
    auto z = l2_normalize(g, raw);
    std::vector<double> m;
    for (std::size_t r = 0; r < 5; ++r) m.push_back(bank.neighbor_mass(LatentVector::from_unit(z.values().subspan(r * 4, 4)), 3));
    return m;
  };
  auto before = masses();
  for (int step = 0; step < 20; ++step) {
    Graph g;
    g.backward(aggregation_loss(g, batch, bank, l2_normalize(g, raw), 3));
    auto v = raw.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= 0.01 * raw.grad()[i];
    raw.zero_grad();
    const auto after = masses();
    for (std::size_t r = 0; r < 5; ++r) EXPECT_GE(after[r], before[r] - 1e-12) << "step " << step << " row " << r;
    before = after;
  }
}

TEST(Salad, Combination) {
  const auto b = combine_losses(1.0, 2.0, 2.0, 0.25);
  EXPECT_EQ(b.total, 2.0);
  EXPECT_EQ(b.latent, 4.0);
  EXPECT_EQ(combine_losses(1.5, 2.0, 3.0, 0.0).total, 1.5);
  EXPECT_THROW(combine_losses(std::nan(""), 0, 0, 0.25), NumericError);

  Graph g;
  auto out = salad_loss(g, Tensor::scalar(1.0), Tensor::scalar(2.0), Tensor::scalar(2.0), 0.25);
  EXPECT_EQ(out.total.item(), 2.0);
  EXPECT_NEAR(out.breakdown.total, out.breakdown.mse + out.breakdown.lambda * (out.breakdown.ss + out.breakdown.agg), 1e-12);
  EXPECT_EQ(salad_loss(g, Tensor::scalar(0.7), Tensor::scalar(2.0), std::nullopt, 0.0).total.item(), 0.7);
  EXPECT_THROW(salad_loss(g, std::nullopt, std::nullopt, std::nullopt, 0.25), std::invalid_argument);
}

namespace {

struct Toy {
  ModelParams params = init_params(Architecture{6, {5}, 4, {5}}, 3);
  MemoryBank bank = MemoryBank::random(8, 4, 21, 0.1);
  Tensor x, views;
  MiniBatch batch;

  explicit Toy(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> xs(8 * 6), vs(16 * 6);
    for (auto& v : xs) v = u(rng);
    for (std::size_t i = 0; i < vs.size(); ++i) vs[i] = std::clamp(xs[(i / 12) * 6 + i % 6] + 0.05 * (u(rng) - 0.5), 0.0, 1.0);
    x = Tensor({8, 6}, xs);
    views = Tensor({16, 6}, vs);
    std::vector<std::vector<std::size_t>> aug;
    for (std::size_t i = 0; i < 8; ++i) aug.push_back({2 * i, 2 * i + 1});
    batch = MiniBatch::with_views(iota(8), aug);
  }

  SaladLoss loss(Graph& g, double lambda) const {
    auto z = encode(g, params, x);
    auto mse = mse_loss(g, x, decode(g, params, z));
    auto ss = sample_specific_loss(g, batch, bank, encode(g, params, views));
    auto agg = aggregation_loss(g, MiniBatch::identity(batch.samples), bank, z, 3);
    return salad_loss(g, mse, ss, agg, lambda);
  }
};

}  // namespace

// full objective on the toy configuration; the step stays small so no leaky-relu kink
// or neighbor set change falls inside the stencil
constexpr double kFineStep = 1e-6;

TEST(Salad, FullObjectiveGradient) {
  std::mt19937_64 rng(2);
  for (int seed = 0; seed < 20; ++seed) {
    Toy toy(rng);
    auto enc = toy.params.encoder_tensors();
    EXPECT_LT(ndgrad::grad_check([&](Graph& g) { return toy.loss(g, 0.25).total; }, enc, kFineStep), 1e-4) << seed;
  }
}

TEST(Salad, LatentTermsLeaveDecoderAlone) {
  std::mt19937_64 rng(4);
  Toy toy(rng);
  Graph g;
  auto z = encode(g, toy.params, toy.x);
  auto ss = sample_specific_loss(g, toy.batch, toy.bank, encode(g, toy.params, toy.views));
  auto agg = aggregation_loss(g, MiniBatch::identity(toy.batch.samples), toy.bank, z, 3);
  g.backward(salad_loss(g, std::nullopt, ss, agg, 0.25).total);
  for (const auto& t : toy.params.decoder_tensors()) {
    for (double v : t.grad()) EXPECT_EQ(v, 0.0);
  }
  bool encoder_moved = false;
  for (const auto& t : toy.params.encoder_tensors()) {
    for (double v : t.grad()) encoder_moved = encoder_moved || v != 0.0;
  }
  EXPECT_TRUE(encoder_moved);
}

TEST(Salad, ComponentsNonNegative) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Toy toy(rng);
    Graph g;
    const auto b = toy.loss(g, 0.25).breakdown;
    EXPECT_GE(b.mse, 0.0);
    EXPECT_GE(b.ss, 0.0);
    EXPECT_GE(b.agg, 0.0);
    EXPECT_NEAR(b.total, b.mse + 0.25 * (b.ss + b.agg), 1e-12);
  }
}
