#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "salad/eval.hpp"
#include "salad/scorer.hpp"
#include "salad/trainer.hpp"

using namespace salad;

namespace {

LatentVector random_unit(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  for (auto& x : v) x = n(rng);
  return LatentVector::normalized(std::move(v));
}

LatentVector at_angle(double a) { return LatentVector::normalized({std::cos(a), std::sin(a)}); }

MemoryBank circle_bank(const std::vector<double>& angles) {
  std::vector<std::vector<double>> slots;
  for (double a : angles) slots.push_back({std::cos(a), std::sin(a)});
  return MemoryBank::from_slots(2, slots, std::vector<bool>(angles.size(), false), 0.1, 0.5);
}

// sorts every angle and evaluates the score formula directly
double brute_score(const LatentVector& z, const MemoryBank& bank, std::size_t k) {
  std::vector<double> angles;
  for (std::size_t j = 0; j < bank.size(); ++j) {
    double dot = 0.0;
    for (std::size_t c = 0; c < bank.dim(); ++c) dot += z[c] * bank.slot(j)[c];
    angles.push_back(std::acos(std::max(-1.0, std::min(1.0, dot))));
  }
  double total = 0.0;
  for (double a : angles) total += a;
  std::sort(angles.begin(), angles.end());
  double acc = 0.0;
  for (std::size_t r = 0; r < k; ++r) acc += angles[r] / total;
  return acc / static_cast<double>(k);
}

}  // namespace

TEST(Score, ExactSlotIsZero) {
  const auto bank = MemoryBank::random(10, 4, 3);
  const auto z = LatentVector::from_unit(bank.slot(6), 1e-8);
  const auto s = anomaly_score(z, bank.view(), 1);
  EXPECT_NEAR(s.raw, 0.0, 1e-7);
  ASSERT_EQ(s.votes.size(), 1u);
  EXPECT_EQ(s.votes[0].slot, 6u);
}

TEST(Score, EquidistantPair) {
  const auto bank = circle_bank({0.0, std::numbers::pi / 2});
  const auto s = anomaly_score(at_angle(std::numbers::pi / 4), bank.view(), 2);
  EXPECT_NEAR(s.votes[0].weight, 0.5, 1e-15);
  EXPECT_NEAR(s.votes[1].weight, 0.5, 1e-15);
  EXPECT_NEAR(s.raw, 0.5, 1e-15);
}

TEST(Score, MatchesBruteForceOracle) {
  std::mt19937_64 rng(40);
  for (int trial = 0; trial < 100; ++trial) {
    const auto bank = MemoryBank::random(40, 8, 500 + trial);
    const auto z = random_unit(8, rng);
    const auto s = anomaly_score(z, bank.view(), 5);
    EXPECT_NEAR(s.raw, brute_score(z, bank, 5), 1e-12);
    double mean = 0.0;
    for (const auto& v : s.votes) {
      EXPECT_GE(v.weight, 0.0);
      EXPECT_LE(v.weight, 1.0);
      mean += v.weight;
    }
    EXPECT_NEAR(s.raw, mean / 5.0, 1e-12);
  }
}

TEST(Score, Errors) {
  const auto bank = MemoryBank::random(4, 2, 1);
  const auto z = LatentVector::normalized({1, 0});
  EXPECT_THROW(anomaly_score(z, bank.view(), 0), std::invalid_argument);
  EXPECT_THROW(anomaly_score(z, bank.view(), 5), std::invalid_argument);
}

TEST(Score, RawStaysInUnitInterval) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 30;
    const auto bank = MemoryBank::random(n, 3, trial);
    const auto s = anomaly_score(random_unit(3, rng), bank.view(), 1 + trial % n);
    EXPECT_GE(s.raw, 0.0);
    EXPECT_LE(s.raw, 1.0);
  }
}

TEST(Geodesic, AnalyticCircleCases) {
  const double pi = std::numbers::pi;
  // antipodal pair: raw = theta / pi
  const auto pair = circle_bank({0.0, pi});
  for (double t = 0.0; t <= pi / 2; t += 0.05) EXPECT_NEAR(anomaly_score(at_angle(t), pair.view(), 1).raw, t / pi, 1e-12);
  // three slots 120 degrees apart: raw = theta / (4 pi / 3 + theta) up to the cell edge
  const auto tri = circle_bank({0.0, 2 * pi / 3, 4 * pi / 3});
  for (double t = 0.0; t <= pi / 3; t += 0.05) {
    EXPECT_NEAR(anomaly_score(at_angle(t), tri.view(), 1).raw, t / (4 * pi / 3 + t), 1e-12);
  }
}

TEST(Geodesic, MovingAwayFromNearestSlotNeverLowersScore) {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0.0, 2 * std::numbers::pi);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> angles(7);
    for (auto& a : angles) a = u(rng);
    const auto bank = circle_bank(angles);
    const double start = angles[0];
    const double dir = trial % 2 ? 1.0 : -1.0;
    double previous = -1.0;
    for (double t = 0.0; t < std::numbers::pi; t += 1e-3) {
      const auto z = at_angle(start + dir * t);
      const auto s = anomaly_score(z, bank.view(), 1);
      if (s.votes[0].slot != 0) break;  // left the cell of the starting slot
      EXPECT_GE(s.raw, previous - 1e-15);
      previous = s.raw;
    }
  }
}

TEST(Normalize, MinMaxAndDegenerate) {
  std::vector<AnomalyScore> one(1);
  one[0].raw = 0.3;
  normalize_scores(one);
  EXPECT_EQ(one[0].normalized, 0.0);

  std::vector<AnomalyScore> many(3);
  many[0].raw = 0.2;
  many[1].raw = 0.6;
  many[2].raw = 0.3;
  normalize_scores(many);
  EXPECT_EQ(many[0].normalized, 0.0);
  EXPECT_EQ(many[1].normalized, 1.0);
  EXPECT_NEAR(many[2].normalized, 0.25, 1e-15);
}

namespace {

struct Trained {
  TrainingSet data;
  std::vector<Sample> held_out;
  TrainingState state;
};

Trained train_toy() {
  SynthConfig sc;
  sc.count = 128;
  sc.size = 8;
  sc.sigma_min = 1.0;
  sc.sigma_max = 2.0;
  auto samples = synth_generate(sc, 3);
  TrainingConfig cfg;
  cfg.batch_size = 8;
  cfg.latent_dim = 8;
  cfg.encoder_hidden = {32};
  cfg.decoder_hidden = {32};
  cfg.learning_rate = 1e-3;
  cfg.pretrain_epochs = 5;
  cfg.rounds = 2;
  cfg.epochs_per_round = 3;
  cfg.k_max = 8;
  std::vector<Sample> train, held;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i % 4 == 0) {
      held.push_back(samples[i]);
    } else if (samples[i].label == Label::normal) {
      train.push_back(samples[i]);
    }
  }
  auto data = make_training_set(train);
  auto state = TrainingState::initialize(cfg, data);
  pretrain(data, state, cfg);
  train_progressive(data, state, cfg);
  return {std::move(data), std::move(held), std::move(state)};
}

std::vector<std::vector<double>> pixels(const std::vector<Image>& images) {
  std::vector<std::vector<double>> out;
  for (const auto& img : images) out.push_back(img.pixels);
  return out;
}

}  // namespace

TEST(ScoreDataset, TrainingNormalsBelowHeldOutAnomalies) {
  const auto t = train_toy();
  const auto normals = score_dataset(pixels(t.data.images), t.state.params, t.state.bank, 5);
  std::vector<Image> anomalies;
  for (const auto& s : t.held_out) {
    if (s.label == Label::anomalous) anomalies.push_back(s.image);
  }
  ASSERT_FALSE(anomalies.empty());
  const auto bad = score_dataset(pixels(anomalies), t.state.params, t.state.bank, 5);
  auto mean = [](const std::vector<AnomalyScore>& v) {
    double s = 0.0;
    for (const auto& a : v) s += a.raw;
    return s / static_cast<double>(v.size());
  };
  EXPECT_LT(mean(normals), mean(bad));
}

TEST(ScoreDataset, PermutationAndRankInvariance) {
  const auto t = train_toy();
  std::vector<std::vector<double>> imgs;
  std::vector<int> labels;
  for (const auto& s : t.held_out) {
    imgs.push_back(s.image.pixels);
    labels.push_back(s.label == Label::anomalous ? 1 : 0);
  }
  const auto base = score_dataset(imgs, t.state.params, t.state.bank, 5);
  std::vector<std::size_t> perm(imgs.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(2);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<double>> shuffled;
  for (auto p : perm) shuffled.push_back(imgs[p]);
  const auto moved = score_dataset(shuffled, t.state.params, t.state.bank, 5);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    EXPECT_EQ(moved[i].raw, base[perm[i]].raw);
    EXPECT_EQ(moved[i].normalized, base[perm[i]].normalized);
  }
  std::vector<double> raw, norm;
  for (const auto& s : base) {
    raw.push_back(s.raw);
    norm.push_back(s.normalized);
    EXPECT_GE(s.normalized, 0.0);
    EXPECT_LE(s.normalized, 1.0);
  }
  EXPECT_EQ(roc_auc({raw, labels}), roc_auc({norm, labels}));
  EXPECT_THROW(score_dataset({}, t.state.params, t.state.bank, 5), std::invalid_argument);
}

TEST(ScoreDataset, FlaggedSlotsNeverVote) {
  auto bank = MemoryBank::random(20, 4, 7);
  for (std::size_t i = 0; i < 20; i += 3) bank.set_flag(i, true);
  const auto params = init_params(Architecture{6, {5}, 4, {5}}, 1);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> imgs(10, std::vector<double>(6));
  for (auto& img : imgs) {
    for (auto& p : img) p = u(rng);
  }
  for (const auto& s : score_dataset(imgs, params, bank, 13)) {
    for (const auto& v : s.votes) EXPECT_FALSE(bank.flagged(v.slot));
  }
}
