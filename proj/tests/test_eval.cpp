#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "salad/eval.hpp"

using namespace salad;

namespace {

// O(n^2) pair counting, ties worth one half
double pairwise_auc(const LabeledScores& ls) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < ls.scores.size(); ++i) {
    if (ls.labels[i] != 1) continue;
    for (std::size_t j = 0; j < ls.scores.size(); ++j) {
      if (ls.labels[j] != 0) continue;
      pairs += 1.0;
      if (ls.scores[i] > ls.scores[j]) wins += 1.0;
      if (ls.scores[i] == ls.scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

LabeledScores random_instance(std::mt19937_64& rng, std::size_t n, double prevalence, bool coarse = false) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabeledScores ls;
  for (std::size_t i = 0; i < n; ++i) {
    ls.labels.push_back(u(rng) < prevalence ? 1 : 0);
    const double s = u(rng) + 0.3 * ls.labels.back();
    ls.scores.push_back(coarse ? std::round(s * 5.0) / 5.0 : s);
  }
  ls.labels[0] = 1;
  ls.labels[1] = 0;
  return ls;
}

}  // namespace

TEST(Auc, Examples) {
  EXPECT_EQ(roc_auc({{0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}}), 0.75);
  EXPECT_EQ(roc_auc({{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}}), 1.0);
  EXPECT_EQ(roc_auc({{0.5, 0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1, 1}}), 0.5);
}

TEST(Auc, Errors) {
  EXPECT_THROW(roc_auc({{0.1, 0.2}, {1, 1}}), std::invalid_argument);
  EXPECT_THROW(roc_auc({{0.1, 0.2}, {0, 0}}), std::invalid_argument);
  EXPECT_THROW(roc_auc({{0.1}, {0, 1}}), std::invalid_argument);
  EXPECT_THROW(roc_auc({{0.1, 0.2}, {0, 2}}), std::invalid_argument);
  EXPECT_THROW(auprc({{0.1, 0.2}, {1, 1}}), std::invalid_argument);
  EXPECT_THROW(roc_points({{0.1, 0.2}, {0, 0}}), std::invalid_argument);
}

TEST(Auc, MatchesPairCountingWithTies) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ls = random_instance(rng, 20 + trial, 0.3, trial % 2 == 0);
    EXPECT_NEAR(roc_auc(ls), pairwise_auc(ls), 1e-12);
  }
}

TEST(Auc, MonotoneTransformAndNegation) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto ls = random_instance(rng, 60, 0.4);
    auto squashed = ls;
    auto negated = ls;
    for (auto& s : squashed.scores) s = std::exp(3.0 * s) - 7.0;
    for (auto& s : negated.scores) s = -s;
    EXPECT_EQ(roc_auc(ls), roc_auc(squashed));
    EXPECT_NEAR(roc_auc(ls) + roc_auc(negated), 1.0, 1e-12);
  }
}

TEST(Auc, PermutationInvariant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ls = random_instance(rng, 40, 0.3, true);
    std::vector<std::size_t> perm(ls.scores.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    LabeledScores moved;
    for (auto p : perm) {
      moved.scores.push_back(ls.scores[p]);
      moved.labels.push_back(ls.labels[p]);
    }
    EXPECT_NEAR(roc_auc(ls), roc_auc(moved), 1e-12);
  }
}

TEST(Auprc, Examples) {
  EXPECT_EQ(auprc({{0.2, 0.9}, {1, 0}}), 0.5);
  EXPECT_EQ(auprc({{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}}), 1.0);
  // positives at ranks 1 and 3: (1/1 + 2/3) / 2
  EXPECT_NEAR(auprc({{0.9, 0.8, 0.7, 0.1}, {1, 0, 1, 0}}), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  // equal scores keep input order
  EXPECT_EQ(auprc({{0.5, 0.5}, {0, 1}}), 0.5);
  EXPECT_EQ(auprc({{0.5, 0.5}, {1, 0}}), 1.0);
}

TEST(Auprc, RandomScoresNearPrevalence) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double mean_ap = 0.0, mean_prev = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    LabeledScores ls;
    for (int i = 0; i < 200; ++i) {
      ls.scores.push_back(u(rng));
      ls.labels.push_back(u(rng) < 0.2 ? 1 : 0);
    }
    mean_ap += auprc(ls);
    mean_prev += static_cast<double>(ls.positives()) / 200.0;
  }
  mean_ap /= 200.0;
  mean_prev /= 200.0;
  EXPECT_GE(mean_ap, mean_prev - 0.05);
  EXPECT_LE(mean_ap, mean_prev + 0.05);
}

TEST(RocPoints, StaircaseAndTrapezoid) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ls = random_instance(rng, 30 + trial, 0.35, trial % 3 == 0);
    const auto pts = roc_points(ls);
    ASSERT_GE(pts.size(), 2u);
    EXPECT_EQ(pts.front().fpr, 0.0);
    EXPECT_EQ(pts.front().tpr, 0.0);
    EXPECT_EQ(pts.back().fpr, 1.0);
    EXPECT_EQ(pts.back().tpr, 1.0);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      EXPECT_GE(pts[i].fpr, pts[i - 1].fpr);
      EXPECT_GE(pts[i].tpr, pts[i - 1].tpr);
    }
    EXPECT_NEAR(trapezoid_area(pts), roc_auc(ls), 1e-10);
  }
}

TEST(PrPoints, EndsAtFullRecall) {
  const LabeledScores ls{{0.9, 0.8, 0.8, 0.1}, {1, 0, 1, 0}};
  const auto pts = pr_points(ls);
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(pts[0].recall, 0.5);
  EXPECT_EQ(pts[0].precision, 1.0);
  EXPECT_EQ(pts[1].recall, 1.0);
  EXPECT_NEAR(pts[1].precision, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(pts[2].recall, 1.0);
  EXPECT_EQ(pts[2].precision, 0.5);
}

TEST(Summary, MeanAndInterval) {
  const auto one = summarize({0.8});
  EXPECT_EQ(one.mean, 0.8);
  EXPECT_EQ(one.ci95, 0.0);
  const auto four = summarize({0.7, 0.8, 0.9, 0.8});
  EXPECT_NEAR(four.mean, 0.8, 1e-15);
  // sample std sqrt(0.02 / 3)
  EXPECT_NEAR(four.ci95, 1.96 * std::sqrt(0.02 / 3.0), 1e-12);
  EXPECT_THROW(summarize({}), std::invalid_argument);
}
