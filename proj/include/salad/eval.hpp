// Threshold-free ranking metrics. Positives are anomalous (label 1) and a
// higher score means more anomalous.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace salad {

struct LabeledScores {
  std::vector<double> scores;
  std::vector<int> labels;  // 0 normal, 1 anomalous

  std::size_t positives() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)); }
  std::size_t negatives() const { return labels.size() - positives(); }

  void validate() const {
    if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
    for (int l : labels) {
      if (l != 0 && l != 1) throw std::invalid_argument("labels must be 0 or 1");
    }
    for (double s : scores) {
      if (!std::isfinite(s)) throw std::invalid_argument("non-finite score");
    }
    if (positives() == 0 || negatives() == 0) {
      throw std::invalid_argument("ranking metrics need both classes present");
    }
  }
};

namespace detail {

// indices by descending score; equal scores keep input order
inline std::vector<std::size_t> rank_descending(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace detail

/// Mann-Whitney: share of (positive, negative) pairs ranked correctly, ties half.
/// Computed from tie-averaged ranks in O(n log n).
inline double roc_auc(const LabeledScores& ls) {
  ls.validate();
  const std::size_t n = ls.scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ls.scores[a] < ls.scores[b]; });
  // sum of (rank - 1) over positives with ties averaged, in half units to stay exact
  double twice_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t pos = 0;
    while (j < n && ls.scores[order[j]] == ls.scores[order[i]]) {
      pos += static_cast<std::size_t>(ls.labels[order[j]]);
      ++j;
    }
    twice_rank_sum += static_cast<double>(pos) * static_cast<double>(i + j - 1);
    i = j;
  }
  const double p = static_cast<double>(ls.positives()), q = static_cast<double>(ls.negatives());
  const double u = twice_rank_sum / 2.0 - p * (p - 1.0) / 2.0;
  return u / (p * q);
}

/// Average precision: mean over positives of the precision at their rank,
/// ranking by descending score with ties kept in input order.
inline double auprc(const LabeledScores& ls) {
  ls.validate();
  const auto order = detail::rank_descending(ls.scores);
  double hits = 0.0, ap = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (ls.labels[order[r]] == 1) {
      hits += 1.0;
      ap += hits / static_cast<double>(r + 1);
    }
  }
  return ap / static_cast<double>(ls.positives());
}

struct RocPoint {
  double fpr;
  double tpr;
};

/// ROC staircase from (0,0) to (1,1), one point per distinct threshold.
inline std::vector<RocPoint> roc_points(const LabeledScores& ls) {
  ls.validate();
  const auto order = detail::rank_descending(ls.scores);
  const double p = static_cast<double>(ls.positives()), q = static_cast<double>(ls.negatives());
  std::vector<RocPoint> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = ls.scores[order[i]];
    while (i < order.size() && ls.scores[order[i]] == s) {
      (ls.labels[order[i]] == 1 ? tp : fp)++;
      ++i;
    }
    pts.push_back({static_cast<double>(fp) / q, static_cast<double>(tp) / p});
  }
  return pts;
}

struct PrPoint {
  double recall;
  double precision;
};

/// Precision-recall pairs, one per distinct threshold, highest threshold first.
inline std::vector<PrPoint> pr_points(const LabeledScores& ls) {
  ls.validate();
  const auto order = detail::rank_descending(ls.scores);
  const double p = static_cast<double>(ls.positives());
  std::vector<PrPoint> pts;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = ls.scores[order[i]];
    while (i < order.size() && ls.scores[order[i]] == s) {
      tp += static_cast<std::size_t>(ls.labels[order[i]]);
      ++i;
    }
    pts.push_back({static_cast<double>(tp) / p, static_cast<double>(tp) / static_cast<double>(i)});
  }
  return pts;
}

/// Trapezoidal area under a polyline of ROC points.
inline double trapezoid_area(const std::vector<RocPoint>& pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  }
  return area;
}

/// Mean and 1.96 * sample standard deviation (0 for a single value).
struct Summary {
  double mean = 0.0;
  double ci95 = 0.0;
};

inline Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, 1.96 * std::sqrt(ss / (n - 1.0))};
}

}  // namespace salad
