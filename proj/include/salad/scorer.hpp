// Weighted-kNN angular anomaly score against the memory bank.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "salad/membank.hpp"
#include "salad/model.hpp"

namespace salad {

struct Vote {
  std::size_t slot;  // index into the underlying bank
  double weight;
};

struct AnomalyScore {
  double raw = 0.0;
  double normalized = 0.0;
  std::vector<Vote> votes;  // nearest first
};

/// A(z) = (1/K) sum_{k <= K} w_k with w_k = arccos(m_k.z) / sum_j arccos(m_j.z).
///
/// The normalizer runs over every slot of the view; the numerators are the
/// K smallest angles (ties to the lower view position). If z coincides
/// with every slot the angles all vanish and the score is 0.
inline AnomalyScore anomaly_score(const LatentVector& z, const BankView& view, std::size_t k) {
  if (view.size() == 0) throw std::invalid_argument("anomaly_score: empty bank view");
  if (k == 0) throw std::invalid_argument("anomaly_score: K must be positive");
  if (k > view.size()) {
    throw std::invalid_argument("anomaly_score: K=" + std::to_string(k) + " exceeds view of " +
                                std::to_string(view.size()));
  }
  std::vector<std::pair<double, std::size_t>> angles(view.size());
  double total = 0.0;
  for (std::size_t j = 0; j < view.size(); ++j) {
    const double a = std::acos(std::clamp(z.dot(view.slot(j)), -1.0, 1.0));
    angles[j] = {a, j};
    total += a;
  }
  std::partial_sort(angles.begin(), angles.begin() + static_cast<std::ptrdiff_t>(k), angles.end());
  AnomalyScore out;
  double acc = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    const double w = total > 0.0 ? angles[r].first / total : 0.0;
    out.votes.push_back({view.original_index(angles[r].second), w});
    acc += w;
  }
  out.raw = acc / static_cast<double>(k);
  return out;
}

/// Min-max rescaling of raw scores into `normalized`; a degenerate range maps to 0.
inline void normalize_scores(std::vector<AnomalyScore>& scores) {
  if (scores.empty()) return;
  auto [lo, hi] = std::minmax_element(scores.begin(), scores.end(),
                                      [](const auto& a, const auto& b) { return a.raw < b.raw; });
  const double min = lo->raw, range = hi->raw - lo->raw;
  for (auto& s : scores) s.normalized = range > 0.0 ? (s.raw - min) / range : 0.0;
}

/// Encodes each image and scores it against the bank with anomalous slots discarded.
inline std::vector<AnomalyScore> score_dataset(std::span<const std::vector<double>> images,
                                               const ModelParams& params, const MemoryBank& bank,
                                               std::size_t k) {
  if (images.empty()) throw std::invalid_argument("score_dataset: no samples");
  const auto view = bank.discard_anomalous();
  const auto z = embed_all(params, images);
  std::vector<AnomalyScore> scores;
  scores.reserve(z.size());
  for (const auto& v : z) scores.push_back(anomaly_score(v, view, k));
  normalize_scores(scores);
  return scores;
}

}  // namespace salad
