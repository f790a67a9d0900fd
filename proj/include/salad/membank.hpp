// Feature memory bank: one unit-vector slot per training sample.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "salad/model.hpp"
#include "salad/ndgrad.hpp"

namespace salad {

inline constexpr double kSlotNormTolerance = 1e-8;

struct SimilarityDistribution {
  std::vector<double> probs;
  std::optional<std::size_t> query;
};

/// k nearest slots by cosine distance, nearest first.
struct NeighborSet {
  std::vector<std::size_t> indices;
  std::vector<double> distances;
};

class MemoryBank;

/// Read-only subset of a bank's slots with a map back to bank indices.
class BankView {
 public:
  BankView(const MemoryBank& bank, std::vector<std::size_t> index);

  std::size_t size() const { return index_.size(); }
  std::size_t dim() const;
  std::span<const double> slot(std::size_t j) const;
  std::size_t original_index(std::size_t j) const { return index_.at(j); }
  const std::vector<std::size_t>& index_map() const { return index_; }

 private:
  const MemoryBank* bank_;
  std::vector<std::size_t> index_;
};

class MemoryBank {
 public:
  /// Isotropic Gaussian draws projected onto the sphere, all flags cleared.
  static MemoryBank random(std::size_t slots, std::size_t dim, std::uint64_t seed,
                           double temperature = 0.1, double update_rate = 0.5) {
    if (slots == 0 || dim == 0) throw std::invalid_argument("memory bank needs positive N and d");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> data(slots * dim);
    for (std::size_t i = 0; i < slots; ++i) {
      double sq = 0.0;
      do {
        sq = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          data[i * dim + j] = normal(rng);
          sq += data[i * dim + j] * data[i * dim + j];
        }
      } while (sq < 1e-24);
      const double norm = std::sqrt(sq);
      for (std::size_t j = 0; j < dim; ++j) data[i * dim + j] /= norm;
    }
    return MemoryBank(slots, dim, std::move(data), std::vector<bool>(slots, false), temperature,
                      update_rate);
  }

  /// Builds a bank from explicit unit slots; used by snapshots and tests.
  static MemoryBank from_slots(std::size_t dim, std::vector<std::vector<double>> slots,
                               std::vector<bool> flags, double temperature, double update_rate) {
    if (slots.empty() || dim == 0) throw std::invalid_argument("memory bank needs positive N and d");
    if (flags.size() != slots.size()) throw std::invalid_argument("flag count does not match slot count");
    std::vector<double> data;
    data.reserve(slots.size() * dim);
    for (const auto& s : slots) {
      if (s.size() != dim) throw std::invalid_argument("slot dimension mismatch");
      data.insert(data.end(), s.begin(), s.end());
    }
    return MemoryBank(slots.size(), dim, std::move(data), std::move(flags), temperature, update_rate);
  }

  std::size_t size() const { return slots_; }
  std::size_t dim() const { return dim_; }
  double temperature() const { return temperature_; }
  double update_rate() const { return update_rate_; }

  std::span<const double> slot(std::size_t i) const {
    check_index(i);
    return std::span<const double>(data_).subspan(i * dim_, dim_);
  }
  std::span<const double> raw() const { return data_; }

  bool flagged(std::size_t i) const {
    check_index(i);
    return flags_[i];
  }
  const std::vector<bool>& flags() const { return flags_; }
  void set_flag(std::size_t i, bool anomalous) {
    check_index(i);
    flags_[i] = anomalous;
  }

  /// m_i <- (1 - t) m_i + t z, then renormalized onto the sphere.
  void update_slot(std::size_t i, const LatentVector& z) {
    check_index(i);
    if (z.size() != dim_) throw std::invalid_argument("update_slot: latent dimension mismatch");
    double* m = data_.data() + i * dim_;
    std::vector<double> next(dim_);
    double sq = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      next[j] = (1.0 - update_rate_) * m[j] + update_rate_ * z[j];
      sq += next[j] * next[j];
    }
    const double norm = std::sqrt(sq);
    // antipodal average with t = 0.5 vanishes; keep the slot where it was
    if (!(norm > ndgrad::kNormEpsilon)) return;
    for (std::size_t j = 0; j < dim_; ++j) m[j] = next[j] / norm;
  }

  /// p_j = exp(m_j.z / tau) / sum_k exp(m_k.z / tau) over every slot.
  SimilarityDistribution similarity_distribution(const LatentVector& z,
                                                 std::optional<std::size_t> query = {}) const {
    if (z.size() != dim_) throw std::invalid_argument("similarity_distribution: dimension mismatch");
    std::vector<double> logits(slots_);
    for (std::size_t i = 0; i < slots_; ++i) logits[i] = z.dot(slot(i)) / temperature_;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (auto& l : logits) {
      l = std::exp(l - mx);
      total += l;
    }
    for (auto& l : logits) l /= total;
    return {std::move(logits), query};
  }

  /// The k slots with the smallest cosine distance 1 - m.z, ties to the lower index.
  NeighborSet top_k_neighbors(const LatentVector& z, std::size_t k,
                              std::span<const std::size_t> exclude = {}) const {
    if (z.size() != dim_) throw std::invalid_argument("top_k_neighbors: dimension mismatch");
    std::vector<bool> skip(slots_, false);
    std::size_t excluded = 0;
    for (auto e : exclude) {
      check_index(e);
      if (!skip[e]) ++excluded;
      skip[e] = true;
    }
    if (k > slots_ - excluded) {
      throw std::invalid_argument("top_k_neighbors: k=" + std::to_string(k) + " exceeds " +
                                  std::to_string(slots_ - excluded) + " available slots");
    }
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(slots_ - excluded);
    for (std::size_t i = 0; i < slots_; ++i) {
      if (!skip[i]) cand.emplace_back(1.0 - z.dot(slot(i)), i);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    NeighborSet out;
    for (std::size_t r = 0; r < k; ++r) {
      out.distances.push_back(cand[r].first);
      out.indices.push_back(cand[r].second);
    }
    return out;
  }

  /// Probability mass the similarity distribution of z puts on its k nearest slots.
  double neighbor_mass(const LatentVector& z, std::size_t k) const {
    const auto dist = similarity_distribution(z);
    const auto nn = top_k_neighbors(z, k);
    double mass = 0.0;
    for (auto i : nn.indices) mass += dist.probs[i];
    return mass;
  }

  BankView view() const {
    std::vector<std::size_t> all(slots_);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return BankView(*this, std::move(all));
  }

  /// Slots whose training sample carried an anomalous label are hidden.
  BankView discard_anomalous() const {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < slots_; ++i) {
      if (!flags_[i]) keep.push_back(i);
    }
    if (keep.empty()) throw std::invalid_argument("discard_anomalous: every slot is flagged");
    return BankView(*this, std::move(keep));
  }

  /// Slots as a constant [d x N] tensor, ready for z * M^T products.
  ndgrad::Tensor transposed_tensor() const {
    std::vector<double> t(dim_ * slots_);
    for (std::size_t i = 0; i < slots_; ++i) {
      for (std::size_t j = 0; j < dim_; ++j) t[j * slots_ + i] = data_[i * dim_ + j];
    }
    return ndgrad::Tensor({dim_, slots_}, std::move(t));
  }

  friend bool operator==(const MemoryBank&, const MemoryBank&) = default;

 private:
  MemoryBank(std::size_t slots, std::size_t dim, std::vector<double> data, std::vector<bool> flags,
             double temperature, double update_rate)
      : slots_(slots), dim_(dim), data_(std::move(data)), flags_(std::move(flags)),
        temperature_(temperature), update_rate_(update_rate) {
    if (!(temperature > 0.0 && temperature <= 1.0)) {
      throw std::invalid_argument("temperature must lie in (0, 1]");
    }
    if (!(update_rate >= 0.0 && update_rate <= 1.0)) {
      throw std::invalid_argument("update rate must lie in [0, 1]");
    }
    for (std::size_t i = 0; i < slots_; ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) sq += data_[i * dim_ + j] * data_[i * dim_ + j];
      if (std::abs(std::sqrt(sq) - 1.0) > kSlotNormTolerance) {
        throw std::invalid_argument("memory bank slot " + std::to_string(i) + " is not unit norm");
      }
    }
  }

  void check_index(std::size_t i) const {
    if (i >= slots_) {
      throw std::out_of_range("slot index " + std::to_string(i) + " out of range for bank of " +
                              std::to_string(slots_));
    }
  }

  std::size_t slots_;
  std::size_t dim_;
  std::vector<double> data_;
  std::vector<bool> flags_;
  double temperature_;
  double update_rate_;
};

inline BankView::BankView(const MemoryBank& bank, std::vector<std::size_t> index)
    : bank_(&bank), index_(std::move(index)) {}

inline std::size_t BankView::dim() const { return bank_->dim(); }

inline std::span<const double> BankView::slot(std::size_t j) const { return bank_->slot(index_.at(j)); }

}  // namespace salad
