// Training objectives: reconstruction, sample-specific (instance
// discrimination against the bank), neighborhood aggregation, and their
// weighted sum. All reductions are batch means.
#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "salad/membank.hpp"
#include "salad/model.hpp"
#include "salad/ndgrad.hpp"

namespace salad {

struct LossBreakdown {
  double mse = 0.0;
  double ss = 0.0;
  double agg = 0.0;
  double latent = 0.0;  // ss + agg
  double total = 0.0;   // mse + lambda * latent
  double lambda = 0.0;
};

/// Value-level combination of already evaluated loss terms.
inline LossBreakdown combine_losses(double mse, double ss, double agg, double lambda) {
  for (double v : {mse, ss, agg, lambda}) {
    if (!std::isfinite(v)) throw NumericError("non-finite loss component");
  }
  const double latent = ss + agg;
  return {mse, ss, agg, latent, mse + lambda * latent, lambda};
}

/// One mini-batch as seen by the latent losses.
///
/// Position b of the batch is dataset sample `samples[b]`, which owns bank
/// slot `samples[b]`. `views[b]` lists rows of the view-embedding tensor
/// that are augmentations of sample b. `prototypical` lists batch
/// positions (not dataset indices) that take part in aggregation.
struct MiniBatch {
  std::vector<std::size_t> samples;
  std::vector<std::size_t> prototypical;
  std::vector<std::vector<std::size_t>> views;

  /// Every position prototypical, views given explicitly.
  static MiniBatch with_views(std::vector<std::size_t> samples,
                              std::vector<std::vector<std::size_t>> views) {
    MiniBatch b{std::move(samples), {}, std::move(views)};
    for (std::size_t i = 0; i < b.samples.size(); ++i) b.prototypical.push_back(i);
    return b;
  }

  /// Every position prototypical; each sample's only view is its own row.
  static MiniBatch identity(std::vector<std::size_t> samples) {
    std::vector<std::vector<std::size_t>> views;
    for (std::size_t i = 0; i < samples.size(); ++i) views.push_back({i});
    return with_views(std::move(samples), std::move(views));
  }

  void validate(std::size_t bank_size, std::size_t view_rows) const {
    if (samples.empty()) throw std::invalid_argument("mini-batch is empty");
    if (views.size() != samples.size()) throw std::invalid_argument("one view list per sample required");
    for (auto s : samples) {
      if (s >= bank_size) throw std::out_of_range("batch sample has no bank slot");
    }
    for (const auto& v : views) {
      if (v.empty()) throw std::invalid_argument("sample without augmented views");
      for (auto r : v) {
        if (r >= view_rows) throw std::out_of_range("view row out of range");
      }
    }
    for (auto p : prototypical) {
      if (p >= samples.size()) throw std::out_of_range("prototypical position outside the batch");
    }
  }
};

/// sum_i ||x_i - x_hat_i||^2 / batch.
inline ndgrad::Tensor mse_loss(ndgrad::Graph& g, const ndgrad::Tensor& x, const ndgrad::Tensor& x_hat) {
  if (x.shape() != x_hat.shape()) {
    throw std::invalid_argument("mse_loss: shape mismatch " + ndgrad::shape_string(x.shape()) +
                                " vs " + ndgrad::shape_string(x_hat.shape()));
  }
  auto total = ndgrad::sum(g, ndgrad::square(g, ndgrad::sub(g, x, x_hat)));
  return ndgrad::div(g, total, static_cast<double>(x.rows()));
}

namespace detail {

// logits of rows of z against every bank slot, divided by the temperature
inline ndgrad::Tensor bank_logits(ndgrad::Graph& g, const MemoryBank& bank, const ndgrad::Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != bank.dim()) {
    throw std::invalid_argument("embedding width does not match bank dimension");
  }
  return ndgrad::div(g, ndgrad::matmul(g, z, bank.transposed_tensor()), bank.temperature());
}

inline constexpr double kInnerMassSlack = 1e-9;

inline void check_inner_mass(const ndgrad::Tensor& inner, const char* what) {
  for (double v : inner.values()) {
    if (v >= 1.0 + kInnerMassSlack) {
      throw std::logic_error(std::string(what) + ": inner probability mass exceeds 1 (index aliasing)");
    }
  }
}

}  // namespace detail

/// -1/|B| sum_i log( mean_{v in AUG_i} p(v -> slot of i) ).
///
/// Each augmented view forms its own similarity distribution over the
/// bank; the mass it assigns to the source sample's slot is averaged over
/// the views so the inner quantity stays a probability.
inline ndgrad::Tensor sample_specific_loss(ndgrad::Graph& g, const MiniBatch& batch, const MemoryBank& bank,
                                           const ndgrad::Tensor& view_embeddings) {
  const std::size_t rows = view_embeddings.rows();
  batch.validate(bank.size(), rows);
  const std::size_t n = bank.size(), b = batch.samples.size();

  std::vector<double> target(rows * n, 0.0);
  std::vector<double> pooling(b * rows, 0.0);
  std::vector<bool> claimed(rows, false);
  for (std::size_t i = 0; i < b; ++i) {
    const double share = 1.0 / static_cast<double>(batch.views[i].size());
    for (auto r : batch.views[i]) {
      if (claimed[r]) throw std::logic_error("view row shared by two samples (index aliasing)");
      claimed[r] = true;
      target[r * n + batch.samples[i]] = 1.0;
      pooling[i * rows + r] = share;
    }
  }

  auto probs = ndgrad::softmax_rows(g, detail::bank_logits(g, bank, view_embeddings));
  auto own = ndgrad::row_sum(g, ndgrad::mul(g, probs, ndgrad::Tensor({rows, n}, std::move(target))));
  auto inner = ndgrad::matmul(g, ndgrad::Tensor({b, rows}, std::move(pooling)), own);
  detail::check_inner_mass(inner, "sample_specific_loss");
  auto total = ndgrad::neg(g, ndgrad::sum(g, ndgrad::log(g, inner)));
  return ndgrad::div(g, total, static_cast<double>(b));
}

/// -1/|B_ps| sum_{i in B_ps} log( sum_{j in N_k(z_i)} p_ij ).
///
/// Neighbors are an index choice made from the current embedding values;
/// gradients flow only through p. With `exclude_self` the sample's own
/// slot is removed from both the neighbor set and the normalizer.
inline ndgrad::Tensor aggregation_loss(ndgrad::Graph& g, const MiniBatch& batch, const MemoryBank& bank,
                                       const ndgrad::Tensor& embeddings, std::size_t k,
                                       bool exclude_self = false) {
  if (k == 0) throw std::invalid_argument("aggregation_loss: k must be at least 1");
  batch.validate(bank.size(), embeddings.rows());
  if (embeddings.rows() != batch.samples.size()) {
    throw std::invalid_argument("aggregation_loss: one embedding row per batch sample required");
  }
  if (batch.prototypical.empty()) throw std::invalid_argument("aggregation_loss: no prototypical samples");
  const std::size_t n = bank.size(), b = batch.samples.size(), d = bank.dim();
  const std::size_t p = batch.prototypical.size();

  ndgrad::Tensor z = embeddings;
  bool all_rows = p == b;
  for (std::size_t r = 0; all_rows && r < p; ++r) all_rows = batch.prototypical[r] == r;
  if (!all_rows) {
    std::vector<double> select(p * b, 0.0);
    for (std::size_t r = 0; r < p; ++r) select[r * b + batch.prototypical[r]] = 1.0;
    z = ndgrad::matmul(g, ndgrad::Tensor({p, b}, std::move(select)), embeddings);
  }

  std::vector<double> neighbor_mask(p * n, 0.0);
  std::vector<double> self_mask(p * n, 0.0);
  for (std::size_t r = 0; r < p; ++r) {
    const std::size_t own_slot = batch.samples[batch.prototypical[r]];
    auto query = LatentVector::normalized(
        std::vector<double>(z.values().begin() + static_cast<std::ptrdiff_t>(r * d),
                            z.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * d)));
    std::vector<std::size_t> skip;
    if (exclude_self) skip.push_back(own_slot);
    for (auto j : bank.top_k_neighbors(query, k, skip).indices) neighbor_mask[r * n + j] = 1.0;
    // exp(-1e30) underflows to exactly zero, dropping the slot from the normalizer
    if (exclude_self) self_mask[r * n + own_slot] = -1e30;
  }

  auto logits = detail::bank_logits(g, bank, z);
  if (exclude_self) logits = ndgrad::add(g, logits, ndgrad::Tensor({p, n}, std::move(self_mask)));
  auto probs = ndgrad::softmax_rows(g, logits);
  auto inner = ndgrad::row_sum(g, ndgrad::mul(g, probs, ndgrad::Tensor({p, n}, std::move(neighbor_mask))));
  detail::check_inner_mass(inner, "aggregation_loss");
  auto total = ndgrad::neg(g, ndgrad::sum(g, ndgrad::log(g, inner)));
  return ndgrad::div(g, total, static_cast<double>(p));
}

/// Differentiable total plus its value breakdown.
struct SaladLoss {
  ndgrad::Tensor total;
  LossBreakdown breakdown;
};

/// mse + lambda (ss + agg); absent terms count as zero. The latent terms
/// depend on encoder outputs only, so decoder parameters receive
/// gradient from the reconstruction term alone.
inline SaladLoss salad_loss(ndgrad::Graph& g, const std::optional<ndgrad::Tensor>& mse,
                            const std::optional<ndgrad::Tensor>& ss,
                            const std::optional<ndgrad::Tensor>& agg, double lambda) {
  auto value = [](const std::optional<ndgrad::Tensor>& t) { return t ? t->item() : 0.0; };
  SaladLoss out{{}, combine_losses(value(mse), value(ss), value(agg), lambda)};

  std::optional<ndgrad::Tensor> latent;
  if (ss && agg) {
    latent = ndgrad::add(g, *ss, *agg);
  } else if (ss) {
    latent = *ss;
  } else if (agg) {
    latent = *agg;
  }
  if (latent && lambda != 1.0) latent = ndgrad::mul(g, *latent, lambda);

  if (mse && latent) {
    out.total = ndgrad::add(g, *mse, *latent);
  } else if (mse) {
    out.total = *mse;
  } else if (latent) {
    out.total = *latent;
  } else {
    throw std::invalid_argument("salad_loss: no loss term enabled");
  }
  return out;
}

}  // namespace salad
