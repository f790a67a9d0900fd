// Two-phase training: autoencoder pre-training with the sample-specific
// term, then progressive rounds of the full objective with a growing
// neighborhood size. The memory bank is refreshed after every step.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "salad/config.hpp"
#include "salad/dataprep.hpp"
#include "salad/losses.hpp"
#include "salad/membank.hpp"
#include "salad/model.hpp"
#include "salad/ndgrad.hpp"

namespace salad {

/// splitmix64 finalizer; derives independent stream seeds from (seed, a, b).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  auto step = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return step(step(step(seed) ^ a) ^ b);
}

// -- augmentation -----------------------------------------------------------------

/// Random views of `image`: horizontal flip, crop-and-resize keeping at
/// least `min_crop_area` of the area, additive noise clipped to [0, 1].
/// With views == 0 the image itself is the only view.
inline std::vector<Image> augment(const Image& image, const AugmentSpec& spec, std::uint64_t seed) {
  if (spec.views == 0) return {image};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Image> views;
  for (std::size_t v = 0; v < spec.views; ++v) {
    Image img = image;
    if (spec.flip_prob > 0.0 && unit(rng) < spec.flip_prob) {
      for (std::size_t r = 0; r < img.height; ++r) {
        std::reverse(img.pixels.begin() + static_cast<std::ptrdiff_t>(r * img.width),
                     img.pixels.begin() + static_cast<std::ptrdiff_t>((r + 1) * img.width));
      }
    }
    if (spec.min_crop_area < 1.0) {
      const double side = std::sqrt(spec.min_crop_area + (1.0 - spec.min_crop_area) * unit(rng));
      const auto ch = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(side * static_cast<double>(img.height))), 1, img.height);
      const auto cw = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(side * static_cast<double>(img.width))), 1, img.width);
      const auto top = static_cast<std::size_t>(unit(rng) * static_cast<double>(img.height - ch + 1)) % (img.height - ch + 1);
      const auto left = static_cast<std::size_t>(unit(rng) * static_cast<double>(img.width - cw + 1)) % (img.width - cw + 1);
      Image crop(ch, cw);
      for (std::size_t r = 0; r < ch; ++r) {
        for (std::size_t c = 0; c < cw; ++c) crop(r, c) = img(top + r, left + c);
      }
      img = bilinear_resize(crop, image.height, image.width);
    }
    if (spec.noise_sigma > 0.0) {
      for (auto& p : img.pixels) p = std::clamp(p + spec.noise_sigma * gauss(rng), 0.0, 1.0);
    }
    views.push_back(std::move(img));
  }
  return views;
}

// -- schedule -----------------------------------------------------------------------

/// Neighborhood size for round r in 1..R. Linear: max(1, round(r/R k_max)).
/// Doubling: max(1, k_max / 2^(R-r)).
inline std::size_t neighborhood_schedule(std::size_t round, const TrainingConfig& cfg) {
  if (round < 1 || round > cfg.rounds) {
    throw std::out_of_range("round " + std::to_string(round) + " outside 1.." + std::to_string(cfg.rounds));
  }
  if (cfg.schedule == KSchedule::doubling) {
    const std::size_t shift = cfg.rounds - round;
    const std::size_t k = shift >= 63 ? 0 : cfg.k_max >> shift;
    return std::max<std::size_t>(1, k);
  }
  const double k = std::round(static_cast<double>(round) / static_cast<double>(cfg.rounds) *
                              static_cast<double>(cfg.k_max));
  return std::max<std::size_t>(1, static_cast<std::size_t>(k));
}

// -- state ---------------------------------------------------------------------------

struct TrainingSet {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Image> images;
  std::vector<Label> labels;
  std::vector<std::size_t> source_index;  // position in the caller's sample list

  std::size_t size() const { return images.size(); }
  std::size_t input_dim() const { return height * width; }
};

/// Collects equally sized images; with `normals_only` anomalous samples are dropped.
inline TrainingSet make_training_set(const std::vector<Sample>& samples, bool normals_only = false) {
  TrainingSet set;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (normals_only && s.label == Label::anomalous) continue;
    if (set.images.empty()) {
      set.height = s.image.height;
      set.width = s.image.width;
    } else if (s.image.height != set.height || s.image.width != set.width) {
      throw DataError("training images must share one size");
    }
    set.images.push_back(s.image);
    set.labels.push_back(s.label);
    set.source_index.push_back(i);
  }
  if (set.images.empty()) throw DataError("training set is empty");
  return set;
}

struct TrainingState {
  ModelParams params;
  AdamState adam;
  MemoryBank bank;
  std::size_t pretrain_epochs_done = 0;
  std::size_t rounds_done = 0;

  /// Fresh params and random bank; bank flags mirror the anomalous labels.
  static TrainingState initialize(const TrainingConfig& cfg, const TrainingSet& data) {
    cfg.validate();
    Architecture arch{data.input_dim(), cfg.encoder_hidden, cfg.latent_dim, cfg.decoder_hidden};
    auto params = init_params(arch, cfg.init_seed);
    auto tensors = params.tensors();
    auto adam = AdamState::for_params(tensors, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
    auto bank = MemoryBank::random(data.size(), cfg.latent_dim, cfg.bank_seed, cfg.temperature, cfg.update_rate);
    for (std::size_t i = 0; i < data.size(); ++i) bank.set_flag(i, data.labels[i] == Label::anomalous);
    return {std::move(params), std::move(adam), std::move(bank), 0, 0};
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based across both phases
  LossBreakdown loss;     // mean over the epoch's mini-batches
  std::size_t k = 0;      // 0 during pre-training
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<double> neighbor_mass;                // per completed round
  std::vector<std::vector<std::size_t>> touched;    // sorted bank slots updated per epoch
  double wall_seconds = 0.0;
  std::uint64_t init_seed = 0;
  std::uint64_t shuffle_seed = 0;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const TrainingState&, std::size_t round)> on_round_end;
  std::size_t stop_after_round = 0;  // 0 = run all rounds
};

namespace detail {

inline ndgrad::Tensor stack_images(const std::vector<const Image*>& images) {
  const std::size_t dim = images.front()->pixels.size();
  std::vector<double> flat;
  flat.reserve(images.size() * dim);
  for (const auto* img : images) flat.insert(flat.end(), img->pixels.begin(), img->pixels.end());
  return ndgrad::Tensor({images.size(), dim}, std::move(flat));
}

inline LossBreakdown train_batch(const TrainingSet& data, TrainingState& state, const TrainingConfig& cfg,
                                 const std::vector<std::size_t>& members, std::size_t epoch,
                                 std::size_t k) {
  const std::size_t b = members.size();
  const bool latent_on = cfg.lambda > 0.0;
  const bool with_ss = cfg.use_ss && latent_on;
  const bool with_agg = k > 0 && cfg.use_agg && latent_on;

  std::vector<const Image*> rows;
  for (auto i : members) rows.push_back(&data.images[i]);
  std::vector<Image> augmented;
  std::vector<std::vector<std::size_t>> views(b);
  if (with_ss && cfg.augment.views > 0) {
    for (std::size_t p = 0; p < b; ++p) {
      for (auto& v : augment(data.images[members[p]], cfg.augment, mix_seed(cfg.augment_seed, epoch, members[p]))) {
        views[p].push_back(b + augmented.size());
        augmented.push_back(std::move(v));
      }
    }
    for (const auto& v : augmented) rows.push_back(&v);
  } else {
    for (std::size_t p = 0; p < b; ++p) views[p] = {p};
  }

  ndgrad::Graph g;
  auto x_all = stack_images(rows);
  auto z_all = encode(g, state.params, x_all);
  auto z = rows.size() == b ? z_all : ndgrad::slice_rows(g, z_all, 0, b);

  std::optional<ndgrad::Tensor> mse, ss, agg;
  if (cfg.use_mse) {
    auto x = rows.size() == b ? x_all : stack_images({rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(b)});
    mse = mse_loss(g, x, decode(g, state.params, z));
  }
  if (with_ss) ss = sample_specific_loss(g, MiniBatch::with_views(members, views), state.bank, z_all);
  if (with_agg) agg = aggregation_loss(g, MiniBatch::identity(members), state.bank, z, k, cfg.exclude_self);
  auto loss = salad_loss(g, mse, ss, agg, cfg.lambda);

  g.backward(loss.total);
  auto tensors = state.params.tensors();
  adam_step(tensors, state.adam);
  state.params.zero_grad();

  const std::size_t d = state.params.latent_dim();
  for (std::size_t p = 0; p < b; ++p) {
    state.bank.update_slot(members[p], LatentVector::from_unit(z.values().subspan(p * d, d)));
  }
  return loss.breakdown;
}

inline EpochRecord train_epoch(const TrainingSet& data, TrainingState& state, const TrainingConfig& cfg,
                               std::size_t epoch, std::size_t k, TrainReport& report) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(cfg.shuffle_seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);

  LossBreakdown sum{};
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
    const auto l = train_batch(data, state, cfg, members, epoch, k);
    sum.mse += l.mse;
    sum.ss += l.ss;
    sum.agg += l.agg;
    ++batches;
  }
  const double n = static_cast<double>(batches);
  EpochRecord rec{epoch, combine_losses(sum.mse / n, sum.ss / n, sum.agg / n, cfg.lambda), k};
  std::sort(order.begin(), order.end());
  report.touched.push_back(std::move(order));
  report.epochs.push_back(rec);
  return rec;
}

inline void check_trainable(const TrainingSet& data, const TrainingState& state, const TrainingConfig& cfg) {
  cfg.validate();
  if (data.size() < cfg.batch_size) {
    throw DataError("dataset of " + std::to_string(data.size()) + " samples is smaller than the batch size " +
                    std::to_string(cfg.batch_size));
  }
  if (state.bank.size() != data.size()) throw std::invalid_argument("memory bank is not sized to the dataset");
  if (state.params.arch.input_dim != data.input_dim()) throw std::invalid_argument("model input does not match images");
}

}  // namespace detail

/// Mean probability mass that normal training samples put on their k
/// nearest bank slots, using current encoder embeddings.
inline double mean_neighbor_mass(const TrainingSet& data, const TrainingState& state, std::size_t k) {
  std::vector<std::vector<double>> normals;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] != Label::anomalous) normals.push_back(data.images[i].pixels);
  }
  if (normals.empty()) return 0.0;
  const auto z = embed_all(state.params, normals);
  const std::size_t kk = std::min(k, state.bank.size());
  double total = 0.0;
  for (const auto& v : z) total += state.bank.neighbor_mass(v, kk);
  return total / static_cast<double>(z.size());
}

/// Reconstruction plus lambda * sample-specific loss, resuming at
/// state.pretrain_epochs_done.
inline TrainReport pretrain(const TrainingSet& data, TrainingState& state, const TrainingConfig& cfg,
                            const TrainHooks& hooks = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.init_seed = cfg.init_seed;
  report.shuffle_seed = cfg.shuffle_seed;
  if (cfg.pretrain_epochs > state.pretrain_epochs_done) detail::check_trainable(data, state, cfg);
  while (state.pretrain_epochs_done < cfg.pretrain_epochs) {
    const auto rec = detail::train_epoch(data, state, cfg, state.pretrain_epochs_done + 1, 0, report);
    ++state.pretrain_epochs_done;
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// Rounds r = rounds_done+1..R of the full objective with k = neighborhood_schedule(r).
/// Anomalous labels only ever set bank flags; no loss sees them.
inline TrainReport train_progressive(const TrainingSet& data, TrainingState& state, const TrainingConfig& cfg,
                                     const TrainHooks& hooks = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.init_seed = cfg.init_seed;
  report.shuffle_seed = cfg.shuffle_seed;
  if (cfg.rounds > state.rounds_done) detail::check_trainable(data, state, cfg);
  while (state.rounds_done < cfg.rounds) {
    const std::size_t round = state.rounds_done + 1;
    const std::size_t k = std::min(neighborhood_schedule(round, cfg), data.size());
    for (std::size_t e = 0; e < cfg.epochs_per_round; ++e) {
      const std::size_t epoch = cfg.pretrain_epochs + (round - 1) * cfg.epochs_per_round + e + 1;
      const auto rec = detail::train_epoch(data, state, cfg, epoch, k, report);
      if (hooks.on_epoch) hooks.on_epoch(rec);
    }
    state.rounds_done = round;
    report.neighbor_mass.push_back(mean_neighbor_mass(data, state, cfg.k_max));
    if (hooks.on_round_end) hooks.on_round_end(state, round);
    if (hooks.stop_after_round && round >= hooks.stop_after_round) break;
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace salad
