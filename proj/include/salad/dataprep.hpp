// Input pipeline: hysteresis segmentation, aspect-preserving resize-and-pad,
// patient-grouped splitting, and a synthetic grouped dataset generator.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace salad {

/// Raised for malformed or insufficient input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Grayscale image, row-major, pixels in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}
  Image(std::size_t h, std::size_t w, std::vector<double> px) : height(h), width(w), pixels(std::move(px)) {
    if (pixels.size() != h * w) throw std::invalid_argument("image pixel count does not match its shape");
  }

  double& operator()(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  double operator()(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  bool empty() const { return height == 0 || width == 0; }

  friend bool operator==(const Image&, const Image&) = default;
};

enum class Label { normal, anomalous, unknown };

inline const char* to_string(Label l) {
  switch (l) {
    case Label::normal: return "normal";
    case Label::anomalous: return "anomalous";
    default: return "unknown";
  }
}

inline Label parse_label(const std::string& s) {
  if (s == "normal" || s == "0") return Label::normal;
  if (s == "anomalous" || s == "abnormal" || s == "1") return Label::anomalous;
  if (s == "unknown" || s.empty()) return Label::unknown;
  throw DataError("unrecognized label '" + s + "'");
}

/// (patient id, body part); the unit that never straddles two splits.
struct GroupId {
  std::string patient;
  std::string body_part;

  auto operator<=>(const GroupId&) const = default;
};

struct Sample {
  Image image;
  Label label = Label::unknown;
  GroupId group;
};

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<bool> bits;

  bool operator()(std::size_t r, std::size_t c) const { return bits[r * width + c]; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true)); }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// -- segmentation ------------------------------------------------------------------

struct SegmentOptions {
  bool eight_connected = true;
  bool keep_largest = true;
};

namespace detail {

// labels connected components of `member`; returns per-pixel component id (-1 outside)
inline std::vector<int> label_components(std::size_t h, std::size_t w, const std::vector<bool>& member,
                                         bool eight, int& count) {
  std::vector<int> comp(h * w, -1);
  std::vector<std::size_t> stack;
  count = 0;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!member[start] || comp[start] >= 0) continue;
    comp[start] = count;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const auto r = static_cast<long>(p / w), c = static_cast<long>(p % w);
      for (long dr = -1; dr <= 1; ++dr) {
        for (long dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          if (!eight && dr != 0 && dc != 0) continue;
          const long nr = r + dr, nc = c + dc;
          if (nr < 0 || nc < 0 || nr >= static_cast<long>(h) || nc >= static_cast<long>(w)) continue;
          const auto q = static_cast<std::size_t>(nr) * w + static_cast<std::size_t>(nc);
          if (member[q] && comp[q] < 0) {
            comp[q] = count;
            stack.push_back(q);
          }
        }
      }
    }
    ++count;
  }
  return comp;
}

}  // namespace detail

/// Pixels >= hi seed the mask; it grows through connected pixels >= lo.
/// By default only the largest resulting component is kept.
inline BinaryMask hysteresis_segment(const Image& image, double lo, double hi, SegmentOptions opts = {}) {
  if (!(0.0 <= lo && lo < hi && hi <= 1.0)) throw std::invalid_argument("hysteresis needs 0 <= lo < hi <= 1");
  const std::size_t h = image.height, w = image.width;
  std::vector<bool> candidate(h * w);
  for (std::size_t i = 0; i < h * w; ++i) candidate[i] = image.pixels[i] >= lo;
  int count = 0;
  const auto comp = detail::label_components(h, w, candidate, opts.eight_connected, count);

  std::vector<bool> seeded(static_cast<std::size_t>(count), false);
  std::vector<std::size_t> area(static_cast<std::size_t>(count), 0);
  for (std::size_t i = 0; i < h * w; ++i) {
    if (comp[i] < 0) continue;
    area[static_cast<std::size_t>(comp[i])]++;
    if (image.pixels[i] >= hi) seeded[static_cast<std::size_t>(comp[i])] = true;
  }
  int keep = -1;
  if (opts.keep_largest) {
    std::size_t best = 0;
    for (int c = 0; c < count; ++c) {
      if (seeded[static_cast<std::size_t>(c)] && area[static_cast<std::size_t>(c)] > best) {
        best = area[static_cast<std::size_t>(c)];
        keep = c;
      }
    }
  }
  BinaryMask mask{h, w, std::vector<bool>(h * w, false)};
  for (std::size_t i = 0; i < h * w; ++i) {
    if (comp[i] < 0 || !seeded[static_cast<std::size_t>(comp[i])]) continue;
    mask.bits[i] = !opts.keep_largest || comp[i] == keep;
  }
  return mask;
}

/// Zeroes every pixel outside the mask.
inline Image apply_mask(const Image& image, const BinaryMask& mask) {
  if (mask.height != image.height || mask.width != image.width) throw std::invalid_argument("mask shape mismatch");
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    if (!mask.bits[i]) out.pixels[i] = 0.0;
  }
  return out;
}

// -- geometry ----------------------------------------------------------------------

/// Bilinear resampling with pixel-center alignment and edge clamping.
inline Image bilinear_resize(const Image& src, std::size_t out_h, std::size_t out_w) {
  if (src.empty() || out_h == 0 || out_w == 0) throw std::invalid_argument("bilinear_resize: zero-size image");
  Image out(out_h, out_w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    const double fy = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(src.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double fx = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(src.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = (1.0 - wx) * src(y0, x0) + wx * src(y0, x1);
      const double bottom = (1.0 - wx) * src(y1, x0) + wx * src(y1, x1);
      out(r, c) = (1.0 - wy) * top + wy * bottom;
    }
  }
  return out;
}

/// Placement of resized content inside the padded square.
struct PadLayout {
  std::size_t content_h, content_w, top, left;
};

inline PadLayout resize_pad_layout(std::size_t h, std::size_t w, std::size_t target) {
  if (h == 0 || w == 0) throw std::invalid_argument("resize_pad: zero-size image");
  if (target == 0) throw std::invalid_argument("resize_pad: target must be at least 1");
  const std::size_t major = std::max(h, w);
  auto scaled = [&](std::size_t v) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                        static_cast<double>(v) * static_cast<double>(target) /
                                        static_cast<double>(major))));
  };
  const std::size_t ch = h == major ? target : scaled(h);
  const std::size_t cw = w == major ? target : scaled(w);
  return {ch, cw, (target - ch) / 2, (target - cw) / 2};
}

/// Resizes so the major axis equals `target`, then zero-pads the minor axis
/// symmetrically to a target x target square.
inline Image resize_pad(const Image& image, std::size_t target) {
  const auto layout = resize_pad_layout(image.height, image.width, target);
  const Image content = bilinear_resize(image, layout.content_h, layout.content_w);
  Image out(target, target, 0.0);
  for (std::size_t r = 0; r < layout.content_h; ++r) {
    for (std::size_t c = 0; c < layout.content_w; ++c) out(r + layout.top, c + layout.left) = content(r, c);
  }
  return out;
}

// -- grouped split -----------------------------------------------------------------

struct SplitRatios {
  double train_groups = 0.5;      // share of all (patient, body part) groups
  double train_normal = 0.95;     // image-level share of normals in train
  double train_anomalous = 0.05;  // image-level share of anomalies in train
};

enum class GroupCategory { normal, abnormal, mixed };

struct GroupedSplit {
  std::vector<GroupId> train, validation, test;
  std::vector<std::size_t> train_samples, validation_samples, test_samples;
  double achieved_train_anomalous = 0.0;
};

namespace detail {

struct GroupInfo {
  GroupId id;
  std::vector<std::size_t> members;
  std::size_t anomalous = 0;

  GroupCategory category() const {
    if (anomalous == 0) return GroupCategory::normal;
    if (anomalous == members.size()) return GroupCategory::abnormal;
    return GroupCategory::mixed;
  }
};

}  // namespace detail

/// Train receives `train_groups` of all groups, filled with abnormal groups
/// until the anomalous image share is closest to `train_anomalous` and then
/// with normal groups. Everything left is dealt per category (normal,
/// abnormal, mixed) alternately to validation and test, each category
/// starting with whichever split currently holds fewer groups
/// (validation on ties). Deterministic for a given seed.
inline GroupedSplit split_grouped(const std::vector<Sample>& samples, std::uint64_t seed,
                                  const SplitRatios& ratios = {}) {
  if (!(ratios.train_groups > 0.0 && ratios.train_groups < 1.0)) {
    throw std::invalid_argument("train group fraction must lie in (0, 1)");
  }
  if (!(ratios.train_anomalous >= 0.0 && ratios.train_anomalous < 1.0)) {
    throw std::invalid_argument("train anomalous fraction must lie in [0, 1)");
  }
  if (std::abs(ratios.train_normal + ratios.train_anomalous - 1.0) > 1e-9) {
    throw std::invalid_argument("train normal and anomalous fractions must sum to 1");
  }
  std::map<GroupId, std::size_t> index;
  std::vector<detail::GroupInfo> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.label == Label::unknown) throw DataError("grouped split needs labeled samples");
    if (s.group.patient.empty()) throw DataError("sample " + std::to_string(i) + " has no group id");
    auto [it, fresh] = index.emplace(s.group, groups.size());
    if (fresh) groups.push_back({s.group, {}, 0});
    auto& g = groups[it->second];
    g.members.push_back(i);
    if (s.label == Label::anomalous) ++g.anomalous;
  }
  if (groups.size() < 3) throw DataError("grouped split needs at least three groups");

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> by_cat[3];
  for (std::size_t g = 0; g < groups.size(); ++g) by_cat[static_cast<int>(groups[g].category())].push_back(g);
  for (auto& list : by_cat) std::shuffle(list.begin(), list.end(), rng);
  auto& normals = by_cat[0];
  auto& abnormals = by_cat[1];

  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train_groups * static_cast<double>(groups.size())));
  const double mean_group = static_cast<double>(samples.size()) / static_cast<double>(groups.size());
  const double target_anomalous = ratios.train_anomalous * static_cast<double>(n_train) * mean_group;

  GroupedSplit split;
  std::vector<std::size_t> train_groups;
  double anomalous_images = 0.0;
  std::size_t next_abnormal = 0;
  while (next_abnormal < abnormals.size() && train_groups.size() < n_train) {
    const double size = static_cast<double>(groups[abnormals[next_abnormal]].members.size());
    if (std::abs(anomalous_images + size - target_anomalous) >= std::abs(anomalous_images - target_anomalous)) break;
    anomalous_images += size;
    train_groups.push_back(abnormals[next_abnormal++]);
  }
  if (train_groups.empty() && target_anomalous >= 0.5 * mean_group && abnormals.empty()) {
    throw DataError("grouped split: no abnormal groups available for the requested train anomaly share");
  }
  const std::size_t normals_needed = n_train - train_groups.size();
  if (normals.size() < normals_needed) {
    throw DataError("grouped split: need " + std::to_string(normals_needed) + " normal groups for train, have " +
                    std::to_string(normals.size()) + " (achieved train groups " +
                    std::to_string(train_groups.size() + normals.size()) + "/" + std::to_string(n_train) + ")");
  }
  train_groups.insert(train_groups.end(), normals.begin(), normals.begin() + static_cast<std::ptrdiff_t>(normals_needed));
  normals.erase(normals.begin(), normals.begin() + static_cast<std::ptrdiff_t>(normals_needed));
  abnormals.erase(abnormals.begin(), abnormals.begin() + static_cast<std::ptrdiff_t>(next_abnormal));

  std::size_t train_images = 0;
  for (auto g : train_groups) {
    split.train.push_back(groups[g].id);
    train_images += groups[g].members.size();
    split.train_samples.insert(split.train_samples.end(), groups[g].members.begin(), groups[g].members.end());
  }
  split.achieved_train_anomalous = train_images ? anomalous_images / static_cast<double>(train_images) : 0.0;

  for (const auto& list : by_cat) {
    bool to_val = split.validation.size() <= split.test.size();
    for (auto g : list) {
      auto& ids = to_val ? split.validation : split.test;
      auto& members = to_val ? split.validation_samples : split.test_samples;
      ids.push_back(groups[g].id);
      members.insert(members.end(), groups[g].members.begin(), groups[g].members.end());
      to_val = !to_val;
    }
  }
  std::sort(split.train_samples.begin(), split.train_samples.end());
  std::sort(split.validation_samples.begin(), split.validation_samples.end());
  std::sort(split.test_samples.begin(), split.test_samples.end());
  return split;
}

// -- synthetic data ------------------------------------------------------------------

struct SynthConfig {
  std::size_t count = 768;
  std::size_t size = 32;
  double anomaly_fraction = 0.15;
  std::size_t images_per_patient = 4;
  std::size_t body_parts = 2;
  double patient_jitter = 1.0;  // px shift of a patient's blobs from the body-part template
  double image_jitter = 0.5;    // px shift per image
  double noise_sigma = 0.03;
  double sigma_min = 2.5;       // blob standard deviation range, px
  double sigma_max = 5.0;
  double defect_intensity = 0.9;
  double mirror_prob = 0.5;     // per-image left/right flip of the layout
};

namespace detail {

inline void add_gaussian(Image& img, double cy, double cx, double sigma, double amp) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t c = 0; c < img.width; ++c) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
      img(r, c) += amp * std::exp(-(dy * dy + dx * dx) * inv);
    }
  }
}

// anti-aliased bar or ring added to the image
inline void add_defect(Image& img, std::mt19937_64& rng, double intensity) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double n = static_cast<double>(img.height);
  const double cy = n * (0.25 + 0.5 * unit(rng)), cx = n * (0.25 + 0.5 * unit(rng));
  const bool bar = unit(rng) < 0.5;
  const double angle = std::numbers::pi * unit(rng);
  const double half_len = n * (0.12 + 0.1 * unit(rng));
  const double radius = n * (0.09 + 0.07 * unit(rng));
  const double width = 0.9;
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t c = 0; c < img.width; ++c) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
      double dist;
      if (bar) {
        const double along = dx * std::cos(angle) + dy * std::sin(angle);
        const double across = -dx * std::sin(angle) + dy * std::cos(angle);
        const double over = std::max(0.0, std::abs(along) - half_len);
        dist = std::hypot(over, across);
      } else {
        dist = std::abs(std::hypot(dx, dy) - radius);
      }
      img(r, c) += intensity * std::clamp(1.5 - dist / width, 0.0, 1.0);
    }
  }
}

}  // namespace detail

/// Grouped synthetic radiograph stand-ins.
///
/// Each body part has a template of three Gaussian blobs; each pseudo-patient
/// perturbs the template and each image perturbs the patient's layout, plus
/// pixel noise. Anomalies add a bright bar or ring at a random pose. Groups
/// are normal, abnormal (all images anomalous) or mixed (half anomalous) with
/// probabilities chosen so the expected image-level anomaly share equals
/// `anomaly_fraction`.
inline std::vector<Sample> synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.size < 4) throw std::invalid_argument("synthetic images must be at least 4 px");
  if (cfg.images_per_patient == 0 || cfg.body_parts == 0) throw std::invalid_argument("synthetic counts must be positive");
  if (cfg.anomaly_fraction < 0.0 || cfg.anomaly_fraction > 1.0) throw std::invalid_argument("anomaly fraction must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double n = static_cast<double>(cfg.size);

  struct Blob { double cy, cx, sigma, amp; };
  std::vector<std::vector<Blob>> templates(cfg.body_parts);
  for (auto& t : templates) {
    for (int b = 0; b < 3; ++b) {
      t.push_back({n * (0.25 + 0.5 * unit(rng)), n * (0.25 + 0.5 * unit(rng)),
                   cfg.sigma_min + (cfg.sigma_max - cfg.sigma_min) * unit(rng), 0.4 + 0.4 * unit(rng)});
    }
  }

  double p_abnormal = cfg.anomaly_fraction / 2.0, p_mixed = cfg.anomaly_fraction;
  if (p_abnormal + p_mixed > 1.0) {
    p_mixed = 2.0 * (1.0 - cfg.anomaly_fraction);
    p_abnormal = 2.0 * cfg.anomaly_fraction - 1.0;
  }

  std::vector<Sample> out;
  out.reserve(cfg.count);
  for (std::size_t patient = 0; out.size() < cfg.count; ++patient) {
    const std::size_t part = static_cast<std::size_t>(unit(rng) * static_cast<double>(cfg.body_parts)) % cfg.body_parts;
    std::vector<Blob> layout = templates[part];
    for (auto& b : layout) {
      b.cy += cfg.patient_jitter * gauss(rng);
      b.cx += cfg.patient_jitter * gauss(rng);
      b.sigma *= 0.85 + 0.3 * unit(rng);
      b.amp *= 0.85 + 0.3 * unit(rng);
    }
    const double u = unit(rng);
    const auto category = u < p_abnormal ? GroupCategory::abnormal
                          : u < p_abnormal + p_mixed ? GroupCategory::mixed : GroupCategory::normal;
    const std::size_t images = std::min(cfg.images_per_patient, cfg.count - out.size());
    char pid[32];
    std::snprintf(pid, sizeof pid, "P%05zu", patient);
    for (std::size_t k = 0; k < images; ++k) {
      bool anomalous = category == GroupCategory::abnormal ||
                       (category == GroupCategory::mixed && (images < 2 ? true : k < (images + 1) / 2));
      Image img(cfg.size, cfg.size, 0.0);
      const bool mirror = unit(rng) < cfg.mirror_prob;
      for (const auto& b : layout) {
        const double cx = mirror ? n - 1.0 - b.cx : b.cx;
        detail::add_gaussian(img, b.cy + cfg.image_jitter * gauss(rng), cx + cfg.image_jitter * gauss(rng),
                             b.sigma, b.amp * (0.9 + 0.2 * unit(rng)));
      }
      if (anomalous) detail::add_defect(img, rng, cfg.defect_intensity);
      for (auto& p : img.pixels) p = std::clamp(p + cfg.noise_sigma * gauss(rng), 0.0, 1.0);
      out.push_back({std::move(img), anomalous ? Label::anomalous : Label::normal,
                     {pid, "part" + std::to_string(part)}});
    }
  }
  return out;
}

/// Fraction of pixels at or above `threshold`; the naive difficulty baseline.
inline double pixel_threshold_score(const Image& image, double threshold = 0.5) {
  std::size_t hits = 0;
  for (double p : image.pixels) hits += p >= threshold ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(image.pixels.size());
}

}  // namespace salad
