// Training hyperparameters, presets, and the flat key=value config format.
#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace salad {

enum class KSchedule { linear, doubling };

struct AugmentSpec {
  std::size_t views = 2;  // 0 disables augmentation: the image is its own view
  double flip_prob = 0.5;
  double min_crop_area = 0.8;  // 1.0 disables cropping
  double noise_sigma = 0.02;

  static AugmentSpec identity() { return {1, 0.0, 1.0, 0.0}; }
  static AugmentSpec disabled() { return {0, 0.0, 1.0, 0.0}; }

  bool is_identity() const { return flip_prob == 0.0 && min_crop_area >= 1.0 && noise_sigma == 0.0; }

  friend bool operator==(const AugmentSpec&, const AugmentSpec&) = default;
};

struct TrainingConfig {
  std::string preset = "desk";

  double temperature = 0.1;
  double lambda = 0.25;
  double update_rate = 0.5;
  std::size_t k_score = 100;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  std::size_t pretrain_epochs = 20;
  std::size_t rounds = 5;
  std::size_t epochs_per_round = 10;
  std::size_t k_max = 100;
  KSchedule schedule = KSchedule::linear;

  std::size_t latent_dim = 32;
  std::vector<std::size_t> encoder_hidden{128};
  std::vector<std::size_t> decoder_hidden{128};

  AugmentSpec augment;

  // term switches used by the ablations
  bool use_mse = true;
  bool use_ss = true;
  bool use_agg = true;
  bool exclude_self = false;
  bool normals_only = false;  // drop anomalous-labeled samples before training

  std::uint64_t init_seed = 1;
  std::uint64_t bank_seed = 2;
  std::uint64_t shuffle_seed = 3;
  std::uint64_t augment_seed = 4;

  /// Hyperparameters as reported for the full-size experiments.
  static TrainingConfig paper() {
    TrainingConfig c;
    c.preset = "paper";
    c.pretrain_epochs = 50;
    c.rounds = 10;
    c.epochs_per_round = 50;
    c.latent_dim = 200;
    return c;
  }

  static TrainingConfig desk() { return TrainingConfig{}; }

  static TrainingConfig from_preset(const std::string& name) {
    if (name == "paper") return paper();
    if (name == "desk") return desk();
    throw std::invalid_argument("unknown preset '" + name + "' (expected paper or desk)");
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (!(temperature > 0.0 && temperature <= 1.0)) fail("tau must lie in (0, 1]");
    if (!(update_rate >= 0.0 && update_rate <= 1.0)) fail("t must lie in [0, 1]");
    if (!(lambda >= 0.0)) fail("lambda must be non-negative");
    if (k_score == 0 || batch_size == 0 || k_max == 0 || latent_dim == 0) fail("counts must be positive");
    if (!(learning_rate > 0.0)) fail("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) fail("adam epsilon must be positive");
    if (augment.flip_prob < 0.0 || augment.flip_prob > 1.0) fail("flip probability must lie in [0, 1]");
    if (augment.min_crop_area <= 0.0 || augment.min_crop_area > 1.0) fail("crop area must lie in (0, 1]");
    if (augment.noise_sigma < 0.0) fail("noise sigma must be non-negative");
    if (!use_mse && !use_ss && !use_agg) fail("at least one loss term must be enabled");
  }

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoull(item));
  }
  return out;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("not a boolean: '" + s + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Ordered key -> value rendering; the order is the documented key order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const TrainingConfig& c) {
  using detail::format_double;
  return {
      {"preset", c.preset},
      {"tau", format_double(c.temperature)},
      {"lambda", format_double(c.lambda)},
      {"update_rate", format_double(c.update_rate)},
      {"k_score", std::to_string(c.k_score)},
      {"batch_size", std::to_string(c.batch_size)},
      {"learning_rate", format_double(c.learning_rate)},
      {"beta1", format_double(c.beta1)},
      {"beta2", format_double(c.beta2)},
      {"adam_epsilon", format_double(c.adam_epsilon)},
      {"pretrain_epochs", std::to_string(c.pretrain_epochs)},
      {"rounds", std::to_string(c.rounds)},
      {"epochs_per_round", std::to_string(c.epochs_per_round)},
      {"k_max", std::to_string(c.k_max)},
      {"k_schedule", c.schedule == KSchedule::linear ? "linear" : "doubling"},
      {"latent_dim", std::to_string(c.latent_dim)},
      {"encoder_hidden", detail::join_sizes(c.encoder_hidden)},
      {"decoder_hidden", detail::join_sizes(c.decoder_hidden)},
      {"aug_views", std::to_string(c.augment.views)},
      {"aug_flip_prob", format_double(c.augment.flip_prob)},
      {"aug_min_crop_area", format_double(c.augment.min_crop_area)},
      {"aug_noise_sigma", format_double(c.augment.noise_sigma)},
      {"use_mse", c.use_mse ? "true" : "false"},
      {"use_ss", c.use_ss ? "true" : "false"},
      {"use_agg", c.use_agg ? "true" : "false"},
      {"exclude_self", c.exclude_self ? "true" : "false"},
      {"normals_only", c.normals_only ? "true" : "false"},
      {"init_seed", std::to_string(c.init_seed)},
      {"bank_seed", std::to_string(c.bank_seed)},
      {"shuffle_seed", std::to_string(c.shuffle_seed)},
      {"augment_seed", std::to_string(c.augment_seed)},
  };
}

/// Applies one key=value pair; unknown keys are an error.
inline void apply_config_value(TrainingConfig& c, const std::string& key, const std::string& value) {
  const auto d = [&] { return std::stod(value); };
  const auto u = [&] { return static_cast<std::size_t>(std::stoull(value)); };
  const auto seed = [&] { return static_cast<std::uint64_t>(std::stoull(value)); };
  if (key == "preset") c.preset = value;
  else if (key == "tau") c.temperature = d();
  else if (key == "lambda") c.lambda = d();
  else if (key == "update_rate") c.update_rate = d();
  else if (key == "k_score") c.k_score = u();
  else if (key == "batch_size") c.batch_size = u();
  else if (key == "learning_rate") c.learning_rate = d();
  else if (key == "beta1") c.beta1 = d();
  else if (key == "beta2") c.beta2 = d();
  else if (key == "adam_epsilon") c.adam_epsilon = d();
  else if (key == "pretrain_epochs") c.pretrain_epochs = u();
  else if (key == "rounds") c.rounds = u();
  else if (key == "epochs_per_round") c.epochs_per_round = u();
  else if (key == "k_max") c.k_max = u();
  else if (key == "k_schedule") {
    if (value == "linear") c.schedule = KSchedule::linear;
    else if (value == "doubling") c.schedule = KSchedule::doubling;
    else throw std::invalid_argument("k_schedule must be linear or doubling");
  }
  else if (key == "latent_dim") c.latent_dim = u();
  else if (key == "encoder_hidden") c.encoder_hidden = detail::parse_sizes(value);
  else if (key == "decoder_hidden") c.decoder_hidden = detail::parse_sizes(value);
  else if (key == "aug_views") c.augment.views = u();
  else if (key == "aug_flip_prob") c.augment.flip_prob = d();
  else if (key == "aug_min_crop_area") c.augment.min_crop_area = d();
  else if (key == "aug_noise_sigma") c.augment.noise_sigma = d();
  else if (key == "use_mse") c.use_mse = detail::parse_bool(value);
  else if (key == "use_ss") c.use_ss = detail::parse_bool(value);
  else if (key == "use_agg") c.use_agg = detail::parse_bool(value);
  else if (key == "exclude_self") c.exclude_self = detail::parse_bool(value);
  else if (key == "normals_only") c.normals_only = detail::parse_bool(value);
  else if (key == "init_seed") c.init_seed = seed();
  else if (key == "bank_seed") c.bank_seed = seed();
  else if (key == "shuffle_seed") c.shuffle_seed = seed();
  else if (key == "augment_seed") c.augment_seed = seed();
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

inline std::string to_text(const TrainingConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_entries(c)) out += k + " = " + v + "\n";
  return out;
}

/// Parses `key = value` lines on top of `base`. '#' starts a comment.
/// A `preset` line resets every other key to that preset first, so it
/// should come first.
inline TrainingConfig parse_config(const std::string& text, TrainingConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    try {
      if (key == "preset") {
        base = TrainingConfig::from_preset(value);
      } else {
        apply_config_value(base, key, value);
      }
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::out_of_range&) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": value out of range");
    }
  }
  return base;
}

}  // namespace salad
