// Dense encoder f: X -> S^{d-1} and decoder g: Z -> X, plus Adam.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "salad/ndgrad.hpp"

namespace salad {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kUnitTolerance = 1e-10;

/// Unit-norm embedding produced by the encoder.
class LatentVector {
 public:
  LatentVector() = default;

  /// Scales `values` onto the unit sphere.
  static LatentVector normalized(std::vector<double> values) {
    double sq = 0.0;
    for (double v : values) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!(norm > ndgrad::kNormEpsilon)) throw std::domain_error("cannot normalize a near-zero vector");
    for (auto& v : values) v /= norm;
    return LatentVector(std::move(values));
  }

  /// Wraps values that must already have unit norm (within `tolerance`).
  static LatentVector from_unit(std::span<const double> values, double tolerance = kUnitTolerance) {
    double sq = 0.0;
    for (double v : values) sq += v * v;
    if (std::abs(std::sqrt(sq) - 1.0) > tolerance) {
      throw std::invalid_argument("latent vector is not unit norm");
    }
    return LatentVector(std::vector<double>(values.begin(), values.end()));
  }

  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  double dot(std::span<const double> other) const {
    if (other.size() != values_.size()) throw std::invalid_argument("latent dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) acc += values_[i] * other[i];
    return acc;
  }

  friend bool operator==(const LatentVector&, const LatentVector&) = default;

 private:
  explicit LatentVector(std::vector<double> values) : values_(std::move(values)) {}
  std::vector<double> values_;
};

/// Layer widths of the encoder/decoder pair.
struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> encoder_hidden;
  std::size_t latent_dim = 32;
  std::vector<std::size_t> decoder_hidden;

  /// Desk-scale default: one hidden layer each way.
  static Architecture toy(std::size_t input_dim, std::size_t latent_dim = 32) {
    return Architecture{input_dim, {128}, latent_dim, {128}};
  }

  void validate() const {
    if (input_dim == 0 || latent_dim == 0) throw std::invalid_argument("architecture dims must be positive");
    for (auto w : encoder_hidden) {
      if (w == 0) throw std::invalid_argument("encoder layer width must be positive");
    }
    for (auto w : decoder_hidden) {
      if (w == 0) throw std::invalid_argument("decoder layer width must be positive");
    }
  }

  std::vector<std::size_t> encoder_widths() const {
    std::vector<std::size_t> w{input_dim};
    w.insert(w.end(), encoder_hidden.begin(), encoder_hidden.end());
    w.push_back(latent_dim);
    return w;
  }

  std::vector<std::size_t> decoder_widths() const {
    std::vector<std::size_t> w{latent_dim};
    w.insert(w.end(), decoder_hidden.begin(), decoder_hidden.end());
    w.push_back(input_dim);
    return w;
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct DenseLayer {
  ndgrad::Tensor weight;  // [fan_in x fan_out]
  ndgrad::Tensor bias;    // [fan_out]
};

struct ModelParams {
  Architecture arch;
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> decoder;

  std::size_t latent_dim() const { return arch.latent_dim; }

  std::vector<ndgrad::Tensor> encoder_tensors() const { return flatten(encoder); }
  std::vector<ndgrad::Tensor> decoder_tensors() const { return flatten(decoder); }

  /// Encoder tensors followed by decoder tensors; handles share storage.
  std::vector<ndgrad::Tensor> tensors() const {
    auto all = encoder_tensors();
    auto dec = decoder_tensors();
    all.insert(all.end(), dec.begin(), dec.end());
    return all;
  }

  ModelParams clone() const {
    ModelParams copy{arch, {}, {}};
    for (const auto& l : encoder) copy.encoder.push_back({l.weight.clone(), l.bias.clone()});
    for (const auto& l : decoder) copy.decoder.push_back({l.weight.clone(), l.bias.clone()});
    return copy;
  }

  void zero_grad() const {
    for (auto t : tensors()) t.zero_grad();
  }

 private:
  static std::vector<ndgrad::Tensor> flatten(const std::vector<DenseLayer>& layers) {
    std::vector<ndgrad::Tensor> out;
    for (const auto& l : layers) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }
};

/// Glorot-uniform weights, zero biases, reproducible from `seed`.
inline ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  auto make_stack = [&rng](const std::vector<std::size_t>& widths) {
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::size_t fan_in = widths[l], fan_out = widths[l + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      std::vector<double> w(fan_in * fan_out);
      for (auto& v : w) v = dist(rng);
      layers.push_back({ndgrad::Tensor({fan_in, fan_out}, std::move(w), true),
                        ndgrad::Tensor::zeros({fan_out}, true)});
    }
    return layers;
  };
  ModelParams params{arch, {}, {}};
  params.encoder = make_stack(arch.encoder_widths());
  params.decoder = make_stack(arch.decoder_widths());
  return params;
}

/// Rows of x [B x input_dim] to unit latents [B x d].
inline ndgrad::Tensor encode(ndgrad::Graph& g, const ModelParams& params, const ndgrad::Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != params.arch.input_dim) {
    throw std::invalid_argument("encode: expected [B x " + std::to_string(params.arch.input_dim) +
                                "] input, got " + ndgrad::shape_string(x.shape()));
  }
  ndgrad::Tensor h = x;
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    h = ndgrad::add_bias(g, ndgrad::matmul(g, h, params.encoder[l].weight), params.encoder[l].bias);
    if (l + 1 < params.encoder.size()) h = ndgrad::leaky_relu(g, h, kLeakySlope);
  }
  return ndgrad::l2_normalize(g, h);
}

/// Latents [B x d] to reconstructions [B x input_dim] in (0, 1).
inline ndgrad::Tensor decode(ndgrad::Graph& g, const ModelParams& params, const ndgrad::Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != params.arch.latent_dim) {
    throw std::invalid_argument("decode: expected [B x " + std::to_string(params.arch.latent_dim) +
                                "] latents, got " + ndgrad::shape_string(z.shape()));
  }
  ndgrad::Tensor h = z;
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    h = ndgrad::add_bias(g, ndgrad::matmul(g, h, params.decoder[l].weight), params.decoder[l].bias);
    h = l + 1 < params.decoder.size() ? ndgrad::leaky_relu(g, h, kLeakySlope) : ndgrad::sigmoid(g, h);
  }
  return h;
}

inline LatentVector encode(const ModelParams& params, std::span<const double> image) {
  ndgrad::Graph g(ndgrad::Graph::Mode::no_grad);
  auto z = encode(g, params, ndgrad::Tensor({1, image.size()}, {image.begin(), image.end()}));
  return LatentVector::from_unit(z.values());
}

inline std::vector<double> decode(const ModelParams& params, const LatentVector& z) {
  ndgrad::Graph g(ndgrad::Graph::Mode::no_grad);
  auto x = decode(g, params, ndgrad::Tensor({1, z.size()}, {z.values().begin(), z.values().end()}));
  return {x.values().begin(), x.values().end()};
}

/// Encodes many flattened images without recording gradients.
inline std::vector<LatentVector> embed_all(const ModelParams& params,
                                           std::span<const std::vector<double>> images,
                                           std::size_t chunk = 64) {
  std::vector<LatentVector> out;
  out.reserve(images.size());
  const std::size_t dim = params.arch.input_dim;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t stop = std::min(images.size(), start + chunk);
    std::vector<double> flat;
    flat.reserve((stop - start) * dim);
    for (std::size_t i = start; i < stop; ++i) {
      if (images[i].size() != dim) throw std::invalid_argument("embed_all: image size mismatch");
      flat.insert(flat.end(), images[i].begin(), images[i].end());
    }
    ndgrad::Graph g(ndgrad::Graph::Mode::no_grad);
    auto z = encode(g, params, ndgrad::Tensor({stop - start, dim}, std::move(flat)));
    const std::size_t d = params.arch.latent_dim;
    for (std::size_t r = 0; r < stop - start; ++r) {
      out.push_back(LatentVector::from_unit(z.values().subspan(r * d, d)));
    }
  }
  return out;
}

// -- Adam -------------------------------------------------------------------------

struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static AdamState for_params(std::span<const ndgrad::Tensor> params, double lr, double beta1,
                              double beta2, double epsilon = 1e-8) {
    AdamState s{lr, beta1, beta2, epsilon, 0, {}, {}};
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.size(), 0.0);
      s.second_moment.emplace_back(p.size(), 0.0);
    }
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update using each tensor's accumulated gradient
/// (a tensor without a gradient contributes a zero gradient).
inline void adam_step(std::span<ndgrad::Tensor> params, AdamState& state) {
  if (params.size() != state.first_moment.size() || params.size() != state.second_moment.size()) {
    throw std::invalid_argument("adam_step: parameter count does not match optimizer state");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p].size() != state.first_moment[p].size() ||
        params[p].size() != state.second_moment[p].size()) {
      throw std::invalid_argument("adam_step: moment shape mismatch for parameter " + std::to_string(p));
    }
    if (params[p].has_grad() && params[p].grad().size() != params[p].size()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for parameter " + std::to_string(p));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_values();
    auto grad = params[p].grad();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = grad.empty() ? 0.0 : grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      values[i] -= state.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.epsilon);
    }
    ndgrad::detail::check_finite(values, "adam_step");
  }
}

}  // namespace salad
