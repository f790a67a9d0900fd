// Versioned binary containers for training state and memory banks.
//
// All integers are unsigned 64-bit little-endian, all reals IEEE-754
// binary64 little-endian.
//
// Bank snapshot:
//   "SALADBNK" | u8 version=1 | N | d | t | tau | N*d slot reals (row-major)
//   | ceil(N/8) flag bytes, flag i at bit (i % 8) of byte i / 8
//
// Checkpoint:
//   "SALADCKP" | u8 version=1
//   | input_dim | n_enc | n_enc widths | latent_dim | n_dec | n_dec widths
//   | per parameter tensor (encoder w,b..., decoder w,b...): count | reals
//   | adam: lr | beta1 | beta2 | eps | step | per tensor first moments | per tensor second moments
//   | config: byte length | key = value text
//   | pretrain_epochs_done | rounds_done
//   | bank: byte length | bank snapshot
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "salad/config.hpp"
#include "salad/dataprep.hpp"
#include "salad/membank.hpp"
#include "salad/model.hpp"
#include "salad/trainer.hpp"

namespace salad {

inline constexpr std::string_view kBankMagic = "SALADBNK";
inline constexpr std::string_view kCheckpointMagic = "SALADCKP";
inline constexpr std::uint8_t kFormatVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(std::string_view bytes) { out_.append(bytes); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void reals(std::span<const double> values) {
    for (double v : values) f64(v);
  }
  void blob(std::string_view bytes) {
    u64(bytes.size());
    raw(bytes);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : in_(bytes) {}

  std::string_view raw(std::size_t n) {
    need(n);
    auto v = in_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(raw(1)[0]); }
  std::uint64_t u64() {
    auto b = raw(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[static_cast<std::size_t>(i)])) << (8 * i);
    return v;
  }
  std::size_t size() {
    const auto v = u64();
    if (v > in_.size()) throw DataError("corrupt container: implausible length");
    return static_cast<std::size_t>(v);
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> reals(std::size_t n) {
    if (n > remaining() / 8) throw DataError("corrupt container: truncated array");
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::string_view blob() { return raw(size()); }
  std::size_t remaining() const { return in_.size() - pos_; }

  void expect_header(std::string_view magic, const char* what) {
    if (remaining() < magic.size() + 1 || in_.substr(pos_, magic.size()) != magic) {
      throw DataError(std::string("not a ") + what + " (bad magic)");
    }
    pos_ += magic.size();
    const auto version = u8();
    if (version != kFormatVersion) {
      throw DataError(std::string(what) + " version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kFormatVersion) + ")");
    }
  }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw DataError("corrupt container: unexpected end of data");
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_bank(const MemoryBank& bank) {
  detail::ByteWriter w;
  w.raw(kBankMagic);
  w.u8(kFormatVersion);
  w.u64(bank.size());
  w.u64(bank.dim());
  w.f64(bank.update_rate());
  w.f64(bank.temperature());
  w.reals(bank.raw());
  std::string bits((bank.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (bank.flagged(i)) bits[i / 8] = static_cast<char>(bits[i / 8] | (1 << (i % 8)));
  }
  w.raw(bits);
  return w.take();
}

inline MemoryBank decode_bank(std::string_view bytes) {
  detail::ByteReader r(bytes);
  r.expect_header(kBankMagic, "bank snapshot");
  const auto n = r.size(), d = r.size();
  if (n == 0 || d == 0) throw DataError("bank snapshot has zero size");
  const double t = r.f64(), tau = r.f64();
  auto flat = r.reals(n * d);
  auto bits = r.raw((n + 7) / 8);
  std::vector<std::vector<double>> slots(n);
  std::vector<bool> flags(n);
  for (std::size_t i = 0; i < n; ++i) {
    slots[i].assign(flat.begin() + static_cast<std::ptrdiff_t>(i * d), flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    flags[i] = (static_cast<unsigned char>(bits[i / 8]) >> (i % 8)) & 1U;
  }
  if (r.remaining() != 0) throw DataError("bank snapshot has trailing bytes");
  try {
    return MemoryBank::from_slots(d, std::move(slots), std::move(flags), tau, t);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("bank snapshot: ") + e.what());
  }
}

struct Checkpoint {
  TrainingConfig config;
  TrainingState state;
};

inline std::string encode_checkpoint(const TrainingConfig& cfg, const TrainingState& state) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u8(kFormatVersion);
  const auto& arch = state.params.arch;
  w.u64(arch.input_dim);
  w.u64(arch.encoder_hidden.size());
  for (auto v : arch.encoder_hidden) w.u64(v);
  w.u64(arch.latent_dim);
  w.u64(arch.decoder_hidden.size());
  for (auto v : arch.decoder_hidden) w.u64(v);
  const auto tensors = state.params.tensors();
  for (const auto& t : tensors) {
    w.u64(t.size());
    w.reals(t.values());
  }
  w.f64(state.adam.learning_rate);
  w.f64(state.adam.beta1);
  w.f64(state.adam.beta2);
  w.f64(state.adam.epsilon);
  w.u64(state.adam.step);
  for (const auto& m : state.adam.first_moment) w.reals(m);
  for (const auto& v : state.adam.second_moment) w.reals(v);
  w.blob(to_text(cfg));
  w.u64(state.pretrain_epochs_done);
  w.u64(state.rounds_done);
  w.blob(encode_bank(state.bank));
  return w.take();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  r.expect_header(kCheckpointMagic, "checkpoint");
  Architecture arch;
  arch.input_dim = r.size();
  for (auto n = r.size(); n > 0; --n) arch.encoder_hidden.push_back(r.size());
  arch.latent_dim = r.size();
  for (auto n = r.size(); n > 0; --n) arch.decoder_hidden.push_back(r.size());
  try {
    arch.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint architecture: ") + e.what());
  }

  ModelParams params{arch, {}, {}};
  auto read_stack = [&r](const std::vector<std::size_t>& widths) {
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::size_t fan_in = widths[l], fan_out = widths[l + 1];
      if (r.size() != fan_in * fan_out) throw DataError("checkpoint weight size mismatch");
      auto w = r.reals(fan_in * fan_out);
      if (r.size() != fan_out) throw DataError("checkpoint bias size mismatch");
      auto b = r.reals(fan_out);
      layers.push_back({ndgrad::Tensor({fan_in, fan_out}, std::move(w), true),
                        ndgrad::Tensor({fan_out}, std::move(b), true)});
    }
    return layers;
  };
  params.encoder = read_stack(arch.encoder_widths());
  params.decoder = read_stack(arch.decoder_widths());

  AdamState adam;
  adam.learning_rate = r.f64();
  adam.beta1 = r.f64();
  adam.beta2 = r.f64();
  adam.epsilon = r.f64();
  adam.step = r.u64();
  const auto tensors = params.tensors();
  for (const auto& t : tensors) adam.first_moment.push_back(r.reals(t.size()));
  for (const auto& t : tensors) adam.second_moment.push_back(r.reals(t.size()));

  TrainingConfig cfg;
  try {
    cfg = parse_config(std::string(r.blob()));
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  const auto pre = r.size();
  const auto rounds = r.size();
  auto bank = decode_bank(r.blob());
  if (r.remaining() != 0) throw DataError("checkpoint has trailing bytes");
  if (bank.dim() != arch.latent_dim) throw DataError("checkpoint bank dimension does not match the model");
  return {cfg, TrainingState{std::move(params), std::move(adam), std::move(bank), pre, rounds}};
}

}  // namespace salad
