// File formats: 8-bit PGM images, dataset manifests, and the CSV outputs.
//
// Manifest CSV:  path,label,patient_id,body_part
// Loss CSV:      epoch,mse,ss,agg,total,k
// Score CSV:     sample_id,raw,normalized,label
// Curve CSVs:    fpr,tpr  /  recall,precision
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "salad/dataprep.hpp"
#include "salad/eval.hpp"
#include "salad/scorer.hpp"
#include "salad/trainer.hpp"

namespace salad {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// -- PGM ---------------------------------------------------------------------------

/// Parses binary (P5) or ASCII (P2) PGM with maxval <= 255; pixels scaled to [0, 1].
inline Image parse_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&] {
    skip_ws();
    std::size_t start = pos;
    unsigned long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<unsigned long>(bytes[pos] - '0');
      ++pos;
    }
    if (pos == start) throw DataError("malformed PGM header");
    return static_cast<std::size_t>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '2')) {
    throw DataError("not a PGM (P2/P5) image");
  }
  const bool binary = bytes[1] == '5';
  pos = 2;
  const std::size_t w = read_uint(), h = read_uint(), maxval = read_uint();
  if (w == 0 || h == 0) throw DataError("PGM has zero size");
  if (maxval == 0 || maxval > 255) throw DataError("only 8-bit PGM is supported");
  Image img(h, w);
  if (binary) {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + w * h) throw DataError("truncated PGM pixel data");
    for (std::size_t i = 0; i < w * h; ++i) {
      img.pixels[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<double>(maxval);
    }
  } else {
    for (std::size_t i = 0; i < w * h; ++i) img.pixels[i] = static_cast<double>(read_uint()) / static_cast<double>(maxval);
  }
  return img;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::string encode_pgm(const Image& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  for (double p : img.pixels) out.push_back(static_cast<char>(to_byte(p)));
  return out;
}

inline std::string encode_pgm(const BinaryMask& mask) {
  Image img(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) img.pixels[i] = mask.bits[i] ? 1.0 : 0.0;
  return encode_pgm(img);
}

inline Image read_pgm(const fs::path& path) { return parse_pgm(read_file(path)); }
inline void write_pgm(const fs::path& path, const Image& img) { write_file(path, encode_pgm(img)); }

// -- CSV helpers ---------------------------------------------------------------------

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

/// Rows of a CSV file with a header line; the header is checked against `expected`.
inline std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::vector<std::string>& expected) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty CSV");
  if (split_csv_line(line) != expected) throw DataError(path.string() + ": unexpected CSV header '" + line + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != expected.size()) throw DataError(path.string() + ": wrong column count in '" + line + "'");
    rows.push_back(std::move(cells));
  }
  return rows;
}

// -- manifests -----------------------------------------------------------------------

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory unless absolute
  Label label = Label::unknown;
  GroupId group;
};

inline const std::vector<std::string> kManifestHeader{"path", "label", "patient_id", "body_part"};

inline std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::vector<ManifestEntry> out;
  for (auto& row : read_csv(path, kManifestHeader)) {
    out.push_back({row[0], parse_label(row[1]), {row[2], row[3]}});
  }
  return out;
}

inline std::string encode_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out = "path,label,patient_id,body_part\n";
  for (const auto& e : entries) {
    out += e.path + "," + to_string(e.label) + "," + e.group.patient + "," + e.group.body_part + "\n";
  }
  return out;
}

inline fs::path resolve_entry(const fs::path& manifest, const std::string& entry) {
  fs::path p(entry);
  return p.is_absolute() ? p : manifest.parent_path() / p;
}

// -- loss / score / curve CSVs -----------------------------------------------------------

inline const std::vector<std::string> kLossHeader{"epoch", "mse", "ss", "agg", "total", "k"};

inline std::string loss_csv_header() { return "epoch,mse,ss,agg,total,k\n"; }

inline std::string loss_csv_row(const EpochRecord& r) {
  return std::to_string(r.epoch) + "," + fmt_double(r.loss.mse) + "," + fmt_double(r.loss.ss) + "," +
         fmt_double(r.loss.agg) + "," + fmt_double(r.loss.total) + "," + std::to_string(r.k) + "\n";
}

inline const std::vector<std::string> kScoreHeader{"sample_id", "raw", "normalized", "label"};

struct ScoreRow {
  std::string sample_id;
  double raw = 0.0;
  double normalized = 0.0;
  Label label = Label::unknown;
};

inline std::string encode_scores(const std::vector<ScoreRow>& rows) {
  std::string out = "sample_id,raw,normalized,label\n";
  for (const auto& r : rows) {
    out += r.sample_id + "," + fmt_double(r.raw) + "," + fmt_double(r.normalized) + "," + to_string(r.label) + "\n";
  }
  return out;
}

inline std::vector<ScoreRow> read_scores(const fs::path& path) {
  std::vector<ScoreRow> out;
  for (auto& row : read_csv(path, kScoreHeader)) {
    out.push_back({row[0], std::stod(row[1]), std::stod(row[2]), parse_label(row[3])});
  }
  return out;
}

inline std::string encode_roc(const std::vector<RocPoint>& pts) {
  std::string out = "fpr,tpr\n";
  for (const auto& p : pts) out += fmt_double(p.fpr) + "," + fmt_double(p.tpr) + "\n";
  return out;
}

inline std::string encode_pr(const std::vector<PrPoint>& pts) {
  std::string out = "recall,precision\n";
  for (const auto& p : pts) out += fmt_double(p.recall) + "," + fmt_double(p.precision) + "\n";
  return out;
}

}  // namespace salad
