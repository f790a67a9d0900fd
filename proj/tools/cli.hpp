// Command-line front end: synth, segment, split, train, score, eval, report.
//
// run() parses an argument vector and returns the process exit code, so
// tests drive it in-process. Exit codes: 0 success, 1 usage or invalid
// configuration, 2 data error, 3 numeric failure.
#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "salad/png_io.hpp"
#include "salad/salad.hpp"

namespace salad::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

inline constexpr const char* kOutputRootEnv = "SALAD_OUTPUT_ROOT";

/// Relative output paths land under $SALAD_OUTPUT_ROOT when it is set.
inline fs::path output_path(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / path;
  return path;
}

inline Image load_image(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") return read_pgm(path);
  throw DataError("unsupported image format: " + path.string());
}

inline std::vector<Sample> load_samples(const fs::path& manifest, std::vector<ManifestEntry>* entries = nullptr) {
  auto rows = read_manifest(manifest);
  std::vector<Sample> out;
  out.reserve(rows.size());
  for (const auto& e : rows) out.push_back({load_image(resolve_entry(manifest, e.path)), e.label, e.group});
  if (entries) *entries = std::move(rows);
  return out;
}

// -- replicate layout ----------------------------------------------------------------

inline fs::path replicate_dir(const fs::path& run, std::size_t k) { return run / ("rep_" + std::to_string(k)); }

inline std::vector<fs::path> replicate_dirs(const fs::path& run) {
  std::vector<fs::path> out;
  for (std::size_t k = 0; fs::is_directory(replicate_dir(run, k)); ++k) out.push_back(replicate_dir(run, k));
  if (out.empty()) throw DataError("no replicate directories (rep_0, ...) under " + run.string());
  return out;
}

/// Replicate 0 keeps the configured seeds; replicate k > 0 derives new ones.
inline TrainingConfig replicate_config(TrainingConfig cfg, std::size_t k) {
  if (k == 0) return cfg;
  cfg.init_seed = mix_seed(cfg.init_seed, k);
  cfg.bank_seed = mix_seed(cfg.bank_seed, k);
  cfg.shuffle_seed = mix_seed(cfg.shuffle_seed, k);
  cfg.augment_seed = mix_seed(cfg.augment_seed, k);
  return cfg;
}

inline void apply_ablation(TrainingConfig& cfg, const std::string& name) {
  if (name.empty() || name == "none") return;
  if (name == "no-agg") {
    cfg.use_agg = false;
  } else if (name == "no-mse") {
    cfg.use_mse = false;
  } else if (name == "no-ss") {
    cfg.use_ss = false;
  } else if (name == "dae") {
    cfg.lambda = 0.0;
    cfg.augment = AugmentSpec::disabled();
  } else if (name == "memdae") {
    cfg.use_ss = false;
    cfg.use_agg = false;
    cfg.normals_only = true;
  } else {
    throw std::invalid_argument("unknown ablation '" + name + "'");
  }
}

inline std::string round_checkpoint_name(std::size_t round) { return "ckpt_round_" + std::to_string(round) + ".bin"; }

// keeps the header and every row whose epoch is <= last_epoch
inline std::string truncate_losses(const std::string& csv, std::size_t last_epoch) {
  std::istringstream in(csv);
  std::string line, out;
  if (!std::getline(in, line) || line + "\n" != loss_csv_header()) throw DataError("losses.csv has an unexpected header");
  out = line + "\n";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) <= last_epoch) out += line + "\n";
  }
  return out;
}

struct TrainOptions {
  bool resume = false;
  std::size_t stop_after_round = 0;
};

/// Trains one replicate into `dir`. Returns true when the run completed.
inline bool train_replicate(const fs::path& dir, const TrainingConfig& cfg, const TrainingSet& data,
                            const TrainOptions& opt) {
  fs::create_directories(dir);
  const auto losses_path = dir / "losses.csv";
  if (opt.resume && fs::exists(dir / "model.ckpt")) return true;

  std::optional<TrainingState> state;
  if (opt.resume) {
    std::optional<std::size_t> latest;
    for (std::size_t r = 0; r <= cfg.rounds; ++r) {
      if (fs::exists(dir / round_checkpoint_name(r))) latest = r;
    }
    if (latest) {
      auto ck = decode_checkpoint(read_file(dir / round_checkpoint_name(*latest)));
      if (to_text(ck.config) != to_text(cfg)) throw DataError("checkpoint in " + dir.string() + " was written with a different config");
      state = std::move(ck.state);
      const std::size_t done = state->pretrain_epochs_done + state->rounds_done * cfg.epochs_per_round;
      write_file(losses_path, truncate_losses(read_file(losses_path), done));
    }
  }
  if (!state) {
    state = TrainingState::initialize(cfg, data);
    write_file(dir / "config.txt", to_text(cfg));
    write_file(losses_path, loss_csv_header());
  }

  std::ofstream losses(losses_path, std::ios::binary | std::ios::app);
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) { losses << loss_csv_row(r) << std::flush; };
  hooks.on_round_end = [&](const TrainingState& s, std::size_t round) {
    write_file(dir / round_checkpoint_name(round), encode_checkpoint(cfg, s));
  };
  hooks.stop_after_round = opt.stop_after_round;

  pretrain(data, *state, cfg, hooks);
  if (state->rounds_done == 0) write_file(dir / round_checkpoint_name(0), encode_checkpoint(cfg, *state));
  if (opt.stop_after_round == 0 || state->rounds_done < opt.stop_after_round) train_progressive(data, *state, cfg, hooks);
  if (state->rounds_done < cfg.rounds) return false;

  write_file(dir / "model.ckpt", encode_checkpoint(cfg, *state));
  write_file(dir / "bank.bin", encode_bank(state->bank));
  return true;
}

// -- subcommands ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 7;
  SynthConfig cfg;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto dir = output_path(a.out);
  const auto samples = synth_generate(a.cfg, a.seed);
  std::vector<ManifestEntry> entries;
  std::size_t anomalous = 0;
  std::set<GroupId> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "images/s%05zu.pgm", i);
    write_pgm(dir / name, samples[i].image);
    entries.push_back({name, samples[i].label, samples[i].group});
    anomalous += samples[i].label == Label::anomalous ? 1 : 0;
    groups.insert(samples[i].group);
  }
  write_file(dir / "manifest.csv", encode_manifest(entries));
  out << "synth: " << samples.size() << " images (" << anomalous << " anomalous) in " << groups.size()
      << " groups -> " << (dir / "manifest.csv").string() << "\n";
  return kOk;
}

struct SegmentArgs {
  std::string manifest, out;
  double lo = 0.1, hi = 0.3;
  bool four_connected = false;
  bool keep_all = false;
  std::size_t target = 0;
};

inline int cmd_segment(const SegmentArgs& a, std::ostream& out) {
  const auto dir = output_path(a.out);
  std::vector<ManifestEntry> entries;
  const auto samples = load_samples(a.manifest, &entries);
  std::vector<ManifestEntry> next;
  std::size_t empty = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto mask = hysteresis_segment(samples[i].image, a.lo, a.hi, {!a.four_connected, !a.keep_all});
    empty += mask.count() == 0 ? 1 : 0;
    auto img = apply_mask(samples[i].image, mask);
    if (a.target > 0) img = resize_pad(img, a.target);
    char name[64];
    std::snprintf(name, sizeof name, "%05zu_", i);
    const auto stem = std::string(name) + fs::path(entries[i].path).stem().string() + ".pgm";
    write_file(dir / "masks" / stem, encode_pgm(mask));
    write_pgm(dir / "images" / stem, img);
    next.push_back({"images/" + stem, entries[i].label, entries[i].group});
  }
  write_file(dir / "manifest.csv", encode_manifest(next));
  out << "segment: " << samples.size() << " images, " << empty << " empty masks -> " << (dir / "manifest.csv").string() << "\n";
  return kOk;
}

struct SplitArgs {
  std::string manifest, out;
  std::uint64_t seed = 11;
  SplitRatios ratios;
};

inline int cmd_split(const SplitArgs& a, std::ostream& out) {
  const auto dir = output_path(a.out);
  const fs::path manifest(a.manifest);
  const auto entries = read_manifest(manifest);
  std::vector<Sample> samples;
  for (const auto& e : entries) samples.push_back({{}, e.label, e.group});
  const auto split = split_grouped(samples, a.seed, a.ratios);
  auto write = [&](const char* name, const std::vector<std::size_t>& idx) {
    std::vector<ManifestEntry> part;
    for (auto i : idx) {
      auto e = entries[i];
      const auto abs_src = fs::absolute(resolve_entry(manifest, e.path)).lexically_normal();
      e.path = abs_src.lexically_relative(fs::absolute(dir).lexically_normal()).generic_string();
      part.push_back(std::move(e));
    }
    write_file(dir / name, encode_manifest(part));
  };
  write("train.csv", split.train_samples);
  write("val.csv", split.validation_samples);
  write("test.csv", split.test_samples);
  out << "split: groups " << split.train.size() << "/" << split.validation.size() << "/" << split.test.size()
      << ", images " << split.train_samples.size() << "/" << split.validation_samples.size() << "/"
      << split.test_samples.size() << ", train anomalous share " << split.achieved_train_anomalous << "\n";
  return kOk;
}

struct TrainArgs {
  std::string manifest, out, config_file, preset, ablate;
  std::vector<std::string> overrides;
  std::size_t replicates = 1;
  std::size_t jobs = 1;
  TrainOptions options;
};

inline TrainingConfig resolve_config(const TrainArgs& a) {
  TrainingConfig cfg = a.preset.empty() ? TrainingConfig::desk() : TrainingConfig::from_preset(a.preset);
  if (!a.config_file.empty()) cfg = parse_config(read_file(a.config_file), cfg);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    apply_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  apply_ablation(cfg, a.ablate);
  cfg.validate();
  return cfg;
}

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.replicates == 0) throw std::invalid_argument("--replicates must be at least 1");
  const auto cfg = resolve_config(a);
  const auto run = output_path(a.out);
  const auto data = make_training_set(load_samples(a.manifest), cfg.normals_only);

  std::vector<char> done(a.replicates, 0);
  std::vector<std::exception_ptr> errors(a.replicates);
  std::size_t next = 0;
  std::mutex lock;
  auto worker = [&] {
    for (;;) {
      std::size_t k;
      {
        std::lock_guard guard(lock);
        if (next == a.replicates) return;
        k = next++;
      }
      try {
        done[k] = train_replicate(replicate_dir(run, k), replicate_config(cfg, k), data, a.options) ? 1 : 0;
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(a.jobs, 1, a.replicates);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  const auto complete = static_cast<std::size_t>(std::count(done.begin(), done.end(), 1));
  out << "train: " << complete << "/" << a.replicates << " replicates complete, " << data.size() << " training images -> "
      << run.string() << "\n";
  return kOk;
}

struct ScoreArgs {
  std::string manifest, run, checkpoint, out;
  std::size_t k = 0;  // 0 = k_score from the checkpoint's config
};

inline void score_checkpoint(const fs::path& ckpt, const fs::path& manifest, const fs::path& dest, std::size_t k) {
  const auto ck = decode_checkpoint(read_file(ckpt));
  std::vector<ManifestEntry> entries;
  const auto samples = load_samples(manifest, &entries);
  if (samples.empty()) throw DataError("nothing to score in " + manifest.string());
  const std::size_t kk = k ? k : ck.config.k_score;
  const auto view_size = ck.state.bank.discard_anomalous().size();
  if (kk > view_size) {
    throw DataError("K=" + std::to_string(kk) + " exceeds the " + std::to_string(view_size) + " unflagged bank slots");
  }
  std::vector<std::vector<double>> images;
  for (const auto& s : samples) images.push_back(s.image.pixels);
  const auto scores = score_dataset(images, ck.state.params, ck.state.bank, kk);
  std::vector<ScoreRow> rows;
  for (std::size_t i = 0; i < scores.size(); ++i) rows.push_back({entries[i].path, scores[i].raw, scores[i].normalized, entries[i].label});
  write_file(dest, encode_scores(rows));
}

inline int cmd_score(const ScoreArgs& a, std::ostream& out) {
  if (!a.checkpoint.empty()) {
    if (a.out.empty()) throw std::invalid_argument("--checkpoint needs --out");
    score_checkpoint(a.checkpoint, a.manifest, output_path(a.out), a.k);
    out << "score: " << output_path(a.out).string() << "\n";
    return kOk;
  }
  if (a.run.empty()) throw std::invalid_argument("score needs --run or --checkpoint");
  const auto reps = replicate_dirs(output_path(a.run));
  for (const auto& dir : reps) {
    if (!fs::exists(dir / "model.ckpt")) throw DataError("replicate " + dir.string() + " has no final model.ckpt");
    score_checkpoint(dir / "model.ckpt", a.manifest, dir / "scores.csv", a.k);
  }
  out << "score: " << reps.size() << " replicates scored\n";
  return kOk;
}

struct Metrics {
  double auc = 0.0;
  double auprc = 0.0;
};

inline LabeledScores labeled_from(const std::vector<ScoreRow>& rows) {
  LabeledScores ls;
  for (const auto& r : rows) {
    if (r.label == Label::unknown) throw DataError("sample " + r.sample_id + " has no label; cannot evaluate");
    ls.scores.push_back(r.raw);
    ls.labels.push_back(r.label == Label::anomalous ? 1 : 0);
  }
  if (ls.positives() == 0 || ls.negatives() == 0) throw DataError("evaluation needs both normal and anomalous samples");
  return ls;
}

inline Metrics evaluate_scores(const fs::path& scores, const fs::path& dir) {
  const auto ls = labeled_from(read_scores(scores));
  const Metrics m{roc_auc(ls), auprc(ls)};
  write_file(dir / "metrics.csv", "auc,auprc\n" + fmt_double(m.auc) + "," + fmt_double(m.auprc) + "\n");
  write_file(dir / "roc.csv", encode_roc(roc_points(ls)));
  write_file(dir / "pr.csv", encode_pr(pr_points(ls)));
  return m;
}

inline const char* kSummaryHeader = "replicates,auc_mean,auc_ci95,auprc_mean,auprc_ci95\n";

struct EvalArgs {
  std::string scores, run, out;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (!a.scores.empty()) {
    const auto dir = a.out.empty() ? fs::path(a.scores).parent_path() : output_path(a.out);
    const auto m = evaluate_scores(a.scores, dir);
    out << "auc " << fmt_double(m.auc) << " auprc " << fmt_double(m.auprc) << "\n";
    return kOk;
  }
  if (a.run.empty()) throw std::invalid_argument("eval needs --scores or --run");
  const auto run = output_path(a.run);
  std::vector<double> aucs, aps;
  for (const auto& dir : replicate_dirs(run)) {
    const auto m = evaluate_scores(dir / "scores.csv", dir);
    aucs.push_back(m.auc);
    aps.push_back(m.auprc);
  }
  const auto sa = summarize(aucs), sp = summarize(aps);
  write_file(run / "summary.csv", std::string(kSummaryHeader) + std::to_string(aucs.size()) + "," + fmt_double(sa.mean) + "," +
                                      fmt_double(sa.ci95) + "," + fmt_double(sp.mean) + "," + fmt_double(sp.ci95) + "\n");
  out << "eval: " << aucs.size() << " replicates, auc " << sa.mean << " +- " << sa.ci95 << ", auprc " << sp.mean
      << " +- " << sp.ci95 << "\n";
  return kOk;
}

inline int cmd_report(const std::string& run_arg, std::ostream& out) {
  const auto run = output_path(run_arg);
  out << "run " << run.string() << "\n";
  for (const auto& dir : replicate_dirs(run)) {
    out << "  " << dir.filename().string() << ":";
    if (fs::exists(dir / "losses.csv")) {
      const auto rows = read_csv(dir / "losses.csv", kLossHeader);
      if (!rows.empty()) {
        const auto& r = rows.back();
        out << " epoch " << r[0] << " mse " << std::stod(r[1]) << " ss " << std::stod(r[2]) << " agg " << std::stod(r[3])
            << " total " << std::stod(r[4]) << " k " << r[5];
      }
    }
    out << (fs::exists(dir / "model.ckpt") ? " [complete]" : " [partial]");
    if (fs::exists(dir / "metrics.csv")) {
      const auto m = read_csv(dir / "metrics.csv", {"auc", "auprc"});
      if (!m.empty()) out << " auc " << m[0][0] << " auprc " << m[0][1];
    }
    out << "\n";
  }
  if (fs::exists(run / "summary.csv")) {
    const auto s = read_csv(run / "summary.csv", {"replicates", "auc_mean", "auc_ci95", "auprc_mean", "auprc_ci95"});
    if (!s.empty()) {
      out << "  summary: auc " << std::stod(s[0][1]) << " +- " << std::stod(s[0][2]) << ", auprc " << std::stod(s[0][3])
          << " +- " << std::stod(s[0][4]) << " over " << s[0][0] << " replicates\n";
    }
  }
  return kOk;
}

// -- entry point ------------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Memory-bank anomaly detector: data prep, training, scoring, evaluation", "salad"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a grouped synthetic dataset");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--seed", synth.seed, "generator seed");
  s->add_option("--count", synth.cfg.count, "number of images");
  s->add_option("--size", synth.cfg.size, "image side in pixels");
  s->add_option("--anomaly-fraction", synth.cfg.anomaly_fraction, "expected anomalous share");
  s->add_option("--images-per-patient", synth.cfg.images_per_patient);
  s->add_option("--body-parts", synth.cfg.body_parts);
  s->add_option("--defect-intensity", synth.cfg.defect_intensity);

  SegmentArgs seg;
  auto* g = app.add_subcommand("segment", "hysteresis masks plus optional resize-and-pad");
  g->add_option("--manifest", seg.manifest)->required();
  g->add_option("--out", seg.out)->required();
  g->add_option("--lo", seg.lo, "low threshold");
  g->add_option("--hi", seg.hi, "high threshold");
  g->add_flag("--four-connected", seg.four_connected, "use 4-connectivity");
  g->add_flag("--keep-all", seg.keep_all, "keep every seeded component, not only the largest");
  g->add_option("--target", seg.target, "major-axis length for resize-and-pad (0 keeps the size)");

  SplitArgs split;
  auto* p = app.add_subcommand("split", "grouped train/validation/test split");
  p->add_option("--manifest", split.manifest)->required();
  p->add_option("--out", split.out)->required();
  p->add_option("--seed", split.seed);
  p->add_option("--train-groups", split.ratios.train_groups, "share of groups in train");
  p->add_option("--train-normal", split.ratios.train_normal, "normal image share in train");
  p->add_option("--train-anomalous", split.ratios.train_anomalous, "anomalous image share in train");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "pre-train and progressive training");
  t->add_option("--manifest", train.manifest, "training manifest")->required();
  t->add_option("--out", train.out, "run directory")->required();
  t->add_option("--config", train.config_file, "key = value config file");
  t->add_option("--preset", train.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  t->add_option("--set", train.overrides, "config override key=value (repeatable)");
  t->add_option("--ablate", train.ablate, "no-agg, no-mse, no-ss, dae or memdae")
      ->check(CLI::IsMember({"none", "no-agg", "no-mse", "no-ss", "dae", "memdae"}));
  t->add_option("--replicates", train.replicates, "independent training runs");
  t->add_option("--jobs", train.jobs, "replicates trained concurrently");
  t->add_flag("--resume", train.options.resume, "continue from the latest round checkpoint");
  t->add_option("--stop-after-round", train.options.stop_after_round, "stop after this round (0 runs all)");

  ScoreArgs score;
  auto* c = app.add_subcommand("score", "anomaly scores for a manifest");
  c->add_option("--manifest", score.manifest)->required();
  c->add_option("--run", score.run, "run directory; writes rep_k/scores.csv");
  c->add_option("--checkpoint", score.checkpoint, "single checkpoint instead of a run");
  c->add_option("--out", score.out, "score CSV for --checkpoint");
  c->add_option("--k", score.k, "neighbors K (default from config)");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "AUC, AUPRC and curve points");
  e->add_option("--scores", eval.scores, "single score CSV");
  e->add_option("--run", eval.run, "run directory; summarizes all replicates");
  e->add_option("--out", eval.out, "directory for metrics with --scores");

  std::string report_run;
  auto* r = app.add_subcommand("report", "print losses, metrics and the replicate summary");
  r->add_option("--run", report_run)->required();

  std::vector<std::string> storage{"salad"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& ex) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "salad: " << ex.what() << "\n" << "run 'salad --help' for usage\n";
    return kUsage;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*g) return cmd_segment(seg, out);
    if (*p) return cmd_split(split, out);
    if (*t) return cmd_train(train, out);
    if (*c) return cmd_score(score, out);
    if (*e) return cmd_eval(eval, out);
    if (*r) return cmd_report(report_run, out);
  } catch (const NumericError& ex) {
    err << "salad: numeric failure: " << ex.what() << "\n";
    return kNumeric;
  } catch (const DataError& ex) {
    err << "salad: data error: " << ex.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& ex) {
    err << "salad: " << ex.what() << "\n";
    return kUsage;
  } catch (const std::exception& ex) {
    err << "salad: data error: " << ex.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace salad::cli
