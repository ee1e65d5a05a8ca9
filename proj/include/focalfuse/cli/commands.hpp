// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "focalfuse/arch/describe.hpp"
#include "focalfuse/data/phantom.hpp"
#include "focalfuse/data/volume.hpp"
#include "focalfuse/metrics/metrics.hpp"
#include "focalfuse/tensor/parallel.hpp"
#include "focalfuse/train/checkpoint.hpp"
#include "focalfuse/train/trainer.hpp"

namespace focalfuse::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsageError = 2 };

inline constexpr std::string_view kVolumeExt = ".mvol";

/// Model config from an optional file plus command-line overrides.
struct ModelOverrides {
  std::optional<fs::path> config;
  std::optional<std::string> variant;
  std::optional<Index> base_channels;

  [[nodiscard]] arch::ModelConfig resolve() const {
    arch::ModelConfig cfg = config ? arch::ModelConfig::load(*config) : arch::ModelConfig{};
    if (variant) cfg.variant = arch::parse_variant(*variant);
    if (base_channels) cfg.base_channels = *base_channels;
    cfg.validate();
    return cfg;
  }
};

struct GenDataArgs {
  std::optional<fs::path> spec;
  Index count = 4;
  std::optional<std::uint64_t> seed;
  fs::path out;
};

struct TrainArgs {
  ModelOverrides model;
  fs::path data;
  std::optional<fs::path> val_data;
  fs::path out;
  int epochs = 50;
  std::uint64_t seed = 0;
  std::int64_t half_cycle = 100;
  int val_every = 0;
  double max_grad_norm = 0.0;
};

struct InferArgs {
  fs::path checkpoint;
  fs::path input;  // a volume file or a directory of them
  fs::path out;    // a file for a single input, else a directory
};

struct EvalArgs {
  fs::path pred;
  fs::path truth;
  std::optional<fs::path> out;
  bool hd95 = false;
};

struct DescribeArgs {
  ModelOverrides model;
  std::array<Index, 3> extents{32, 32, 32};
  bool per_tensor = false;
};

/// Sorted list of volume files in `dir`.
inline std::vector<fs::path> list_volumes(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == kVolumeExt) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<data::VolumeSample> load_volumes(const fs::path& dir) {
  std::vector<data::VolumeSample> out;
  for (const auto& f : list_volumes(dir)) out.push_back(data::read_volume(f));
  return out;
}

inline std::string file_digest(const fs::path& p) {
  const std::string bytes = data::detail::read_file(p);
  return data::sha256_hex(std::as_bytes(std::span(bytes.data(), bytes.size())));
}

/// Writes `count` phantoms plus manifest.tsv (id, seed, file, sha256 of the file).
inline int gen_data(const GenDataArgs& a, std::ostream& log) {
  data::PhantomSpec spec =
      a.spec ? data::PhantomSpec::parse(data::detail::read_file(*a.spec)) : data::PhantomSpec{};
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  if (a.count < 0) throw ConfigError("--count must be non-negative");
  fs::create_directories(a.out);
  std::string manifest = "id\tseed\tfile\tsha256\n";
  for (Index i = 0; i < a.count; ++i) {
    const auto sample = data::generate_phantom_at(spec, static_cast<std::uint64_t>(i));
    const fs::path file = a.out / (sample.id + std::string(kVolumeExt));
    data::write_volume(sample, file);
    manifest += sample.id + '\t' + std::to_string(data::derive_seed(spec.seed, static_cast<std::uint64_t>(i))) + '\t' +
                file.filename().string() + '\t' + file_digest(file) + '\n';
  }
  data::detail::write_file(a.out / "manifest.tsv", manifest);
  log << "wrote " << a.count << " volumes to " << a.out.string() << '\n';
  return kOk;
}

/// Trains and writes model.ckpt, last.ckpt, config.txt, train_log.tsv and
/// val_log.tsv into `out`. Log rows are flushed as they are produced so a
/// diverged run keeps its log.
inline int train(const TrainArgs& a, std::ostream& log) {
  const arch::ModelConfig cfg = a.model.resolve();
  if (!fs::is_directory(a.data)) throw DataError("data directory not found: " + a.data.string());
  const auto train_set = load_volumes(a.data);
  if (train_set.empty()) throw DataError("no " + std::string(kVolumeExt) + " files in " + a.data.string());
  const auto val_set = a.val_data ? load_volumes(*a.val_data) : train_set;
  for (const auto& s : train_set) {
    if (s.num_classes != cfg.num_classes) {
      throw ConfigError("volume " + s.id + " has " + std::to_string(s.num_classes) + " classes but the config has " +
                        std::to_string(cfg.num_classes));
    }
    cfg.validate_extents(s.extents());
  }
  fs::create_directories(a.out);
  data::detail::write_file(a.out / "config.txt", cfg.to_text());
  std::ofstream tlog(a.out / "train_log.tsv", std::ios::trunc);
  std::ofstream vlog(a.out / "val_log.tsv", std::ios::trunc);
  if (!tlog || !vlog) throw DataError("cannot write logs in " + a.out.string());
  tlog << train::TrainLog::iteration_header() << std::flush;
  vlog << train::TrainLog::validation_header() << std::flush;

  train::TrainOptions o;
  o.epochs = a.epochs;
  o.seed = a.seed;
  o.half_cycle = a.half_cycle;
  o.val_every = a.val_every;
  o.max_grad_norm = a.max_grad_norm;
  o.checkpoint_dir = a.out;
  o.on_iteration = [&](const train::IterationRecord& r) { tlog << train::TrainLog::iteration_line(r) << std::flush; };
  o.on_validation = [&](const train::ValidationRecord& r) {
    vlog << train::TrainLog::validation_line(r) << std::flush;
    log << "epoch " << r.epoch + 1 << ": mean DSC "
        << (r.aggregate.mean_dsc ? data::detail::format_double(*r.aggregate.mean_dsc) : std::string("-")) << '\n';
  };
  try {
    auto res = train::train(cfg, train_set, val_set, o);
    train::save_checkpoint(res.model.params(), res.optim, cfg, a.out / "model.ckpt");
    const auto& last = res.log.iterations.back();
    log << "trained " << last.iteration + 1 << " iterations, final loss " << last.loss << '\n';
  } catch (const train::TrainingDiverged& e) {
    tlog << "# " << e.what() << '\n' << std::flush;
    throw;
  }
  return kOk;
}

/// Argmax labels for one volume or a directory of volumes, written as
/// label-only MVOL1 files keeping the input id and spacing.
inline int infer(const InferArgs& a, std::ostream& log) {
  const auto ck = train::load_checkpoint(a.checkpoint);
  const auto model = train::model_from_checkpoint(ck);
  const bool many = fs::is_directory(a.input);
  const std::vector<fs::path> inputs = many ? list_volumes(a.input) : std::vector<fs::path>{a.input};
  if (many) fs::create_directories(a.out);
  for (const auto& in : inputs) {
    const auto sample = data::read_volume(in);
    model.config().validate_extents(sample.extents());
    if (sample.num_classes != model.config().num_classes) {
      throw ConfigError(sample.id + ": volume has " + std::to_string(sample.num_classes) +
                        " classes, checkpoint has " + std::to_string(model.config().num_classes));
    }
    data::VolumeSample pred;
    pred.id = sample.id;
    pred.spacing = sample.spacing;
    pred.num_classes = static_cast<int>(model.config().num_classes);
    pred.labels = train::predict(model, sample);
    const fs::path dst = many ? a.out / in.filename() : a.out;
    data::write_volume(pred, dst);
    log << sample.id << " -> " << dst.string() << '\n';
  }
  return kOk;
}

/// Per-volume and aggregate metrics matched by volume id. Writes metrics.csv and
/// metrics.txt into `out` when given; the text table always goes to `log`.
inline int eval(const EvalArgs& a, std::ostream& log) {
  std::map<std::string, data::VolumeSample> preds, truths;
  for (const auto& f : list_volumes(a.pred)) {
    auto s = data::read_volume(f);
    preds.emplace(s.id, std::move(s));
  }
  for (const auto& f : list_volumes(a.truth)) {
    auto s = data::read_volume(f);
    truths.emplace(s.id, std::move(s));
  }
  std::vector<std::string> unmatched;
  for (const auto& [id, _] : preds) {
    if (!truths.contains(id)) unmatched.push_back(id + " (prediction only)");
  }
  for (const auto& [id, _] : truths) {
    if (!preds.contains(id)) unmatched.push_back(id + " (truth only)");
  }
  if (!unmatched.empty()) {
    std::string msg = "unmatched volume ids:";
    for (const auto& u : unmatched) msg += ' ' + u;
    throw ConfigError(msg);
  }
  if (truths.empty()) throw DataError("no volumes to evaluate in " + a.truth.string());

  std::vector<metrics::MetricsReport> reports;
  for (const auto& [id, t] : truths) {
    const auto& p = preds.at(id);
    if (p.extents() != t.extents()) throw DataError(id + ": prediction and truth extents differ");
    const int nc = std::max(p.num_classes, t.num_classes);
    auto r = metrics::evaluate_volume(p.labels, t.labels, t.spacing, nc, id);
    if (a.hd95) {
      for (auto& c : r.per_class) {
        if (!c.hd) continue;
        c.hd = metrics::hausdorff_distance(metrics::class_mask(p.labels, c.class_id),
                                           metrics::class_mask(t.labels, c.class_id), t.extents(), t.spacing,
                                           metrics::HausdorffMode::percentile95);
      }
      metrics::detail::finish_means(r);
    }
    reports.push_back(std::move(r));
  }
  auto rows = reports;
  rows.push_back(metrics::aggregate_reports(reports));
  const std::string table = metrics::format_table(rows);
  std::string csv;
  for (std::size_t i = 0; i < rows.size(); ++i) csv += rows[i].to_csv(i == 0);
  if (a.out) {
    fs::create_directories(*a.out);
    data::detail::write_file(*a.out / "metrics.csv", csv);
    data::detail::write_file(*a.out / "metrics.txt", table);
  }
  log << table;
  return kOk;
}

inline int describe(const DescribeArgs& a, std::ostream& out) {
  out << arch::describe(a.model.resolve(), a.extents).to_text(a.per_tensor);
  return kOk;
}

/// Runs a command body and maps library errors to exit codes with a one-line
/// diagnostic on `err`.
template <class Fn>
int guarded(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
}

}  // namespace focalfuse::cli
