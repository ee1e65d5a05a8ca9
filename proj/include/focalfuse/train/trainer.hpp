// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "focalfuse/arch/model.hpp"
#include "focalfuse/data/phantom.hpp"
#include "focalfuse/data/split.hpp"
#include "focalfuse/data/volume.hpp"
#include "focalfuse/metrics/loss.hpp"
#include "focalfuse/metrics/metrics.hpp"
#include "focalfuse/train/adam.hpp"
#include "focalfuse/train/checkpoint.hpp"
#include "focalfuse/train/schedule.hpp"

namespace focalfuse::train {

struct IterationRecord {
  std::int64_t iteration = 0;
  int epoch = 0;
  std::string sample_id;
  double lr = 0.0;
  double loss = 0.0;
};

struct ValidationRecord {
  int epoch = 0;
  std::int64_t iteration = 0;  // iterations completed when validation ran
  metrics::MetricsReport aggregate;
  std::vector<metrics::MetricsReport> volumes;
};

struct TrainLog {
  std::vector<IterationRecord> iterations;
  std::vector<ValidationRecord> validations;

  static std::string iteration_header() { return "iteration\tepoch\tsample\tlr\tloss\n"; }
  /// Values are written in shortest round-trip form.
  static std::string iteration_line(const IterationRecord& r) {
    return std::to_string(r.iteration) + '\t' + std::to_string(r.epoch) + '\t' + r.sample_id + '\t' +
           data::detail::format_double(r.lr) + '\t' + data::detail::format_double(r.loss) + '\n';
  }
  static std::string validation_header() { return "epoch\titeration\tmean_dsc\tmean_hd\tmean_asd\n"; }
  static std::string validation_line(const ValidationRecord& r) {
    const auto f = [](const std::optional<double>& v) { return v ? data::detail::format_double(*v) : std::string("-"); };
    return std::to_string(r.epoch) + '\t' + std::to_string(r.iteration) + '\t' + f(r.aggregate.mean_dsc) + '\t' +
           f(r.aggregate.mean_hd) + '\t' + f(r.aggregate.mean_asd) + '\n';
  }

  [[nodiscard]] std::string iterations_tsv() const {
    std::string s = iteration_header();
    for (const auto& r : iterations) s += iteration_line(r);
    return s;
  }
  [[nodiscard]] std::string validations_tsv() const {
    std::string s = validation_header();
    for (const auto& r : validations) s += validation_line(r);
    return s;
  }
};

struct TrainOptions {
  int epochs = 50;
  std::uint64_t seed = 0;
  std::int64_t half_cycle = 100;
  double lr_min = kLrMin;
  double lr_max = kLrMax;
  /// Validate every this many epochs; the final epoch is always validated.
  /// 0 validates only at the end.
  int val_every = 0;
  /// Global gradient-norm clip; 0 disables.
  double max_grad_norm = 0.0;
  /// When set, `last.ckpt` is rewritten here after every epoch.
  std::filesystem::path checkpoint_dir;
  std::function<void(const IterationRecord&)> on_iteration;
  std::function<void(const ValidationRecord&)> on_validation;
};

/// Raised when the loss or a gradient becomes non-finite.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(std::int64_t iteration, const std::string& what)
      : NumericError("training diverged at iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
  [[nodiscard]] std::int64_t iteration() const { return iteration_; }

 private:
  std::int64_t iteration_;
};

struct TrainResult {
  arch::Model<float> model;
  OptimState<float> optim;
  TrainLog log;
};

/// Argmax segmentation of one volume.
template <class T>
metrics::LabelVolume predict(const arch::Model<T>& model, const data::VolumeSample& sample) {
  model.config().validate_extents(sample.extents());
  const Tensor<T> logits = model.forward(sample.image_tensor<T>());
  return metrics::LabelVolume(sample.extents(), metrics::argmax_channels(logits));
}

/// Per-volume and aggregate metrics of `model` on `samples`.
template <class T>
ValidationRecord validate_model(const arch::Model<T>& model, const std::vector<data::VolumeSample>& samples) {
  ValidationRecord r;
  for (const auto& s : samples) {
    r.volumes.push_back(metrics::evaluate_volume(predict(model, s), s.labels, s.spacing,
                                                 static_cast<int>(model.config().num_classes), s.id));
  }
  r.aggregate = metrics::aggregate_reports(r.volumes);
  return r;
}

/// Deterministic training loop: batch size 1, epoch order shuffled from the
/// seed, triangular cyclic lr indexed by global iteration, Adam.
inline TrainResult train(const arch::ModelConfig& config, const std::vector<data::VolumeSample>& train_set,
                         const std::vector<data::VolumeSample>& val_set, const TrainOptions& opts) {
  config.validate();
  if (train_set.empty()) throw ConfigError("train: training set is empty");
  if (opts.epochs < 1) throw ConfigError("train: epochs must be positive");
  if (opts.val_every < 0) throw ConfigError("train: val_every must be non-negative");
  for (const auto& s : train_set) {
    s.validate();
    config.validate_extents(s.extents());
    if (s.num_classes != config.num_classes) {
      throw ConfigError("train: sample " + s.id + " has " + std::to_string(s.num_classes) + " classes, config has " +
                        std::to_string(config.num_classes));
    }
    if (!s.has_image()) throw DataError("train: sample " + s.id + " has no image");
  }

  TrainResult res{arch::Model<float>(config, opts.seed), OptimState<float>{}, TrainLog{}};
  res.optim = OptimState<float>(res.model.params());
  auto& params = res.model.params();

  std::vector<Tensor<float>> inputs;
  for (const auto& s : train_set) inputs.push_back(s.image_tensor<float>());

  std::int64_t it = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto order = data::seeded_permutation(train_set.size(), data::derive_seed(opts.seed, 0x7100 + epoch));
    for (std::size_t k : order) {
      const auto& sample = train_set[k];
      const double lr = cyclic_lr(it, opts.lr_min, opts.lr_max, opts.half_cycle);
      double loss_value = 0.0;
      try {
        params.zero_grad();
        Tape<float> tape;
        Tape<float>::Scope scope(tape);
        const Tensor<float> logits = res.model.forward(inputs[k]);
        const Tensor<float> loss = metrics::dice_ce_loss(logits, sample.labels.values);
        loss_value = loss.item();
        tape.backward(loss);
        double scale = 1.0;
        if (opts.max_grad_norm > 0.0) {
          const double norm = grad_norm(params);
          if (norm > opts.max_grad_norm) scale = opts.max_grad_norm / norm;
        }
        adam_step(params, res.optim, lr, scale);
      } catch (const NumericError& e) {
        throw TrainingDiverged(it, e.what());
      }
      IterationRecord rec{it, epoch, sample.id, lr, loss_value};
      res.log.iterations.push_back(rec);
      if (opts.on_iteration) opts.on_iteration(rec);
      ++it;
    }
    params.zero_grad();

    const bool last = epoch + 1 == opts.epochs;
    if (!val_set.empty() && (last || (opts.val_every > 0 && (epoch + 1) % opts.val_every == 0))) {
      ValidationRecord v = validate_model(res.model, val_set);
      v.epoch = epoch;
      v.iteration = it;
      res.log.validations.push_back(v);
      if (opts.on_validation) opts.on_validation(v);
    }
    if (!opts.checkpoint_dir.empty()) {
      save_checkpoint(params, res.optim, config, opts.checkpoint_dir / "last.ckpt");
    }
  }
  return res;
}

}  // namespace focalfuse::train
