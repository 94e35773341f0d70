// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "adrenaline/dataset.hpp"
#include "adrenaline/loss.hpp"
#include "adrenaline/metrics.hpp"
#include "adrenaline/model.hpp"
#include "json.hpp"

namespace adrenaline::train {

using ad::Tensor;

enum class Scheduler { none, noam };
Scheduler parse_scheduler(const std::string& name);
std::string scheduler_name(Scheduler s);

struct TrainConfig {
  std::size_t batch_size = 16;
  double base_lr = 2e-4;
  Scheduler scheduler = Scheduler::noam;
  std::size_t model_dim = 0;  // 0 means 2 * D_h
  std::size_t warmup = 1000;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  double lambda = 1.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool teacher_forcing = false;
  loss::DoaForm doa_form = loss::DoaForm::unit_vector;

  void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& c);

/// normal(0, sqrt(2 / fan_in)) samples.
Tensor kaiming_normal(const ad::Shape& shape, std::size_t fan_in, std::mt19937_64& rng);

/// Weights Kaiming-normal, biases and norm shifts zero, norm scales one.
void kaiming_init(model::Model& model, std::uint64_t seed);

/// d^-0.5 * min(s^-0.5, s * w^-1.5), step >= 1.
double noam_multiplier(std::size_t step, std::size_t model_dim, std::size_t warmup);
/// The multiplier rescaled so that its peak (at step == warmup) equals base_lr.
double noam_lr(std::size_t step, double base_lr, std::size_t model_dim, std::size_t warmup);

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
        double weight_decay = 0.01);

  /// Decoupled decay p <- p - lr*wd*p, then the bias-corrected Adam step.
  /// Parameters without a gradient are treated as having a zero gradient.
  void step(double lr);
  std::size_t steps() const { return t_; }

  std::vector<ad::NamedArray> state(const std::vector<std::string>& names) const;
  void load_state(const std::vector<ad::NamedArray>& arrays, const std::vector<std::string>& names);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
};

struct Metrics {
  double total = 0.0;
  double activity = 0.0;
  double doa = 0.0;
  double frame_recall = 0.0;
  double median_doa = 0.0;  // radians
  std::size_t frames = 0;

  nlohmann::ordered_json to_json() const;
  static Metrics from_json(const nlohmann::ordered_json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;
  Metrics train;
  std::optional<Metrics> validation;
  std::vector<double> lr;  // one entry per optimizer step
  bool improved = false;
  double seconds = 0.0;  // wall clock, excluded from determinism comparisons

  nlohmann::ordered_json to_json() const;
  static EpochRecord from_json(const nlohmann::ordered_json& j);
};

struct Evaluation {
  Metrics metrics;
  metrics::EvalReport report;
};

/// Eval-mode forward over the whole dataset (no tape), losses averaged per frame.
Evaluation evaluate(model::Model& model, const data::Dataset& dataset, std::size_t batch_size,
                    const loss::LossOptions& options = {});

struct TrainOutcome {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_loss = 0.0;
  bool stopped_early = false;
};

/// Per-batch teacher stack [gamma | phi | theta] built from the batch targets.
Tensor teacher_stack(const data::Batch& batch);

class Trainer {
 public:
  Trainer(model::Model& model, TrainConfig config);

  /// Trains until patience or max_epochs. When `validation` is empty the
  /// training loss selects the best epoch. With a run directory the log,
  /// best.ckpt and last.ckpt (with optimizer state) are written there, and
  /// `resume` continues from last.ckpt. On return the model holds the best weights.
  TrainOutcome fit(const data::Dataset& train, const data::Dataset& validation,
                   const std::filesystem::path& run_dir = {}, bool resume = false);

  std::function<void(const EpochRecord&)> on_epoch;

  double learning_rate(std::size_t step) const;

 private:
  model::Model& model_;
  TrainConfig config_;
  AdamW optimizer_;
  std::vector<std::string> names_;
};

struct FoldReport {
  std::size_t fold = 0;
  std::string variant;
  TrainOutcome outcome;
  metrics::EvalReport report;
};

struct FoldComparison {
  std::string a, b;
  metrics::MannWhitney test;
};

struct FoldsResult {
  std::vector<FoldReport> reports;
  std::vector<FoldComparison> comparisons;  // every pair of variants, pooled DoA errors

  nlohmann::ordered_json to_json() const;
};

/// Cross-validation over `<root>` by stem index modulo `folds`, one model per
/// (variant, fold), then pooled Mann-Whitney tests between variants.
FoldsResult run_folds(const std::filesystem::path& root, std::size_t folds,
                      const std::vector<model::ModelConfig>& variants, const TrainConfig& config,
                      const dsp::StftConfig& stft, const std::filesystem::path& run_dir = {});

}  // namespace adrenaline::train
