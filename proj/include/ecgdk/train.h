#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "ecgdk/metrics.h"
#include "ecgdk/mmd.h"
#include "ecgdk/model.h"
#include "ecgdk/segment_io.h"

namespace ecgdk {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t max_epochs = 50;
  double base_lr = 0.001;  // peak of the Noam schedule
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  std::size_t warmup_steps = 4000;
  std::size_t early_stop_patience = 7;
  std::uint64_t seed = 42;
  MmdConfig mmd;
  std::size_t jobs = 1;  // threads for validation forwards; results do not depend on it

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);

// base_lr * min(sqrt(warmup / step), step / warmup): the Noam curve
// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5) rescaled so that its peak at step == warmup is
// base_lr. Requires step >= 1.
double noam_lr(std::size_t step, std::size_t d_model, std::size_t warmup, double base_lr);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

// One Adam update with bias correction. Decoupled weight decay theta -= lr * wd * theta is applied
// first. Parameters without a gradient buffer are treated as having zero gradient.
void adam_step(std::span<nn::NamedParam> params, AdamState& state, double lr, double weight_decay, double beta1,
               double beta2, double eps);

struct Batch {
  nn::Tensor ecg;    // [b, 1, 1000]
  nn::Tensor feats;  // [b, 1, 7]; undefined when not requested
  std::vector<int> labels;
};

// Labels of unlabeled segments are -1. Throws when features are requested but missing.
Batch make_batch(std::span<const Example* const> examples, bool with_features);

// Softmax class probabilities, row-major [n, classes], computed in fixed chunks of 32 so the
// numbers do not depend on `jobs`.
std::vector<double> predict_proba(const Model& model, std::span<const Example> examples, std::size_t jobs = 1);

// Drops unusable segments (counted in the report), then argmax metrics and macro one-vs-rest AUC.
MetricsReport evaluate(const Model& model, std::span<const Example> test_set, std::size_t jobs = 1);

struct TrainLogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double task_loss = 0.0;
  std::optional<double> mmd;  // absent when the step had no MMD term
  double total_loss = 0.0;
  std::optional<double> val_f1_macro;  // on the last step of each epoch
};

void write_train_log_csv(const std::filesystem::path& path, std::span<const TrainLogRow> rows);

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_task_loss = 0.0;
  double val_f1_macro = 0.0;
  bool improved = false;
};

struct TrainResult {
  Model model;  // parameters of the best validation epoch
  std::vector<TrainLogRow> log;
  std::vector<double> val_f1_per_epoch;
  std::size_t best_epoch = 0;
  double best_val_f1 = 0.0;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  std::size_t unusable_train = 0;
  std::size_t unusable_val = 0;
};

// Mini-batch training with Adam and the Noam schedule; loss = cross-entropy + lambda * MMD^2 on
// the fused embeddings. With a non-empty `target_unlabeled`, each step pairs the labeled batch
// with an equally sized random target batch. Otherwise the batch's first domain is paired with
// the rows of all other domains (equal counts, in batch order), and steps whose batch holds a
// single domain carry no MMD term. Unusable segments are skipped. Stops after
// `early_stop_patience` epochs without a validation F1-macro improvement.
TrainResult train(std::span<const Example> train_set, std::span<const Example> val_set,
                  std::span<const Example> target_unlabeled, const TrainConfig& cfg, const ModelConfig& model_cfg,
                  const std::function<void(const EpochSummary&)>& on_epoch = {});

}  // namespace ecgdk
