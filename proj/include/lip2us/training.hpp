#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lip2us/adam.hpp"
#include "lip2us/config.hpp"
#include "lip2us/dataset.hpp"
#include "lip2us/metrics.hpp"
#include "lip2us/model.hpp"

namespace lip2us {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Seeded shuffle of 0..n-1 cut into floor-sized val/test parts, remainder to
/// train. Fractions must sum to 1 within 1e-9.
Split split_dataset(std::size_t n, const SplitFractions& fractions, std::uint64_t seed);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  double baseline_val_mse = 0;  // per-pixel mean of the training targets
  bool early_stopped = false;
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
  std::optional<MetricsReport> test;
  double wall_seconds = 0;
};

struct TrainResult {
  ModelParams params;
  AdamState adam;
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam on the MSE loss with per-epoch reshuffling, validation after every
/// epoch and patience-based early stopping; returns the best-validation
/// weights. Recording indices in split refer to data.
TrainResult train_model(const RunConfig& config, const Dataset& data, const Split& split,
                        const EpochCallback& on_epoch = {});

/// Mean squared error of the model over the samples, inference mode.
double evaluate_mse(ModelParams& params, const Dataset& data, std::span<const Sample> samples,
                    std::size_t batch_size);

/// MSE of predicting the per-pixel mean training target for every eval frame.
double baseline_mse(const Dataset& data, std::span<const Sample> train, std::span<const Sample> eval);

struct Evaluation {
  MetricsReport metrics;
  std::vector<Frame> predictions;
  std::vector<Frame> targets;
  std::vector<double> attention;  // one factor per predicted frame
};

Evaluation evaluate(ModelParams& params, const Dataset& data, std::span<const Sample> samples,
                    std::size_t batch_size, const ContourOptions& contour);

struct AblationRow {
  std::string variant;  // raw-only, w/o OF, w/o AT, full
  Variant flags;
  MetricsReport test;
  double attention_min = 0;
  double attention_max = 0;
  TrainReport train;
};

std::vector<AblationRow> ablate(const RunConfig& config, const Dataset& data, const Split& split,
                                const EpochCallback& on_epoch = {});

std::string format_ablation_table(const std::vector<AblationRow>& rows);

std::vector<NamedTensor> checkpoint_tensors(const ModelParams& params, const AdamState& adam);
void save_run_checkpoint(const std::filesystem::path& path, const ModelParams& params, const AdamState& adam);
/// Builds the model described by config and loads its weights.
ModelParams load_run_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

// Pipelines behind the CLI subcommands. Each writes report.txt and report.kv
// (plus timing.kv for wall-clock) under out_dir.
TrainReport run_train(RunConfig config, const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});
MetricsReport run_eval(const std::filesystem::path& checkpoint, const std::string& split,
                       const std::filesystem::path& out_dir, const std::vector<std::string>& overrides = {});
std::vector<AblationRow> run_ablate(RunConfig config, const std::filesystem::path& out_dir,
                                    const EpochCallback& on_epoch = {});
/// Writes frame_<center>.png for every clip position of a lip directory.
std::size_t run_predict(const std::filesystem::path& checkpoint, const std::filesystem::path& lip_dir,
                        const std::optional<RoiSpec>& roi, const std::filesystem::path& out_dir);
MetricsReport run_metrics(const std::filesystem::path& pred_dir, const std::filesystem::path& target_dir,
                          const ContourOptions& contour, const std::filesystem::path& out_dir);
std::size_t run_flow(const std::filesystem::path& lip_dir, const std::optional<RoiSpec>& roi, const RunConfig& config,
                     const std::filesystem::path& out_dir, bool write_png);

std::string format_train_report(const TrainReport& report);
std::string train_report_kv(const TrainReport& report);
std::string metrics_kv(const MetricsReport& report, const std::string& prefix);

}  // namespace lip2us
