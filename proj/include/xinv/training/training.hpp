#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "xinv/datapipe/balanced_stream.hpp"
#include "xinv/datapipe/manifest.hpp"
#include "xinv/eval/eval.hpp"
#include "xinv/model/model.hpp"
#include "xinv/objectives/objectives.hpp"

namespace xinv {

enum class Mode { Baseline, GradReversal, Alternating };

std::string_view mode_name(Mode mode);
/// Throws ConfigError for unknown names.
Mode parse_mode(std::string_view name);

struct TrainConfig {
  double lambda = 1.0;
  Mode mode = Mode::GradReversal;
  int d_steps = 1;  // discriminator updates per extractor update (alternating only)
  int epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 7;
  std::string held_out;  // informational; the caller filters the data
  /// Alternating mode only: update (θ_e, θ_c) before the discriminator steps
  /// on each batch instead of after them.
  bool defer_discriminator = false;

  void validate() const;
  nlohmann::json to_json() const;
};

struct EpochStats {
  int epoch = 0;
  double loss_p = 0.0;
  std::optional<double> loss_s;
  std::optional<double> disc_acc;
  double train_acc = 0.0;

  nlohmann::json to_json() const;
};

struct RunRecord {
  TrainConfig config;
  std::vector<EpochStats> epochs;
  std::filesystem::path checkpoint;

  /// One JSON object per epoch, newline-terminated.
  std::string to_jsonl() const;
};

/// Tensors of one minibatch.
struct MiniBatch {
  Tensor images;   // N×1×H×W
  Tensor labels;   // N×1
  Tensor sources;  // N×S one-hot
  std::vector<std::size_t> source_index;
};

MiniBatch make_batch(const Dataset& data, const Batch& indices);

/// Losses and accuracies observed while taking one update.
struct StepStats {
  double loss_p = 0.0;
  double loss_s = 0.0;
  std::size_t disease_correct = 0;
  std::size_t source_correct = 0;
  std::size_t examples = 0;
};

/**
 * Owns the parameters and optimizer state of one run and applies the update
 * rule of the configured mode to minibatches.
 */
class Trainer {
 public:
  /// `sources` is the number of training sources (discriminator outputs).
  Trainer(TrainConfig config, std::size_t sources);
  Trainer(TrainConfig config, ModelParams initial);

  StepStats step(const MiniBatch& batch);

  // The two phases of an alternating step. Each updates only its own
  // parameter group and leaves all gradients zeroed.

  /// One update of θ_d on L_s with θ_e frozen; returns L_s.
  double discriminator_update(const MiniBatch& batch, StepStats* stats = nullptr);
  /// One update of (θ_e, θ_c) on L_p − λL_s with θ_d frozen.
  void extractor_update(const MiniBatch& batch, StepStats& stats);

  const ModelParams& params() const noexcept { return params_; }
  const TrainConfig& config() const noexcept { return config_; }

 private:
  StepStats step_baseline(const MiniBatch& batch);
  StepStats step_grad_reversal(const MiniBatch& batch);
  StepStats step_alternating(const MiniBatch& batch);

  TrainConfig config_;
  ModelParams params_;
  Sgd optimizer_;
};

struct TrainResult {
  ModelParams params;
  RunRecord record;
};

/// Called after every epoch; useful for progress logging.
using EpochCallback = std::function<void(const EpochStats&)>;

/// Full training run on the balanced multi-source stream. Deterministic
/// given the configuration and data.
TrainResult train(const TrainConfig& config, const Dataset& data,
                  const EpochCallback& on_epoch = {});

struct LooConfig {
  TrainConfig train;              // mode = proposed method
  bool include_baseline = true;   // also train a baseline on every fold
  std::vector<std::string> held_out;  // empty: every source in turn
  int jobs = 1;
  std::optional<std::filesystem::path> out_dir;  // checkpoints and run records
};

/// One trained fold, kept for later inspection.
struct FoldRun {
  std::string held_out;
  Mode mode;
  TrainResult result;
};

struct LooResult {
  EvalReport report;
  std::vector<FoldRun> runs;
};

/**
 * Leave-one-source-out protocol: for each held-out source, train on the
 * train split of the remaining sources and score (a) their test split
 * (in-source) and (b) the held-out source's test split (out-of-source).
 * Folds run in parallel when jobs > 1; results are ordered by fold.
 */
LooResult run_leave_one_out(const LooConfig& config, const Manifest& train_manifest,
                            const Manifest& test_manifest);

}  // namespace xinv
