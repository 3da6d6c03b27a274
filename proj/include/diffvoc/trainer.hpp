// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-phase optimization: pretraining on the noise-prediction MSE, then
// fine-tuning on the combined objective where a schedule is drawn per step,
// a batch of segments is generated through the differentiable sampler, and
// the spectral loss against ground truth is weighted in. Deterministic for
// a fixed (config, seed, dataset digest); checkpoints carry the optimizer
// moments and the RNG state so resumption is bit-exact.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "diffvoc/audio_data.hpp"
#include "diffvoc/diffusion.hpp"
#include "diffvoc/losses.hpp"
#include "diffvoc/noise_model.hpp"
#include "diffvoc/schedules.hpp"

namespace diffvoc {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

  // clip_norm > 0 rescales the gradient to that global L2 norm first.
  void step(ParamStore& params, std::span<const double> grad,
            const AdamConfig& cfg, double clip_norm = 0.0);

  std::int64_t t() const { return t_; }
  std::vector<ParamStore::Group> to_blobs() const;
  static AdamState from_blobs(const std::vector<ParamStore::Group>& blobs,
                              std::size_t expected_size);

 private:
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

enum class Phase { kPretrain, kFinetune };

struct TrainingConfig {
  Phase phase = Phase::kPretrain;
  std::map<int, double> lambda_by_n{{2, 5e-4}, {3, 5e-4}, {6, 1e-3}};
  std::vector<int> n_modes{3};
  std::map<int, ScheduleRange> ranges_by_n;  // defaults to reference_range
  int batch_size = 16;
  // 0 selects the phase default: 2e-4 for pretraining, 5.8e-5 for
  // fine-tuning.
  double learning_rate = 0.0;
  std::int64_t max_steps = 1000;
  std::int64_t checkpoint_every = 1000;
  std::uint64_t seed = 1;
  // Global-norm clip on the fine-tune path; 0 disables.
  double finetune_clip_norm = 1.0;

  double effective_learning_rate() const;
  const ScheduleRange& range_for(int n) const;
  void validate() const;
  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& j);
};

struct StepRecord {
  std::int64_t step = 0;
  LossBreakdown losses;
  int sampled_n = 0;  // 0 in pretraining
  std::optional<InferenceSchedule> schedule;
  double wall_ms = 0.0;

  nlohmann::json to_json() const;
};

// Shared state the step functions need beyond the predictor.
struct TrainContext {
  FeatureConfig feature;
  MultiResConfig multires;
  std::vector<MelFilterbank> filterbanks;
  AlphaBarCurve curve;

  static TrainContext make(const FeatureConfig& feature,
                           const MultiResConfig& multires,
                           const NoiseSchedule& training_schedule);
};

// Test seam: replaces the predictor network inside a step.
using ItemPredictFn = std::function<ad::Var(
    const ad::Var& x_t, const MelConditioner& mel, double sqrt_alpha_bar)>;

struct StepHooks {
  ItemPredictFn predict_override;
};

// One optimizer step on the batch-mean noise-prediction MSE. Per item:
// draw a continuous level and a noise vector, corrupt, predict, accumulate.
StepRecord pretrain_step(NoisePredictor& predictor,
                         const std::vector<Segment>& batch,
                         const TrainContext& ctx, Rng& rng, AdamState& adam,
                         const AdamConfig& adam_cfg,
                         const StepHooks* hooks = nullptr);

// One optimizer step on the combined objective. The noise-prediction term
// draws fresh levels first (independent of the schedule), then one N and
// one schedule are drawn for the step and every item is generated through
// the differentiable sampler.
StepRecord finetune_step(NoisePredictor& predictor,
                         const std::vector<Segment>& batch,
                         const TrainContext& ctx, const TrainingConfig& cfg,
                         Rng& rng, AdamState& adam, const AdamConfig& adam_cfg,
                         const StepHooks* hooks = nullptr);

struct RunConfig;  // defined in config.hpp

struct RunResult {
  std::filesystem::path final_checkpoint;
  std::vector<StepRecord> records;
};

// Full phase run: batches drawn from the train split, records appended to
// steps.ndjson, checkpoints every checkpoint_every steps plus final.dvck.
// `init_from` seeds fine-tuning from a pretrained checkpoint; `resume`
// restores a mid-run checkpoint (dataset and config digests are verified).
RunResult run_training(const RunConfig& cfg, const Dataset& dataset,
                       const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& init_from =
                           std::nullopt,
                       const std::optional<std::filesystem::path>& resume =
                           std::nullopt);

// ---- numerical verification ----

struct LossEvaluator {
  // Both must be deterministic functions of the parameters.
  std::function<double(const NoisePredictor&)> value;
  std::function<std::vector<double>(const NoisePredictor&)> gradient;
};

// Central-difference check on `sample_count` randomly chosen parameters;
// returns the max relative error. Per-parameter step is
// epsilon * max(1, |p|).
double gradcheck(const LossEvaluator& evaluator, const NoisePredictor& base,
                 double epsilon, int sample_count, Rng& rng);

// The combined objective with a fixed schedule and frozen noise draws;
// suitable for gradcheck.
LossEvaluator make_objective_evaluator(const std::vector<Segment>& batch,
                                       const TrainContext& ctx,
                                       const InferenceSchedule& schedule,
                                       double lambda, std::uint64_t noise_seed);

}  // namespace diffvoc
