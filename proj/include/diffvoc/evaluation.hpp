// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Objective metrics, inference-schedule grid search, and the sensitivity
// sweep (mean/std of the L1 mel metric over a schedule grid). Generation
// seeds derive from hash(schedule, clip id), so different models are
// compared under identical noise draws.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffvoc/audio_data.hpp"
#include "diffvoc/diffusion.hpp"
#include "diffvoc/losses.hpp"
#include "diffvoc/noise_model.hpp"
#include "diffvoc/schedules.hpp"

namespace diffvoc {

// Mean squared difference of log-mel spectrograms (conditioner pipeline).
double ls_mse(std::span<const double> x, std::span<const double> x_hat,
              const FeatureConfig& cfg);

// Mean absolute difference of log-mel spectrograms.
double l1_mel(std::span<const double> x, std::span<const double> x_hat,
              const FeatureConfig& cfg);

// Spectral convergence plus L1 log-magnitude, averaged over resolutions.
// This is the evaluation metric, distinct from the training spectral loss.
double mrstft_metric(std::span<const double> x, std::span<const double> x_hat,
                     const MultiResConfig& cfg);

struct ClipMetrics {
  std::string clip_id;
  double ls_mse = 0.0;
  double mrstft = 0.0;
  double l1_mel = 0.0;
};

struct MetricsReport {
  std::string model_id;
  InferenceSchedule schedule;
  int n_steps = 0;
  std::vector<ClipMetrics> per_clip;
  ClipMetrics aggregate;  // arithmetic means, clip_id = "mean"

  nlohmann::json to_json() const;
  std::string to_table() const;  // clip_id \t ls_mse \t mrstft \t l1_mel
};

// Deterministic generation for evaluation: the conditioner is the clip's
// mel features trimmed to a whole number of hops, the seed is
// hash(schedule bits, clip id).
std::vector<double> generate_for_clip(const NoisePredictor& predictor,
                                      const AudioClip& clip,
                                      const InferenceSchedule& schedule,
                                      const FeatureConfig& cfg,
                                      const GenerateOptions& opts = {});

MetricsReport evaluate_model(const NoisePredictor& predictor,
                             const std::vector<const AudioClip*>& clips,
                             const InferenceSchedule& schedule,
                             const FeatureConfig& feature,
                             const MultiResConfig& multires,
                             const std::string& model_id);

struct ScheduleResult {
  InferenceSchedule schedule;
  double mean_l1 = 0.0;
  bool failed = false;
  std::string error;
  ValidationReport validation;
};

struct SweepReport {
  std::string model_id;
  std::string grid_description;
  std::vector<ScheduleResult> per_schedule;
  double mean = 0.0;  // over non-failed schedules
  double std_dev = 0.0;  // population definition
  std::optional<std::size_t> best_index;  // argmin; lexicographic tie-break

  nlohmann::json to_json() const;
  std::string to_table() const;
};

// Generates every (schedule, clip) pair, averages the L1 mel metric per
// schedule, validates each schedule against the training schedule, and
// selects the best. Failed generations are recorded and excluded from the
// mean/std/best.
SweepReport grid_search(const NoisePredictor& predictor,
                        const std::vector<const AudioClip*>& clips,
                        const std::vector<InferenceSchedule>& grid,
                        const FeatureConfig& feature,
                        const NoiseSchedule& training_schedule,
                        const std::string& model_id);

// Same computation; the headline is the mean/std over the whole grid.
SweepReport sensitivity_sweep(const NoisePredictor& predictor,
                              const std::vector<const AudioClip*>& clips,
                              const std::vector<InferenceSchedule>& grid,
                              const FeatureConfig& feature,
                              const NoiseSchedule& training_schedule,
                              const std::string& model_id);

enum class ReportFormat { kJson, kTable };

// Writes report.<json|tsv>; returns the paths written. With plot=true a
// scatter of per-schedule values is written as a PGM image.
std::vector<std::filesystem::path> emit_report(
    const SweepReport& report, const std::filesystem::path& dir,
    const std::vector<ReportFormat>& formats, bool plot = false);
std::vector<std::filesystem::path> emit_report(
    const MetricsReport& report, const std::filesystem::path& dir,
    const std::vector<ReportFormat>& formats, bool plot = false);

// Grayscale PGM; pixels = bands x frames of a conditioner.
void write_spectrogram_pgm(const MelConditioner& mel,
                           const std::filesystem::path& path);

}  // namespace diffvoc
