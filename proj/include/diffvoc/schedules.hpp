// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Noise-schedule algebra: training schedules, few-step inference schedules,
// noise-level curves, validity rules, range sampling, and grid enumeration.
// All arithmetic is double precision; curves of near-unity factors stay
// stable at the lengths used here.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffvoc/rng.hpp"

namespace diffvoc {

// Training noise schedule: strictly increasing betas in (0,1).
struct NoiseSchedule {
  std::vector<double> betas;

  int steps() const { return static_cast<int>(betas.size()); }
  void validate() const;
};

// betas[t] = beta_min + (t-1)*(beta_max-beta_min)/(T-1), t = 1..T.
NoiseSchedule linear_schedule(double beta_min, double beta_max, int steps);

// values[0] = 1, values[t] = prod_{s<=t} (1 - beta_s); strictly decreasing.
struct AlphaBarCurve {
  std::vector<double> values;  // length T+1

  int steps() const { return static_cast<int>(values.size()) - 1; }
};

AlphaBarCurve alpha_bar(const NoiseSchedule& schedule);

// Few-step reverse schedule: strictly increasing betas_hat in (0,1).
struct InferenceSchedule {
  std::vector<double> betas_hat;

  int steps() const { return static_cast<int>(betas_hat.size()); }
  void validate() const;
  std::string to_string() const;
  std::uint64_t digest() const;
};

// Inference noise-level curve, length N+1 with leading 1.
std::vector<double> alpha_bar_infer(const InferenceSchedule& infer);

// Per-step half-open sampling intervals [low, high), ordered by step.
struct ScheduleRange {
  struct Interval {
    double low;
    double high;
  };
  std::vector<Interval> per_step;

  int steps() const { return static_cast<int>(per_step.size()); }
  void validate() const;
};

// The published search ranges for 2-, 3- and 6-step generation. The 6-step
// range assigns one decade per step from 1e-6 up to 1e-1.
ScheduleRange reference_range(int n_steps);

struct ValidationPolicy {
  double max_ratio = 1e3;
  double alpha_bar_n_max = 0.7;
  // Lower bound for the final inference noise level; defaults to the
  // training curve's terminal value when unset.
  std::optional<double> alpha_bar_n_min;

  void validate() const;
};

enum class Rule {
  kRangeMin,        // beta_hat_1 must be >= beta_1
  kMonotone,        // strictly increasing
  kRangeMax,        // beta_hat_N < 1
  kRatio,           // beta_hat_n / beta_hat_{n-1} <= max_ratio
  kAlphaBarHigh,    // final level <= alpha_bar_n_max
  kAlphaBarLow,     // final level >= alpha_bar_n_min
};

const char* rule_name(Rule r);

struct Violation {
  Rule rule;
  std::optional<int> step;  // 1-based step index where applicable
  double measured;
  double bound;
};

struct ValidationReport {
  bool passed = false;
  std::vector<Violation> violations;

  std::string summary() const;
};

// Checks, in order: (a) range and monotonicity, (b) adjacent-step ratio,
// (c) final noise level within [alpha_bar_T, alpha_bar_n_max]. Every
// violated rule is reported; violations are data, not errors.
ValidationReport validate_inference_schedule(const InferenceSchedule& infer,
                                             const NoiseSchedule& train,
                                             const ValidationPolicy& policy = {});

// Uniform draw per step; rejection-resamples a non-monotone vector up to
// max_attempts before raising SamplingError.
InferenceSchedule sample_schedule_from_range(const ScheduleRange& range,
                                             Rng& rng, int max_attempts = 100);
// Deterministic variant over a scripted unit-uniform source (tests).
InferenceSchedule sample_schedule_from_range(
    const ScheduleRange& range, const std::function<double()>& unit_uniform,
    int max_attempts = 100);

// Enumerates {m * 10^d} over every decade of each step's range, filtered to
// strictly increasing schedules, in lexicographic order. Ranges must span
// whole decades. An empty result is a configuration error.
std::vector<InferenceSchedule> enumerate_grid(
    const ScheduleRange& range,
    const std::vector<double>& mantissas = {1, 2, 3, 4, 5, 6, 7, 8, 9});

// ---- serialization ----
// Training schedules: {"type":"linear","beta_min":..,"beta_max":..,"T":..}
// or {"type":"explicit","betas":[..]}. Inference schedules:
// {"betas_hat":[..]}. Decimal round-trip of explicit lists is exact.
nlohmann::json to_json(const NoiseSchedule& s);
nlohmann::json to_json(const InferenceSchedule& s);
nlohmann::json to_json(const ScheduleRange& r);
NoiseSchedule noise_schedule_from_json(const nlohmann::json& j);
InferenceSchedule inference_schedule_from_json(const nlohmann::json& j);
ScheduleRange schedule_range_from_json(const nlohmann::json& j);

}  // namespace diffvoc
