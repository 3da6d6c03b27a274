// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffvoc/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "diffvoc/errors.hpp"

namespace diffvoc {

namespace {

void check_open_unit_increasing(const std::vector<double>& v,
                                const char* what) {
  if (v.empty()) throw ConfigError(std::string(what) + ": empty schedule");
  double prev = 0.0;
  for (double b : v) {
    if (!(b > 0.0 && b < 1.0))
      throw ConfigError(std::string(what) + ": betas must lie in (0,1)");
    if (!(b > prev))
      throw ConfigError(std::string(what) + ": betas must strictly increase");
    prev = b;
  }
}

}  // namespace

void NoiseSchedule::validate() const {
  check_open_unit_increasing(betas, "NoiseSchedule");
}

NoiseSchedule linear_schedule(double beta_min, double beta_max, int steps) {
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0))
    throw ConfigError("linear_schedule: need 0 < beta_min < beta_max < 1");
  if (steps < 2) throw ConfigError("linear_schedule: need T >= 2");
  NoiseSchedule s;
  s.betas.resize(steps);
  const double slope = (beta_max - beta_min) / (steps - 1);
  for (int t = 0; t < steps; ++t) s.betas[t] = beta_min + t * slope;
  s.betas.front() = beta_min;
  s.betas.back() = beta_max;
  return s;
}

AlphaBarCurve alpha_bar(const NoiseSchedule& schedule) {
  AlphaBarCurve c;
  c.values.reserve(schedule.betas.size() + 1);
  double acc = 1.0;
  c.values.push_back(acc);
  for (double b : schedule.betas) {
    acc *= (1.0 - b);
    c.values.push_back(acc);
  }
  return c;
}

void InferenceSchedule::validate() const {
  check_open_unit_increasing(betas_hat, "InferenceSchedule");
}

std::string InferenceSchedule::to_string() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < betas_hat.size(); ++i) {
    if (i) os << ", ";
    os << betas_hat[i];
  }
  os << "]";
  return os.str();
}

std::uint64_t InferenceSchedule::digest() const {
  return fnv1a64(std::span<const double>(betas_hat));
}

std::vector<double> alpha_bar_infer(const InferenceSchedule& infer) {
  std::vector<double> out;
  out.reserve(infer.betas_hat.size() + 1);
  double acc = 1.0;
  out.push_back(acc);
  for (double b : infer.betas_hat) {
    acc *= (1.0 - b);
    out.push_back(acc);
  }
  return out;
}

void ScheduleRange::validate() const {
  if (per_step.empty()) throw ConfigError("ScheduleRange: empty");
  double prev_low = 0.0;
  for (const auto& iv : per_step) {
    if (!(iv.low > 0.0 && iv.low < iv.high && iv.high <= 1.0))
      throw ConfigError("ScheduleRange: need 0 < low < high <= 1 per step");
    if (iv.low < prev_low)
      throw ConfigError("ScheduleRange: lows must be nondecreasing");
    prev_low = iv.low;
  }
}

ScheduleRange reference_range(int n_steps) {
  switch (n_steps) {
    case 2:
      return {{{1e-5, 1e-2}, {1e-1, 1.0}}};
    case 3:
      return {{{1e-6, 1e-4}, {1e-4, 1e-2}, {1e-1, 1.0}}};
    case 6: {
      ScheduleRange r;
      for (int n = 0; n < 6; ++n)
        r.per_step.push_back({std::pow(10.0, n - 6.0), std::pow(10.0, n - 5.0)});
      return r;
    }
    default:
      throw ConfigError("reference_range: defined for N in {2, 3, 6}");
  }
}

void ValidationPolicy::validate() const {
  if (!(max_ratio > 1.0)) throw ConfigError("ValidationPolicy: max_ratio > 1");
  if (!(alpha_bar_n_max > 0.0 && alpha_bar_n_max < 1.0))
    throw ConfigError("ValidationPolicy: alpha_bar_n_max in (0,1)");
  if (alpha_bar_n_min &&
      !(*alpha_bar_n_min > 0.0 && *alpha_bar_n_min < alpha_bar_n_max))
    throw ConfigError("ValidationPolicy: need 0 < min < max");
}

const char* rule_name(Rule r) {
  switch (r) {
    case Rule::kRangeMin: return "range_min";
    case Rule::kMonotone: return "monotone";
    case Rule::kRangeMax: return "range_max";
    case Rule::kRatio: return "ratio";
    case Rule::kAlphaBarHigh: return "alpha_bar_final_high";
    case Rule::kAlphaBarLow: return "alpha_bar_final_low";
  }
  return "unknown";
}

std::string ValidationReport::summary() const {
  if (passed) return "passed";
  std::ostringstream os;
  os << violations.size() << " violation(s):";
  for (const auto& v : violations) {
    os << " [" << rule_name(v.rule);
    if (v.step) os << " @step " << *v.step;
    os << " measured " << v.measured << " bound " << v.bound << "]";
  }
  return os.str();
}

ValidationReport validate_inference_schedule(const InferenceSchedule& infer,
                                             const NoiseSchedule& train,
                                             const ValidationPolicy& policy) {
  infer.validate();
  train.validate();
  policy.validate();

  ValidationReport report;
  const auto& bh = infer.betas_hat;
  const int n = infer.steps();

  // (a) range and monotonicity.
  if (bh.front() < train.betas.front())
    report.violations.push_back(
        {Rule::kRangeMin, 1, bh.front(), train.betas.front()});
  for (int i = 1; i < n; ++i) {
    if (!(bh[i] > bh[i - 1]))
      report.violations.push_back({Rule::kMonotone, i + 1, bh[i], bh[i - 1]});
  }
  if (!(bh.back() < 1.0))
    report.violations.push_back({Rule::kRangeMax, n, bh.back(), 1.0});

  // (b) adjacent-step ratio; no predecessor for the first step.
  for (int i = 1; i < n; ++i) {
    const double ratio = bh[i] / bh[i - 1];
    if (ratio > policy.max_ratio)
      report.violations.push_back({Rule::kRatio, i + 1, ratio, policy.max_ratio});
  }

  // (c) final noise level inside [alpha_bar_T, alpha_bar_n_max].
  const double abar_final = alpha_bar_infer(infer).back();
  const double abar_train_final = alpha_bar(train).values.back();
  const double low_bound = policy.alpha_bar_n_min.value_or(abar_train_final);
  if (abar_final > policy.alpha_bar_n_max)
    report.violations.push_back(
        {Rule::kAlphaBarHigh, std::nullopt, abar_final, policy.alpha_bar_n_max});
  if (abar_final < low_bound)
    report.violations.push_back(
        {Rule::kAlphaBarLow, std::nullopt, abar_final, low_bound});

  report.passed = report.violations.empty();
  return report;
}

InferenceSchedule sample_schedule_from_range(
    const ScheduleRange& range, const std::function<double()>& unit_uniform,
    int max_attempts) {
  range.validate();
  if (max_attempts <= 0)
    throw ContractError("sample_schedule_from_range: attempts must be positive");

  std::vector<double> draw(range.per_step.size());
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    bool monotone = true;
    double prev = 0.0;
    for (std::size_t i = 0; i < draw.size(); ++i) {
      const auto& iv = range.per_step[i];
      draw[i] = iv.low + (iv.high - iv.low) * unit_uniform();
      if (!(draw[i] > prev)) monotone = false;
      prev = draw[i];
    }
    if (monotone) return InferenceSchedule{draw};
  }
  throw SamplingError(
      "sample_schedule_from_range: no strictly increasing draw within " +
      std::to_string(max_attempts) + " attempts (overlapping ranges?)");
}

InferenceSchedule sample_schedule_from_range(const ScheduleRange& range,
                                             Rng& rng, int max_attempts) {
  return sample_schedule_from_range(
      range, [&rng] { return rng.uniform(); }, max_attempts);
}

namespace {

int decade_of(double x, const char* what) {
  const double l = std::log10(x);
  const int d = static_cast<int>(std::lround(l));
  if (std::fabs(std::pow(10.0, d) - x) > 1e-9 * x)
    throw ConfigError(std::string(what) +
                      ": range bounds must be exact powers of ten");
  return d;
}

}  // namespace

std::vector<InferenceSchedule> enumerate_grid(
    const ScheduleRange& range, const std::vector<double>& mantissas) {
  range.validate();
  std::set<double> ms(mantissas.begin(), mantissas.end());
  for (double m : ms)
    if (!(m >= 1.0 && m < 10.0))
      throw ConfigError("enumerate_grid: mantissas must lie in [1, 10)");
  if (ms.empty()) throw ConfigError("enumerate_grid: no mantissas");

  // Per-step candidate values, ascending.
  std::vector<std::vector<double>> candidates;
  for (const auto& iv : range.per_step) {
    const int d_lo = decade_of(iv.low, "enumerate_grid");
    const int d_hi = decade_of(iv.high, "enumerate_grid");
    if (d_hi <= d_lo)
      throw ConfigError("enumerate_grid: each range must span >= 1 decade");
    std::vector<double> vals;
    for (int d = d_lo; d < d_hi; ++d)
      for (double m : ms) vals.push_back(m * std::pow(10.0, d));
    candidates.push_back(std::move(vals));
  }

  std::vector<InferenceSchedule> out;
  std::vector<double> current(candidates.size());
  // Nested iteration, first step slowest: lexicographic output order.
  std::function<void(std::size_t)> recurse = [&](std::size_t step) {
    if (step == candidates.size()) {
      out.push_back(InferenceSchedule{current});
      return;
    }
    for (double v : candidates[step]) {
      if (step > 0 && !(v > current[step - 1])) continue;
      current[step] = v;
      recurse(step + 1);
    }
  };
  recurse(0);

  if (out.empty())
    throw ConfigError(
        "enumerate_grid: no strictly increasing schedule in the grid");
  return out;
}

nlohmann::json to_json(const NoiseSchedule& s) {
  return {{"type", "explicit"}, {"betas", s.betas}};
}

nlohmann::json to_json(const InferenceSchedule& s) {
  return {{"betas_hat", s.betas_hat}};
}

nlohmann::json to_json(const ScheduleRange& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& iv : r.per_step) steps.push_back({iv.low, iv.high});
  return {{"per_step", steps}};
}

NoiseSchedule noise_schedule_from_json(const nlohmann::json& j) {
  const std::string type = j.value("type", "linear");
  NoiseSchedule s;
  if (type == "linear") {
    s = linear_schedule(j.at("beta_min").get<double>(),
                        j.at("beta_max").get<double>(), j.at("T").get<int>());
  } else if (type == "explicit") {
    s.betas = j.at("betas").get<std::vector<double>>();
  } else {
    throw ConfigError("noise_schedule_from_json: unknown type " + type);
  }
  s.validate();
  return s;
}

InferenceSchedule inference_schedule_from_json(const nlohmann::json& j) {
  InferenceSchedule s;
  s.betas_hat = j.at("betas_hat").get<std::vector<double>>();
  s.validate();
  return s;
}

ScheduleRange schedule_range_from_json(const nlohmann::json& j) {
  ScheduleRange r;
  for (const auto& iv : j.at("per_step"))
    r.per_step.push_back({iv.at(0).get<double>(), iv.at(1).get<double>()});
  r.validate();
  return r;
}

}  // namespace diffvoc
