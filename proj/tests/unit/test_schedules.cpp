// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "diffvoc/errors.hpp"
#include "diffvoc/schedules.hpp"
#include "test_support.hpp"

using namespace diffvoc;
using testsupport::product_curve;

namespace {

// The production training schedule and the searched few-step optima used
// throughout: T=1000 linear from 1e-6 to 1e-2, and the 6/3/2-step schedules.
NoiseSchedule train_schedule() { return linear_schedule(1e-6, 1e-2, 1000); }

const InferenceSchedule kSix{{0.000006, 0.00002, 0.0001, 0.001, 0.02, 0.3}};
const InferenceSchedule kThree{{0.00005, 0.005, 0.3}};
const InferenceSchedule kTwoOriginal{{0.0001, 0.3}};
const InferenceSchedule kTwoCorrected{{0.001, 0.5}};

}  // namespace

TEST_CASE("linear_schedule endpoints and midpoint") {
  const auto s = train_schedule();
  CHECK(s.betas.front() == 1e-6);
  CHECK(s.betas.back() == 1e-2);
  // Affine formula evaluated directly (1-based index 500).
  const double expected = 1e-6 + 499.0 * (1e-2 - 1e-6) / 999.0;
  CHECK(s.betas[499] == doctest::Approx(expected).epsilon(1e-15));
  CHECK(s.betas[499] == doctest::Approx(0.0049954954954954955).epsilon(1e-14));

  const auto two = linear_schedule(0.1, 0.3, 2);
  CHECK(two.betas == std::vector<double>{0.1, 0.3});
}

TEST_CASE("linear_schedule rejects bad configurations") {
  CHECK_THROWS_AS(linear_schedule(0.0, 0.1, 10), ConfigError);
  CHECK_THROWS_AS(linear_schedule(0.2, 0.1, 10), ConfigError);
  CHECK_THROWS_AS(linear_schedule(0.1, 1.0, 10), ConfigError);
  CHECK_THROWS_AS(linear_schedule(1e-6, 1e-2, 1), ConfigError);
}

TEST_CASE("alpha_bar single factor and terminal value") {
  NoiseSchedule one{{0.3}};
  const auto c = alpha_bar(one);
  CHECK(c.values == std::vector<double>{1.0, 0.7});

  // High-precision running-product oracle, frozen value.
  const auto curve = alpha_bar(train_schedule());
  const auto oracle = product_curve(train_schedule().betas);
  const double abar_t = curve.values.back();
  CHECK(std::fabs(abar_t / static_cast<double>(oracle.back()) - 1.0) < 1e-12);
  CHECK(abar_t == doctest::Approx(6.62264393544406142e-3).epsilon(1e-12));
}

TEST_CASE("alpha_bar curve properties over random schedules") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const int t = 2 + static_cast<int>(rng.uniform_int(40));
    std::vector<double> betas(t);
    double lo = rng.uniform(1e-6, 1e-3);
    for (auto& b : betas) {
      lo *= rng.uniform(1.05, 2.5);
      b = std::min(lo, 0.95);
    }
    NoiseSchedule s{betas};
    if ([&] {
          for (int i = 1; i < t; ++i)
            if (betas[i] <= betas[i - 1]) return true;
          return false;
        }())
      continue;  // clamped tail can lose strictness; skip those draws
    const auto curve = alpha_bar(s);
    CHECK(curve.values.front() == 1.0);
    for (int i = 1; i <= t; ++i) {
      CHECK(curve.values[i] < curve.values[i - 1]);
      CHECK(curve.values[i] > 0.0);
      // values[t] / values[t-1] == 1 - beta_t to tight precision.
      const double ratio = curve.values[i] / curve.values[i - 1];
      CHECK(std::fabs(ratio - (1.0 - betas[i - 1])) < 1e-12);
    }
  }
}

TEST_CASE("alpha_bar_infer products") {
  const auto a6 = alpha_bar_infer(kSix);
  CHECK(a6.size() == 7);
  CHECK(a6.front() == 1.0);
  CHECK(a6.back() == doctest::Approx(0.685227652300045856).epsilon(1e-12));

  const auto a2 = alpha_bar_infer(kTwoCorrected);
  CHECK(a2.back() == doctest::Approx(0.4995).epsilon(1e-15));

  const auto a1 = alpha_bar_infer(InferenceSchedule{{0.3}});
  CHECK(a1.back() == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("validator accepts the searched 6-step schedule") {
  const auto report =
      validate_inference_schedule(kSix, train_schedule(), ValidationPolicy{});
  CHECK(report.passed);
  CHECK(report.violations.empty());
}

TEST_CASE("validator accepts the corrected 2-step and 3-step schedules") {
  CHECK(validate_inference_schedule(kTwoCorrected, train_schedule()).passed);
  CHECK(validate_inference_schedule(kThree, train_schedule()).passed);
}

TEST_CASE("validator flags the original 2-step schedule on the ratio rule") {
  const auto report = validate_inference_schedule(kTwoOriginal, train_schedule());
  CHECK_FALSE(report.passed);
  REQUIRE(report.violations.size() == 1);
  CHECK(report.violations[0].rule == Rule::kRatio);
  CHECK(report.violations[0].step == 2);
  CHECK(report.violations[0].measured == doctest::Approx(3000.0));
  CHECK(report.violations[0].bound == 1e3);
}

TEST_CASE("validator reports every violated rule, not just the first") {
  // First beta below the training minimum AND a huge ratio AND a final
  // level above the cap.
  InferenceSchedule bad{{1e-8, 1e-4}};
  auto report = validate_inference_schedule(bad, train_schedule());
  CHECK_FALSE(report.passed);
  std::set<Rule> rules;
  for (const auto& v : report.violations) rules.insert(v.rule);
  CHECK(rules.count(Rule::kRangeMin) == 1);
  CHECK(rules.count(Rule::kRatio) == 1);
  CHECK(rules.count(Rule::kAlphaBarHigh) == 1);
}

TEST_CASE("validator monotone in policy strictness") {
  Rng rng(7);
  const auto train = train_schedule();
  for (int trial = 0; trial < 200; ++trial) {
    InferenceSchedule s = sample_schedule_from_range(reference_range(3), rng);
    ValidationPolicy loose;
    ValidationPolicy tight;
    tight.max_ratio = loose.max_ratio / rng.uniform(1.0, 50.0);
    tight.alpha_bar_n_max = loose.alpha_bar_n_max * rng.uniform(0.5, 1.0);
    const bool loose_pass = validate_inference_schedule(s, train, loose).passed;
    const bool tight_pass = validate_inference_schedule(s, train, tight).passed;
    if (tight_pass) CHECK(loose_pass);
  }
}

TEST_CASE("sampling stays inside per-step intervals and monotone") {
  Rng rng(11);
  for (int n : {2, 3, 6}) {
    const auto range = reference_range(n);
    for (int trial = 0; trial < 500; ++trial) {
      const auto s = sample_schedule_from_range(range, rng);
      REQUIRE(s.steps() == n);
      for (int i = 0; i < n; ++i) {
        CHECK(s.betas_hat[i] >= range.per_step[i].low);
        CHECK(s.betas_hat[i] < range.per_step[i].high);
        if (i > 0) CHECK(s.betas_hat[i] > s.betas_hat[i - 1]);
      }
    }
  }
}

TEST_CASE("non-monotone draws trigger rejection resampling") {
  ScheduleRange degenerate{{{0.1, 0.2}, {0.1, 0.2}}};
  // Scripted source: first attempt yields (0.15, 0.12), second (0.11, 0.19).
  std::vector<double> script{0.5, 0.2, 0.1, 0.9};
  std::size_t pos = 0;
  auto u = [&] { return script.at(pos++); };
  const auto s = sample_schedule_from_range(degenerate, u);
  CHECK(pos == 4);  // two attempts consumed
  CHECK(s.betas_hat[0] == doctest::Approx(0.11));
  CHECK(s.betas_hat[1] == doctest::Approx(0.19));
}

TEST_CASE("sampling errors out after the attempt bound") {
  ScheduleRange degenerate{{{0.1, 0.2}, {0.1, 0.2}}};
  auto always_decreasing = [flip = false]() mutable {
    flip = !flip;
    return flip ? 0.9 : 0.1;
  };
  CHECK_THROWS_AS(
      sample_schedule_from_range(degenerate, always_decreasing, 10),
      SamplingError);
}

TEST_CASE("grid enumeration over a single decade") {
  ScheduleRange r{{{0.1, 1.0}}};
  const auto grid = enumerate_grid(r);
  REQUIRE(grid.size() == 9);
  for (int i = 0; i < 9; ++i)
    CHECK(grid[i].betas_hat[0] == doctest::Approx(0.1 * (i + 1)));
}

TEST_CASE("grid enumeration cartesian product with mantissa subset") {
  ScheduleRange r{{{1e-2, 1e-1}, {1e-1, 1.0}}};
  const auto grid = enumerate_grid(r, {1, 5});
  REQUIRE(grid.size() == 4);
  CHECK(grid[0].betas_hat == std::vector<double>{0.01, 0.1});
  CHECK(grid[1].betas_hat == std::vector<double>{0.01, 0.5});
  CHECK(grid[2].betas_hat == std::vector<double>{0.05, 0.1});
  CHECK(grid[3].betas_hat == std::vector<double>{0.05, 0.5});
}

TEST_CASE("grid enumeration with nothing monotone is a config error") {
  ScheduleRange r{{{1e-1, 1.0}, {1e-1, 1.0}}};
  CHECK_THROWS_AS(enumerate_grid(r, {1}), ConfigError);
}

TEST_CASE("grid output is duplicate-free, deterministic and monotone") {
  const auto range = reference_range(6);
  const auto a = enumerate_grid(range, {1, 4, 7});
  const auto b = enumerate_grid(range, {1, 4, 7});
  REQUIRE(a.size() == b.size());
  std::set<std::string> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].betas_hat == b[i].betas_hat);
    CHECK_NOTHROW(a[i].validate());
    CHECK(seen.insert(a[i].to_string()).second);
  }
}

TEST_CASE("reference ranges match the published search spaces") {
  const auto r2 = reference_range(2);
  CHECK(r2.per_step[0].low == 1e-5);
  CHECK(r2.per_step[0].high == 1e-2);
  CHECK(r2.per_step[1].low == 1e-1);

  const auto r6 = reference_range(6);
  REQUIRE(r6.steps() == 6);
  // The searched 6-step optimum lies inside its decade-per-step ranges.
  for (int i = 0; i < 6; ++i) {
    CHECK(kSix.betas_hat[i] >= r6.per_step[i].low);
    CHECK(kSix.betas_hat[i] < r6.per_step[i].high);
  }
}

TEST_CASE("schedule JSON round-trips exactly") {
  const auto j = to_json(kSix);
  const auto back = inference_schedule_from_json(
      nlohmann::json::parse(j.dump()));
  CHECK(back.betas_hat == kSix.betas_hat);

  nlohmann::json lin{{"type", "linear"},
                     {"beta_min", 1e-6},
                     {"beta_max", 1e-2},
                     {"T", 1000}};
  const auto s = noise_schedule_from_json(lin);
  CHECK(s.betas == train_schedule().betas);

  const auto rj = to_json(reference_range(3));
  const auto rr = schedule_range_from_json(nlohmann::json::parse(rj.dump()));
  CHECK(rr.per_step[2].low == 1e-1);
}
