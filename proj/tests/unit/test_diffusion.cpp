// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffvoc/diffusion.hpp"
#include "diffvoc/errors.hpp"
#include "test_support.hpp"

using namespace diffvoc;
namespace ad = diffvoc::ad;
using testsupport::random_vector;
using testsupport::rel_err;

namespace {

MelConditioner random_mel(int frames, int n_mels, unsigned seed) {
  MelConditioner mel;
  mel.frames = frames;
  mel.n_mels = n_mels;
  mel.data = random_vector(static_cast<std::size_t>(frames) * n_mels, seed,
                           -3.0, 1.0);
  return mel;
}

}  // namespace

TEST_CASE("forward_sample closed forms") {
  std::vector<double> zeros(16, 0.0);
  std::vector<double> eps = random_vector(16, 1);
  const auto noisy = forward_sample(zeros, 0.36, eps);
  for (std::size_t i = 0; i < noisy.size(); ++i)
    CHECK(noisy[i] == doctest::Approx(0.8 * eps[i]));

  // alpha_bar = 1: no corruption.
  std::vector<double> x0 = random_vector(16, 2);
  const auto clean = forward_sample(x0, 1.0, eps);
  CHECK(clean == x0);

  // Deterministic branch: ones at alpha_bar 0.25 with zero noise -> 0.5.
  std::vector<double> ones(16, 1.0);
  const auto half = forward_sample(ones, 0.25, zeros);
  for (double v : half) CHECK(v == 0.5);

  CHECK_THROWS_AS(forward_sample(x0, 0.5, std::vector<double>(3, 0.0)),
                  ContractError);
}

TEST_CASE("forward_sample statistics at alpha_bar 0.5") {
  Rng rng(271);
  const int dim = 32;
  const auto x0 = random_vector(dim, 3, -0.8, 0.8);
  const int draws = 100000;
  std::vector<double> mean(dim, 0.0), m2(dim, 0.0);
  std::vector<double> eps(dim);
  for (int d = 0; d < draws; ++d) {
    rng.fill_normal(eps);
    const auto x = forward_sample(x0, 0.5, eps);
    for (int i = 0; i < dim; ++i) {
      mean[i] += x[i];
      m2[i] += x[i] * x[i];
    }
  }
  const double root_half = std::sqrt(0.5);
  double var_pool = 0.0;
  for (int i = 0; i < dim; ++i) {
    mean[i] /= draws;
    const double var = m2[i] / draws - mean[i] * mean[i];
    var_pool += var;
    // Mean within 1% of sqrt(0.5) x0, scale-relative to sqrt(1 - abar).
    CHECK(std::fabs(mean[i] - root_half * x0[i]) < 0.01 * root_half);
  }
  var_pool /= dim;
  CHECK(std::fabs(var_pool - 0.5) < 0.02 * 0.5);
}

TEST_CASE("continuous level bounds") {
  NoiseSchedule one{{0.3}};
  const auto curve = alpha_bar(one);
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    const auto draw = sample_continuous_level(curve, rng);
    CHECK(draw.sqrt_alpha_bar >= std::sqrt(0.7));
    CHECK(draw.sqrt_alpha_bar <= 1.0);
    CHECK(draw.sqrt_one_minus ==
          doctest::Approx(std::sqrt(1.0 - draw.sqrt_alpha_bar *
                                              draw.sqrt_alpha_bar)));
  }

  const auto train = linear_schedule(1e-6, 1e-2, 1000);
  const auto full = alpha_bar(train);
  const double lo = std::sqrt(full.values.back());
  Rng rng2(5);
  for (int i = 0; i < 2000; ++i) {
    const auto draw = sample_continuous_level(full, rng2);
    CHECK(draw.sqrt_alpha_bar >= lo);
    CHECK(draw.sqrt_alpha_bar <= 1.0);
  }
}

TEST_CASE("continuous level picks segments uniformly") {
  // T=2: each segment should be hit with frequency 0.5 +- 0.002 over 1e6
  // draws (fixed seed).
  NoiseSchedule two{{0.2, 0.4}};
  const auto curve = alpha_bar(two);
  const double boundary = std::sqrt(curve.values[1]);
  Rng rng(777);
  int first = 0;
  const int draws = 1000000;
  for (int i = 0; i < draws; ++i) {
    const auto draw = sample_continuous_level(curve, rng);
    if (draw.sqrt_alpha_bar >= boundary) ++first;
  }
  CHECK(std::fabs(static_cast<double>(first) / draws - 0.5) < 0.002);
}

TEST_CASE("reverse_step inverts forward_sample exactly") {
  Rng rng(6);
  std::vector<double> z(24, 0.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto x0 = random_vector(24, 1000 + trial, -1.0, 1.0);
    const double beta = rng.uniform(1e-6, 0.999);
    const double abar = 1.0 - beta;  // single step from abar_prev = 1
    std::vector<double> eps(24);
    rng.fill_normal(eps);
    const auto x1 = forward_sample(x0, abar, eps);
    const auto rec = reverse_step(std::span<const double>(x1),
                                  std::span<const double>(eps), beta, abar,
                                  1.0, z, SigmaMode::kPosterior, false);
    for (int i = 0; i < 24; ++i)
      CHECK(std::fabs(rec[i] - x0[i]) < 1e-12);
  }
}

TEST_CASE("reverse_step closed-form coefficients at beta 0.5") {
  // With abar_prev = 1 and beta 0.5: mu = sqrt(2) x - eps_hat.
  const auto x = random_vector(8, 7);
  const auto eps_hat = random_vector(8, 8);
  std::vector<double> z(8, 0.0);
  const auto mu = reverse_step(std::span<const double>(x),
                               std::span<const double>(eps_hat), 0.5, 0.5, 1.0,
                               z, SigmaMode::kPosterior, false);
  for (int i = 0; i < 8; ++i)
    CHECK(mu[i] == doctest::Approx(std::sqrt(2.0) * x[i] - eps_hat[i])
                       .epsilon(1e-12));

  // Zero inputs stay zero.
  std::vector<double> zeros(8, 0.0);
  const auto out = reverse_step(std::span<const double>(zeros),
                                std::span<const double>(zeros), 0.5, 0.5, 1.0,
                                z, SigmaMode::kPosterior, false);
  for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("reverse_step validates the abar relation") {
  const auto x = random_vector(8, 9);
  std::vector<double> z(8, 0.0);
  CHECK_THROWS_AS(reverse_step(std::span<const double>(x),
                               std::span<const double>(x), 0.5, 0.7, 1.0, z,
                               SigmaMode::kPosterior, false),
                  ContractError);
}

TEST_CASE("sigma modes differ only through the noise scale") {
  const auto x = random_vector(16, 10);
  const auto eps_hat = random_vector(16, 11);
  std::vector<double> z(16, 1.0);
  const double beta = 0.2, abar_prev = 0.9, abar = 0.9 * 0.8;
  const auto post = reverse_step(std::span<const double>(x),
                                 std::span<const double>(eps_hat), beta, abar,
                                 abar_prev, z, SigmaMode::kPosterior, true);
  const auto bmode = reverse_step(std::span<const double>(x),
                                  std::span<const double>(eps_hat), beta, abar,
                                  abar_prev, z, SigmaMode::kBeta, true);
  const double sigma_post = std::sqrt((1.0 - abar_prev) / (1.0 - abar) * beta);
  const double sigma_beta = std::sqrt(beta);
  for (int i = 0; i < 16; ++i)
    CHECK(bmode[i] - post[i] ==
          doctest::Approx(sigma_beta - sigma_post).epsilon(1e-12));
}

TEST_CASE("one-step generation with an oracle predictor recovers x0") {
  // Rig the chain so its Gaussian start equals a known corruption of x0;
  // the oracle returns the exact eps, so the single no-noise step must
  // reproduce x0 to machine precision.
  const int length = 64;
  const auto x0 = random_vector(length, 12, -0.9, 0.9);
  InferenceSchedule one{{0.3}};
  const double abar = 0.7;

  const std::uint64_t seed = 2718;
  Rng peek(seed);
  std::vector<double> start(length);
  peek.fill_normal(start);  // what generate_core will draw

  std::vector<double> eps(length);
  for (int i = 0; i < length; ++i)
    eps[i] = (start[i] - std::sqrt(abar) * x0[i]) / std::sqrt(1.0 - abar);

  PredictFn oracle = [&eps](const ad::Var&, double) {
    return ad::Var::constant(eps);
  };
  Rng rng(seed);
  const auto out = generate_core(oracle, length, one, rng, {}).value();
  for (int i = 0; i < length; ++i) CHECK(std::fabs(out[i] - x0[i]) < 1e-12);
}

TEST_CASE("generate output length and determinism") {
  const auto cfg = NetworkConfig::desk();
  const auto p = NoisePredictor::init(cfg, 13);
  const auto mel = random_mel(16, 16, 14);
  InferenceSchedule sched{{0.001, 0.01, 0.3}};

  Rng a(99), b(99), c(100);
  const auto out1 = generate(p, mel, sched, a);
  const auto out2 = generate(p, mel, sched, b);
  const auto out3 = generate(p, mel, sched, c);
  CHECK(out1.size() == static_cast<std::size_t>(16 * cfg.hop()));
  CHECK(out1 == out2);  // bit-identical for identical seeds
  CHECK(out1 != out3);
}

TEST_CASE("differentiable flag changes bookkeeping, not samples") {
  const auto cfg = NetworkConfig::desk();
  const auto p = NoisePredictor::init(cfg, 15);
  const auto mel = random_mel(8, 16, 16);
  InferenceSchedule sched{{0.01, 0.4}};

  GenerateOptions plain;
  GenerateOptions diff;
  diff.differentiable = true;
  Rng a(55), b(55);
  const auto out_plain = generate(p, mel, sched, a, plain);
  const auto out_diff = generate(p, mel, sched, b, diff);
  CHECK(out_plain == out_diff);
}

TEST_CASE("unrolled generation gradients match finite differences") {
  const auto cfg = NetworkConfig::desk();
  auto p = NoisePredictor::init(cfg, 17);
  const auto mel = random_mel(4, 16, 18);
  const auto target = random_vector(4 * 8, 19, -0.5, 0.5);

  for (const auto& betas :
       {std::vector<double>{0.3}, std::vector<double>{0.01, 0.4},
        std::vector<double>{0.001, 0.02, 0.5}}) {
    InferenceSchedule sched{betas};
    const std::uint64_t seed = 31415;

    auto loss_value = [&](const NoisePredictor& q) {
      PredictorGraph g(q, false);
      Rng rng(seed);
      GenerateOptions opts;
      ad::Var x = generate_ad(g, q.config, mel, sched, rng, opts);
      return ad::mean(ad::square(ad::sub(x, ad::Var::constant(target))))
          .item();
    };

    PredictorGraph g(p, true);
    Rng rng(seed);
    GenerateOptions opts;
    opts.differentiable = true;
    ad::Var x = generate_ad(g, p.config, mel, sched, rng, opts);
    ad::Var loss = ad::mean(ad::square(ad::sub(x, ad::Var::constant(target))));
    ad::backward(loss);
    const auto analytic = g.grad_flat();

    const auto flat = p.params.flatten();
    Rng pick(500 + betas.size());
    double worst = 0.0;
    for (int trial = 0; trial < 25; ++trial) {
      const auto i = pick.uniform_int(flat.size());
      const double eps = 1e-6 * std::max(1.0, std::fabs(flat[i]));
      auto plus = p, minus = p;
      auto fp = flat, fm = flat;
      fp[i] += eps;
      fm[i] -= eps;
      plus.params.unflatten(fp);
      minus.params.unflatten(fm);
      const double fd = (loss_value(plus) - loss_value(minus)) / (2 * eps);
      worst = std::max(worst, rel_err(analytic[i], fd, 1e-6));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("non-finite predictor output carries the step index") {
  const int length = 16;
  InferenceSchedule sched{{0.01, 0.4}};
  PredictFn nan_oracle = [](const ad::Var& x, double) {
    std::vector<double> v(x.size(), std::nan(""));
    return ad::Var::constant(std::move(v));
  };
  Rng rng(1);
  CHECK_THROWS_WITH_AS(generate_core(nan_oracle, length, sched, rng, {}),
                       doctest::Contains("reverse step 2"), NumericalError);
}
