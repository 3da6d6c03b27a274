// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Forward corruption, continuous noise-level sampling, and the ancestral
// reverse sampler. The reverse chain is built on autodiff Vars; with
// differentiable=true gradients reach the predictor parameters through
// every unrolled step (injected noises are constants of the draw), and
// with differentiable=false the same code runs without tape bookkeeping,
// producing bit-identical samples for identical seeds.
//
// Note on the forward marginal: the noisy distribution is treated as
// N(sqrt(abar_t) x0, (1 - abar_t) I), the standard closed form for the
// per-step transitions used here.

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "diffvoc/ad.hpp"
#include "diffvoc/noise_model.hpp"
#include "diffvoc/rng.hpp"
#include "diffvoc/schedules.hpp"

namespace diffvoc {

enum class SigmaMode {
  kPosterior,  // sigma^2 = (1 - abar_prev) / (1 - abar_n) * beta_hat_n
  kBeta,       // sigma^2 = beta_hat_n
};

// sqrt(abar) * x0 + sqrt(1 - abar) * eps.
std::vector<double> forward_sample(std::span<const double> x0,
                                   double alpha_bar_t,
                                   std::span<const double> eps);

struct LevelDraw {
  double sqrt_alpha_bar = 0.0;
  double sqrt_one_minus = 0.0;  // sqrt(1 - alpha_bar)
};

// Uniform segment choice over {1..T}, then a uniform sqrt(alpha_bar) draw
// between the segment's adjacent discrete levels.
LevelDraw sample_continuous_level(const AlphaBarCurve& curve, Rng& rng);

// One ancestral step. Requires abar_n = abar_prev * (1 - beta_hat_n);
// z is ignored unless add_noise is set.
ad::Var reverse_step(const ad::Var& x_n, const ad::Var& eps_hat,
                     double beta_hat_n, double abar_n, double abar_prev,
                     std::span<const double> z, SigmaMode sigma_mode,
                     bool add_noise);
std::vector<double> reverse_step(std::span<const double> x_n,
                                 std::span<const double> eps_hat,
                                 double beta_hat_n, double abar_n,
                                 double abar_prev, std::span<const double> z,
                                 SigmaMode sigma_mode, bool add_noise);

struct GenerateOptions {
  SigmaMode sigma_mode = SigmaMode::kPosterior;
  bool differentiable = false;
  // Noise injection at intermediate steps (never at the final step).
  bool inject_intermediate_noise = true;
};

// The predictor evaluated inside the chain: x_t and the conditioning level.
using PredictFn =
    std::function<ad::Var(const ad::Var& x_t, double sqrt_alpha_bar)>;

// Full reverse chain from a standard-normal start of `length` samples.
ad::Var generate_core(const PredictFn& predict, std::int64_t length,
                      const InferenceSchedule& infer, Rng& rng,
                      const GenerateOptions& opts);

// Conditioned generation: length = hop * mel.frames.
std::vector<double> generate(const NoisePredictor& predictor,
                             const MelConditioner& mel,
                             const InferenceSchedule& infer, Rng& rng,
                             const GenerateOptions& opts = {});
ad::Var generate_ad(const PredictorGraph& graph, const NetworkConfig& config,
                    const MelConditioner& mel, const InferenceSchedule& infer,
                    Rng& rng, const GenerateOptions& opts);

}  // namespace diffvoc
