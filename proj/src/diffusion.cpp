// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffvoc/diffusion.hpp"

#include <cmath>

#include "diffvoc/errors.hpp"

namespace diffvoc {

std::vector<double> forward_sample(std::span<const double> x0,
                                   double alpha_bar_t,
                                   std::span<const double> eps) {
  if (x0.size() != eps.size())
    throw ContractError("forward_sample: shape mismatch");
  if (!(alpha_bar_t > 0.0 && alpha_bar_t <= 1.0))
    throw ContractError("forward_sample: alpha_bar must lie in (0, 1]");
  const double a = std::sqrt(alpha_bar_t);
  const double b = std::sqrt(1.0 - alpha_bar_t);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a * x0[i] + b * eps[i];
  return out;
}

LevelDraw sample_continuous_level(const AlphaBarCurve& curve, Rng& rng) {
  const int t = curve.steps();
  if (t < 1) throw ContractError("sample_continuous_level: empty curve");
  const auto seg = static_cast<int>(rng.uniform_int(t));  // segment (seg, seg+1]
  const double hi = std::sqrt(curve.values[seg]);
  const double lo = std::sqrt(curve.values[seg + 1]);
  LevelDraw draw;
  draw.sqrt_alpha_bar = rng.uniform(lo, hi);
  draw.sqrt_one_minus =
      std::sqrt(1.0 - draw.sqrt_alpha_bar * draw.sqrt_alpha_bar);
  return draw;
}

ad::Var reverse_step(const ad::Var& x_n, const ad::Var& eps_hat,
                     double beta_hat_n, double abar_n, double abar_prev,
                     std::span<const double> z, SigmaMode sigma_mode,
                     bool add_noise) {
  if (x_n.size() != eps_hat.size())
    throw ContractError("reverse_step: shape mismatch");
  if (!(beta_hat_n > 0.0 && beta_hat_n < 1.0))
    throw ContractError("reverse_step: beta_hat must lie in (0, 1)");
  if (std::fabs(abar_prev * (1.0 - beta_hat_n) - abar_n) >
      1e-9 * std::max(abar_n, 1e-300))
    throw ContractError("reverse_step: abar_n must equal abar_prev * (1 - beta)");

  const double alpha = 1.0 - beta_hat_n;
  const double mean_scale = 1.0 / std::sqrt(alpha);
  const double eps_coeff = beta_hat_n / std::sqrt(1.0 - abar_n);

  // mu = (x - eps_coeff * eps_hat) / sqrt(alpha)
  ad::Var mu = ad::axpby(mean_scale, x_n, -mean_scale * eps_coeff, eps_hat);
  if (!add_noise) return mu;

  if (z.size() != static_cast<std::size_t>(x_n.size()))
    throw ContractError("reverse_step: z shape mismatch");
  double sigma2 = 0.0;
  switch (sigma_mode) {
    case SigmaMode::kPosterior:
      sigma2 = (1.0 - abar_prev) / (1.0 - abar_n) * beta_hat_n;
      break;
    case SigmaMode::kBeta:
      sigma2 = beta_hat_n;
      break;
  }
  const double sigma = std::sqrt(sigma2);
  std::vector<double> noise(z.size());
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = sigma * z[i];
  return ad::add(mu, ad::Var::constant(std::move(noise)));
}

std::vector<double> reverse_step(std::span<const double> x_n,
                                 std::span<const double> eps_hat,
                                 double beta_hat_n, double abar_n,
                                 double abar_prev, std::span<const double> z,
                                 SigmaMode sigma_mode, bool add_noise) {
  return reverse_step(ad::Var::constant(x_n), ad::Var::constant(eps_hat),
                      beta_hat_n, abar_n, abar_prev, z, sigma_mode, add_noise)
      .value();
}

ad::Var generate_core(const PredictFn& predict, std::int64_t length,
                      const InferenceSchedule& infer, Rng& rng,
                      const GenerateOptions& opts) {
  infer.validate();
  if (length <= 0) throw ContractError("generate: length must be positive");
  const int n_steps = infer.steps();
  const auto abar = alpha_bar_infer(infer);

  std::vector<double> start(length);
  rng.fill_normal(start);
  ad::Var x = ad::Var::constant(std::move(start));

  std::vector<double> z(length);
  for (int n = n_steps; n >= 1; --n) {
    const double level = std::sqrt(abar[n]);
    ad::Var eps_hat = predict(x, level);
    const bool add_noise = n > 1 && opts.inject_intermediate_noise;
    if (add_noise) rng.fill_normal(z);
    x = reverse_step(x, eps_hat, infer.betas_hat[n - 1], abar[n], abar[n - 1],
                     z, opts.sigma_mode, add_noise);
    for (double v : x.value()) {
      if (!std::isfinite(v))
        throw NumericalError(
            "generate: non-finite state after reverse step " +
            std::to_string(n) + " with schedule " + infer.to_string());
    }
  }
  return x;
}

ad::Var generate_ad(const PredictorGraph& graph, const NetworkConfig& config,
                    const MelConditioner& mel, const InferenceSchedule& infer,
                    Rng& rng, const GenerateOptions& opts) {
  if (mel.n_mels != config.n_mels)
    throw ContractError("generate: conditioner bands do not match config");
  const std::int64_t length =
      static_cast<std::int64_t>(config.hop()) * mel.frames;
  PredictFn predict = [&graph, &mel](const ad::Var& x_t, double level) {
    return graph.predict(x_t, mel, level);
  };
  return generate_core(predict, length, infer, rng, opts);
}

std::vector<double> generate(const NoisePredictor& predictor,
                             const MelConditioner& mel,
                             const InferenceSchedule& infer, Rng& rng,
                             const GenerateOptions& opts) {
  PredictorGraph graph(predictor, opts.differentiable);
  return generate_ad(graph, predictor.config, mel, infer, rng, opts).value();
}

}  // namespace diffvoc
