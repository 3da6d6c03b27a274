// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Spectral analysis and every loss term: the noise-prediction MSE, STFT
// magnitude/phase losses, and the multi-resolution combination used when
// fine-tuning through the sampler. The differentiable path and the plain
// path share one implementation (plain calls run the graph on constants),
// so values cannot drift apart.

#pragma once

#include <span>
#include <vector>

#include "diffvoc/ad.hpp"

namespace diffvoc {

// One analysis resolution. Window is periodic Hann of window_length,
// zero-padded centered into fft_size; hop defaults to window_length / 4.
struct StftConfig {
  int fft_size = 1024;
  int window_length = 1024;
  int hop = 256;

  static StftConfig with_hop_quarter(int fft, int window) {
    return {fft, window, window / 4};
  }
  int bins() const { return fft_size / 2 + 1; }
  void validate() const;
};

struct MultiResConfig {
  std::vector<StftConfig> resolutions;
  bool include_mag = true;
  bool include_pha = true;
  // Excludes bins where both magnitudes sit below the mask floor from the
  // phase loss; the phase of near-silence carries no information.
  bool mask_low_magnitude_phase = true;

  // FFT 512/1024/2048 with Hann windows 240/600/1200.
  static MultiResConfig production();
  // Small-signal resolutions for 8 kHz desk experiments.
  static MultiResConfig desk();
  void validate() const;
};

// Additive floor inside the log of mel magnitudes.
inline constexpr double kLogFloor = 1e-5;
// Bins below this magnitude in both signals are masked out of the phase loss.
inline constexpr double kPhaseMaskFloor = 1e-4;

// Triangular mel filterbank (HTK mel scale, peak-1 triangles), rows = bands.
class MelFilterbank {
 public:
  static MelFilterbank build(int n_mels, int fft_size, double sample_rate,
                             double f_min, double f_max);

  int bands() const { return bands_; }
  int bins() const { return bins_; }
  const std::vector<double>& matrix() const { return matrix_; }
  double center_hz(int band) const { return centers_hz_[band]; }
  double weight(int band, int bin) const { return matrix_[band * bins_ + bin]; }

  // (frames x bins) magnitudes -> (frames x bands).
  std::vector<double> project(std::span<const double> magnitudes,
                              int frames) const;

 private:
  int bands_ = 0;
  int bins_ = 0;
  std::vector<double> matrix_;
  std::vector<double> centers_hz_;
};

// Precomputed window and DFT basis for one resolution; cached per config.
class StftPlan {
 public:
  explicit StftPlan(const StftConfig& cfg);
  static const StftPlan& get(const StftConfig& cfg);

  const StftConfig& config() const { return cfg_; }
  int bins() const { return cfg_.bins(); }
  int frames_for(std::int64_t signal_len) const {
    return static_cast<int>(signal_len / cfg_.hop) + 1;
  }
  const std::vector<double>& window() const { return window_; }

  // Windowed frames -> (frames x bins) real and imaginary parts.
  ad::Var real_part(const ad::Var& frames) const;
  ad::Var imag_part(const ad::Var& frames) const;

 private:
  StftConfig cfg_;
  std::vector<double> window_;
  ad::Var cos_basis_;  // (bins x window) constants
  ad::Var sin_basis_;
};

// Plain one-shot analysis; magnitude = |X|, phase in (-pi, pi].
struct Spectrogram {
  int frames = 0;
  int bins = 0;
  std::vector<double> re, im, magnitude, phase;
};

Spectrogram stft(std::span<const double> signal, const StftConfig& cfg);

// Differentiable spectrum of a signal expression.
struct SpectrumVars {
  ad::Var re, im, magnitude;
  int frames = 0;
  int bins = 0;
};
SpectrumVars stft_ad(const ad::Var& signal, const StftConfig& cfg);

// ---- losses ----

// Mean |log(fb . |X| + floor) - log(fb . |X_hat| + floor)|.
double loss_mag(std::span<const double> x, std::span<const double> x_hat,
                const StftConfig& cfg, const MelFilterbank& fb);
ad::Var loss_mag_ad(std::span<const double> x_ref, const ad::Var& x_hat,
                    const StftConfig& cfg, const MelFilterbank& fb);

// Mean squared principal-value phase difference, optionally masked.
double loss_pha(std::span<const double> x, std::span<const double> x_hat,
                const StftConfig& cfg, bool mask_low_magnitude = true);
ad::Var loss_pha_ad(std::span<const double> x_ref, const ad::Var& x_hat,
                    const StftConfig& cfg, bool mask_low_magnitude = true);

struct InferLossBreakdown {
  double total = 0.0;
  std::vector<double> mag_per_resolution;
  std::vector<double> pha_per_resolution;
};

// Mean over resolutions of (magnitude loss + phase loss), per the toggles.
// Filterbanks must match the resolutions one-to-one.
InferLossBreakdown infer_loss(std::span<const double> x,
                              std::span<const double> x_hat,
                              const MultiResConfig& cfg,
                              const std::vector<MelFilterbank>& fbs);
ad::Var infer_loss_ad(std::span<const double> x_ref, const ad::Var& x_hat,
                      const MultiResConfig& cfg,
                      const std::vector<MelFilterbank>& fbs,
                      InferLossBreakdown* breakdown = nullptr);

// Per-resolution filterbanks sharing one band layout.
std::vector<MelFilterbank> filterbanks_for(const MultiResConfig& cfg,
                                           int n_mels, double sample_rate,
                                           double f_min, double f_max);

// Mean squared error between noise and its estimate.
double diffusion_loss(std::span<const double> eps,
                      std::span<const double> eps_hat);
ad::Var diffusion_loss_ad(std::span<const double> eps, const ad::Var& eps_hat);

inline double total_loss(double l_d, double l_i, double lambda) {
  return l_d + lambda * l_i;
}

struct LossBreakdown {
  double l_d = 0.0;
  double l_i = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  std::vector<double> mag_per_resolution;
  std::vector<double> pha_per_resolution;
};

}  // namespace diffvoc
