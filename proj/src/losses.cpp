// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffvoc/losses.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "diffvoc/errors.hpp"

namespace diffvoc {

namespace {

constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

void check_equal_lengths(std::span<const double> a, std::span<const double> b,
                         const char* what) {
  if (a.size() != b.size())
    throw ContractError(std::string(what) + ": signal lengths differ");
}

}  // namespace

void StftConfig::validate() const {
  if (fft_size <= 0 || window_length <= 0 || hop <= 0)
    throw ConfigError("StftConfig: sizes must be positive");
  if (window_length > fft_size)
    throw ConfigError("StftConfig: window_length must be <= fft_size");
  if (window_length % 2 != 0)
    throw ConfigError("StftConfig: window_length must be even");
}

MultiResConfig MultiResConfig::production() {
  MultiResConfig cfg;
  cfg.resolutions = {StftConfig::with_hop_quarter(512, 240),
                     StftConfig::with_hop_quarter(1024, 600),
                     StftConfig::with_hop_quarter(2048, 1200)};
  return cfg;
}

MultiResConfig MultiResConfig::desk() {
  MultiResConfig cfg;
  cfg.resolutions = {StftConfig::with_hop_quarter(64, 32),
                     StftConfig::with_hop_quarter(128, 64),
                     StftConfig::with_hop_quarter(256, 128)};
  return cfg;
}

void MultiResConfig::validate() const {
  if (resolutions.empty()) throw ConfigError("MultiResConfig: M >= 1 required");
  if (!include_mag && !include_pha)
    throw ConfigError("MultiResConfig: at least one loss term must be on");
  for (const auto& r : resolutions) r.validate();
}

MelFilterbank MelFilterbank::build(int n_mels, int fft_size,
                                   double sample_rate, double f_min,
                                   double f_max) {
  if (n_mels <= 0) throw ConfigError("MelFilterbank: n_mels must be positive");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
    throw ConfigError("MelFilterbank: need 0 <= f_min < f_max <= nyquist");

  MelFilterbank fb;
  fb.bands_ = n_mels;
  fb.bins_ = fft_size / 2 + 1;
  fb.matrix_.assign(static_cast<std::size_t>(n_mels) * fb.bins_, 0.0);
  fb.centers_hz_.resize(n_mels);

  // n_mels + 2 edge points, uniform on the mel axis.
  std::vector<double> edges_hz(n_mels + 2);
  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  for (int i = 0; i < n_mels + 2; ++i)
    edges_hz[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  const double bin_hz = sample_rate / fft_size;
  for (int band = 0; band < n_mels; ++band) {
    const double lo = edges_hz[band];
    const double center = edges_hz[band + 1];
    const double hi = edges_hz[band + 2];
    fb.centers_hz_[band] = center;
    double row_sum = 0.0;
    for (int bin = 0; bin < fb.bins_; ++bin) {
      const double f = bin * bin_hz;
      double w = 0.0;
      if (f > lo && f < hi)
        w = f <= center ? (f - lo) / (center - lo) : (hi - f) / (hi - center);
      fb.matrix_[band * fb.bins_ + bin] = w;
      row_sum += w;
    }
    if (!(row_sum > 0.0))
      throw ConfigError(
          "MelFilterbank: band " + std::to_string(band) +
          " covers no FFT bin; raise fft_size or widen the band layout");
  }
  return fb;
}

std::vector<double> MelFilterbank::project(std::span<const double> magnitudes,
                                           int frames) const {
  if (static_cast<int>(magnitudes.size()) != frames * bins_)
    throw ContractError("MelFilterbank::project: magnitude shape mismatch");
  std::vector<double> out(static_cast<std::size_t>(frames) * bands_, 0.0);
  for (int f = 0; f < frames; ++f) {
    const double* m = magnitudes.data() + static_cast<std::size_t>(f) * bins_;
    double* o = out.data() + static_cast<std::size_t>(f) * bands_;
    for (int band = 0; band < bands_; ++band) {
      const double* row = matrix_.data() + static_cast<std::size_t>(band) * bins_;
      double acc = 0.0;
      for (int bin = 0; bin < bins_; ++bin) acc += row[bin] * m[bin];
      o[band] = acc;
    }
  }
  return out;
}

StftPlan::StftPlan(const StftConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  const int w = cfg.window_length;
  const int f = cfg.fft_size;
  const int b = cfg.bins();

  // Periodic Hann.
  window_.resize(w);
  for (int n = 0; n < w; ++n)
    window_[n] = 0.5 * (1.0 - std::cos(2.0 * kPi * n / w));

  // The windowed frame sits centered in the FFT buffer; the offset only
  // rotates phases, magnitudes are unaffected.
  const int offset = (f - w) / 2;
  std::vector<double> cos_m(static_cast<std::size_t>(b) * w);
  std::vector<double> sin_m(static_cast<std::size_t>(b) * w);
  for (int k = 0; k < b; ++k) {
    for (int n = 0; n < w; ++n) {
      const double ang = -2.0 * kPi * k * (n + offset) / f;
      cos_m[static_cast<std::size_t>(k) * w + n] = std::cos(ang);
      sin_m[static_cast<std::size_t>(k) * w + n] = std::sin(ang);
    }
  }
  cos_basis_ = ad::Var::constant(std::move(cos_m), b);
  sin_basis_ = ad::Var::constant(std::move(sin_m), b);
}

const StftPlan& StftPlan::get(const StftConfig& cfg) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, int>, StftPlan> cache;
  std::lock_guard<std::mutex> lock(mu);
  const auto key = std::make_tuple(cfg.fft_size, cfg.window_length, cfg.hop);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, StftPlan(cfg)).first;
  return it->second;
}

ad::Var StftPlan::real_part(const ad::Var& frames) const {
  return ad::matmul_rt(frames, cos_basis_);
}

ad::Var StftPlan::imag_part(const ad::Var& frames) const {
  return ad::matmul_rt(frames, sin_basis_);
}

SpectrumVars stft_ad(const ad::Var& signal, const StftConfig& cfg) {
  if (signal.size() < cfg.window_length)
    throw ContractError("stft: signal shorter than one analysis window");
  const StftPlan& plan = StftPlan::get(cfg);
  SpectrumVars out;
  ad::Var frames = ad::frame_signal(signal, plan.window(), cfg.hop);
  out.re = plan.real_part(frames);
  out.im = plan.imag_part(frames);
  out.magnitude = ad::magnitude(out.re, out.im);
  out.frames = static_cast<int>(frames.rows());
  out.bins = cfg.bins();
  return out;
}

Spectrogram stft(std::span<const double> signal, const StftConfig& cfg) {
  const auto vars = stft_ad(ad::Var::constant(signal), cfg);
  Spectrogram s;
  s.frames = vars.frames;
  s.bins = vars.bins;
  s.re = vars.re.value();
  s.im = vars.im.value();
  s.magnitude = vars.magnitude.value();
  s.phase.resize(s.re.size());
  for (std::size_t i = 0; i < s.phase.size(); ++i)
    s.phase[i] = std::atan2(s.im[i], s.re[i]);
  return s;
}

namespace {

ad::Var mag_term(const Spectrogram& ref, const SpectrumVars& hat,
                 const MelFilterbank& fb) {
  if (fb.bins() != hat.bins)
    throw ContractError("loss_mag: filterbank bins do not match fft_size");
  std::vector<double> ref_logmel = fb.project(ref.magnitude, ref.frames);
  for (auto& v : ref_logmel) v = std::log(v + kLogFloor);

  ad::Var fb_const = ad::Var::constant(fb.matrix(), fb.bands());
  ad::Var mel = ad::matmul_rt(hat.magnitude, fb_const);
  ad::Var logmel = ad::log_shift(mel, kLogFloor);
  ad::Var ref_const = ad::Var::constant(std::move(ref_logmel), ref.frames);
  return ad::mean(ad::abs(ad::sub(logmel, ref_const)));
}

ad::Var pha_term(const Spectrogram& ref, const SpectrumVars& hat,
                 bool mask_low_magnitude) {
  ad::Var phase_hat = ad::atan2(hat.im, hat.re);
  ad::Var diff = ad::wrap_angle(
      ad::sub(phase_hat, ad::Var::constant(ref.phase, ref.frames)));
  ad::Var sq = ad::square(diff);

  if (!mask_low_magnitude) return ad::mean(sq);

  const auto& hat_mag = hat.magnitude.value();
  std::vector<double> mask(hat_mag.size(), 0.0);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (ref.magnitude[i] >= kPhaseMaskFloor || hat_mag[i] >= kPhaseMaskFloor) {
      mask[i] = 1.0;
      ++kept;
    }
  }
  if (kept == 0) return ad::Var::scalar(0.0);
  return ad::mul_scalar(ad::sum(ad::mul_const(sq, mask)), 1.0 / kept);
}

}  // namespace

ad::Var loss_mag_ad(std::span<const double> x_ref, const ad::Var& x_hat,
                    const StftConfig& cfg, const MelFilterbank& fb) {
  check_equal_lengths(x_ref, std::span<const double>(x_hat.value()), "loss_mag");
  return mag_term(stft(x_ref, cfg), stft_ad(x_hat, cfg), fb);
}

double loss_mag(std::span<const double> x, std::span<const double> x_hat,
                const StftConfig& cfg, const MelFilterbank& fb) {
  return loss_mag_ad(x, ad::Var::constant(x_hat), cfg, fb).item();
}

ad::Var loss_pha_ad(std::span<const double> x_ref, const ad::Var& x_hat,
                    const StftConfig& cfg, bool mask_low_magnitude) {
  check_equal_lengths(x_ref, std::span<const double>(x_hat.value()), "loss_pha");
  return pha_term(stft(x_ref, cfg), stft_ad(x_hat, cfg), mask_low_magnitude);
}

double loss_pha(std::span<const double> x, std::span<const double> x_hat,
                const StftConfig& cfg, bool mask_low_magnitude) {
  return loss_pha_ad(x, ad::Var::constant(x_hat), cfg, mask_low_magnitude)
      .item();
}

ad::Var infer_loss_ad(std::span<const double> x_ref, const ad::Var& x_hat,
                      const MultiResConfig& cfg,
                      const std::vector<MelFilterbank>& fbs,
                      InferLossBreakdown* breakdown) {
  cfg.validate();
  if (cfg.include_mag && fbs.size() != cfg.resolutions.size())
    throw ContractError("infer_loss: one filterbank per resolution required");
  check_equal_lengths(x_ref, std::span<const double>(x_hat.value()),
                      "infer_loss");

  if (breakdown) *breakdown = InferLossBreakdown{};
  ad::Var acc = ad::Var::scalar(0.0);
  for (std::size_t m = 0; m < cfg.resolutions.size(); ++m) {
    // One analysis per resolution feeds both loss terms.
    const Spectrogram ref = stft(x_ref, cfg.resolutions[m]);
    const SpectrumVars hat = stft_ad(x_hat, cfg.resolutions[m]);
    ad::Var term = ad::Var::scalar(0.0);
    if (cfg.include_mag) {
      ad::Var lm = mag_term(ref, hat, fbs[m]);
      if (breakdown) breakdown->mag_per_resolution.push_back(lm.item());
      term = ad::add(term, lm);
    }
    if (cfg.include_pha) {
      ad::Var lp = pha_term(ref, hat, cfg.mask_low_magnitude_phase);
      if (breakdown) breakdown->pha_per_resolution.push_back(lp.item());
      term = ad::add(term, lp);
    }
    acc = ad::add(acc, term);
  }
  ad::Var result =
      ad::mul_scalar(acc, 1.0 / static_cast<double>(cfg.resolutions.size()));
  if (breakdown) breakdown->total = result.item();
  return result;
}

InferLossBreakdown infer_loss(std::span<const double> x,
                              std::span<const double> x_hat,
                              const MultiResConfig& cfg,
                              const std::vector<MelFilterbank>& fbs) {
  InferLossBreakdown breakdown;
  infer_loss_ad(x, ad::Var::constant(x_hat), cfg, fbs, &breakdown);
  return breakdown;
}

std::vector<MelFilterbank> filterbanks_for(const MultiResConfig& cfg,
                                           int n_mels, double sample_rate,
                                           double f_min, double f_max) {
  std::vector<MelFilterbank> fbs;
  fbs.reserve(cfg.resolutions.size());
  for (const auto& r : cfg.resolutions)
    fbs.push_back(
        MelFilterbank::build(n_mels, r.fft_size, sample_rate, f_min, f_max));
  return fbs;
}

ad::Var diffusion_loss_ad(std::span<const double> eps, const ad::Var& eps_hat) {
  check_equal_lengths(eps, std::span<const double>(eps_hat.value()),
                      "diffusion_loss");
  return ad::mean(ad::square(ad::sub(eps_hat, ad::Var::constant(eps))));
}

double diffusion_loss(std::span<const double> eps,
                      std::span<const double> eps_hat) {
  return diffusion_loss_ad(eps, ad::Var::constant(eps_hat)).item();
}

}  // namespace diffvoc
