// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "diffvoc/errors.hpp"
#include "diffvoc/losses.hpp"
#include "diffvoc/rng.hpp"
#include "test_support.hpp"

using namespace diffvoc;
namespace ad = diffvoc::ad;
using testsupport::naive_dft;
using testsupport::random_vector;
using testsupport::rel_err;

namespace {

std::vector<double> sine(double freq_hz, double sample_rate, int n,
                         double amp = 1.0, double phase = 0.0) {
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i)
    x[i] = amp * std::sin(2.0 * M_PI * freq_hz * i / sample_rate + phase);
  return x;
}

const StftConfig kDeskStft = StftConfig::with_hop_quarter(64, 32);
const MelFilterbank kDeskFb = MelFilterbank::build(16, 64, 8000.0, 80.0, 4000.0);

}  // namespace

TEST_CASE("stft of DC reproduces the window transform") {
  // A constant input turns each frame into the Hann window itself, whose
  // periodic transform lives entirely in bins 0 and 1: W/2 and W/4.
  StftConfig cfg = StftConfig::with_hop_quarter(64, 64);
  std::vector<double> dc(256, 1.0);
  const auto s = stft(dc, cfg);
  for (int f = 0; f < s.frames; ++f) {
    CHECK(s.magnitude[f * s.bins + 0] == doctest::Approx(32.0).epsilon(1e-9));
    CHECK(s.magnitude[f * s.bins + 1] == doctest::Approx(16.0).epsilon(1e-9));
    for (int k = 2; k < s.bins; ++k)
      CHECK(s.magnitude[f * s.bins + k] < 1e-9);
  }
}

TEST_CASE("stft of zero signal is zero magnitude") {
  std::vector<double> z(128, 0.0);
  const auto s = stft(z, kDeskStft);
  for (double m : s.magnitude) CHECK(m == 0.0);
}

TEST_CASE("stft rejects signals shorter than one window") {
  std::vector<double> tiny(16, 0.1);
  CHECK_THROWS_AS(stft(tiny, kDeskStft), ContractError);
}

TEST_CASE("stft matches a naive DFT oracle") {
  const auto x = random_vector(200, 5);
  const auto s = stft(x, kDeskStft);

  // Recompute one interior frame by hand: centered at f*hop, reflection
  // padded, windowed, offset-centered in the FFT buffer.
  const int f = 3;
  const int w = kDeskStft.window_length;
  const int hop = kDeskStft.hop;
  std::vector<double> frame(w);
  for (int n = 0; n < w; ++n) {
    const int idx = f * hop - w / 2 + n;
    const double win = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / w));
    frame[n] = win * x[idx];  // interior frame: no reflection needed
  }
  const auto oracle = naive_dft(frame, kDeskStft.fft_size,
                                (kDeskStft.fft_size - w) / 2);
  for (int k = 0; k < s.bins; ++k) {
    CHECK(rel_err(s.re[f * s.bins + k], oracle[k].real(), 1e-9) < 1e-9);
    CHECK(rel_err(s.im[f * s.bins + k], oracle[k].imag(), 1e-9) < 1e-9);
  }
}

TEST_CASE("per-frame Parseval identity") {
  const auto x = random_vector(256, 6);
  StftConfig cfg = StftConfig::with_hop_quarter(64, 64);  // window == fft
  const auto s = stft(x, cfg);

  const int f = 2;
  // Time side: energy of the windowed frame.
  double time_energy = 0.0;
  for (int n = 0; n < 64; ++n) {
    const double win = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / 64));
    const double v = win * x[f * cfg.hop - 32 + n];
    time_energy += v * v;
  }
  // Frequency side: one-sided bins, interior ones doubled.
  double freq_energy = 0.0;
  for (int k = 0; k < s.bins; ++k) {
    const double m2 = s.magnitude[f * s.bins + k] * s.magnitude[f * s.bins + k];
    const bool interior = k != 0 && k != s.bins - 1;
    freq_energy += interior ? 2.0 * m2 : m2;
  }
  freq_energy /= cfg.fft_size;
  CHECK(rel_err(time_energy, freq_energy) < 1e-6);
}

TEST_CASE("mel filterbank structure") {
  const auto& fb = kDeskFb;
  for (int band = 0; band < fb.bands(); ++band) {
    double sum = 0.0;
    int direction_changes = 0;
    double prev = 0.0;
    bool rising = true;
    for (int bin = 0; bin < fb.bins(); ++bin) {
      const double w = fb.weight(band, bin);
      CHECK(w >= 0.0);
      sum += w;
      if (w < prev && rising) {
        rising = false;
        ++direction_changes;
      }
      if (w > prev && !rising) ++direction_changes;  // would break unimodality
      prev = w;
    }
    CHECK(sum > 0.0);
    CHECK(direction_changes <= 1);
  }
  // Centers increase with the band index.
  for (int band = 1; band < fb.bands(); ++band)
    CHECK(fb.center_hz(band) > fb.center_hz(band - 1));
}

TEST_CASE("filterbank rejects layouts with empty rows") {
  // 16 bands over 80-4000 Hz need finer resolution than a 32-point FFT
  // at 8 kHz provides.
  CHECK_THROWS_AS(MelFilterbank::build(16, 32, 8000.0, 80.0, 4000.0),
                  ConfigError);
}

TEST_CASE("loss_mag identities") {
  const auto x = random_vector(128, 7);
  const auto y = random_vector(128, 8);
  CHECK(loss_mag(x, x, kDeskStft, kDeskFb) == 0.0);
  CHECK(loss_mag(x, y, kDeskStft, kDeskFb) ==
        doctest::Approx(loss_mag(y, x, kDeskStft, kDeskFb)).epsilon(1e-12));
  CHECK(loss_mag(x, y, kDeskStft, kDeskFb) > 0.0);
}

TEST_CASE("loss_mag of a 10x-scaled sine approaches ln(10)") {
  // On bands carrying the tone's energy the log ratio is exactly ln(10)
  // once the floor is negligible; the mean over all bands is diluted by
  // floor-dominated bands, so compare against a per-band oracle.
  const auto x = sine(440.0, 8000.0, 512, 0.8);
  auto x10 = x;
  for (auto& v : x10) v *= 10.0;

  const auto sx = stft(x, kDeskStft);
  const auto sy = stft(x10, kDeskStft);
  const auto mx = kDeskFb.project(sx.magnitude, sx.frames);
  const auto my = kDeskFb.project(sy.magnitude, sy.frames);
  double oracle = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i)
    oracle += std::fabs(std::log(my[i] + kLogFloor) -
                        std::log(mx[i] + kLogFloor));
  oracle /= static_cast<double>(mx.size());

  const double lm = loss_mag(x, x10, kDeskStft, kDeskFb);
  CHECK(lm == doctest::Approx(oracle).epsilon(1e-12));

  // The strongest band's contribution is ln(10) to within floor effects.
  std::size_t peak = 0;
  for (std::size_t i = 0; i < mx.size(); ++i)
    if (mx[i] > mx[peak]) peak = i;
  const double band_ratio =
      std::log(my[peak] + kLogFloor) - std::log(mx[peak] + kLogFloor);
  CHECK(band_ratio == doctest::Approx(std::log(10.0)).epsilon(1e-3));
}

TEST_CASE("common scale changes loss_mag negligibly above the floor") {
  const auto x = sine(500.0, 8000.0, 256, 0.9);
  const auto y = sine(700.0, 8000.0, 256, 0.9);
  const double base = loss_mag(x, y, kDeskStft, kDeskFb);
  auto x2 = x, y2 = y;
  for (auto& v : x2) v *= 2.0;
  for (auto& v : y2) v *= 2.0;
  const double scaled = loss_mag(x2, y2, kDeskStft, kDeskFb);
  CHECK(std::fabs(scaled - base) < 1e-2 * std::max(1.0, base));
}

TEST_CASE("loss_pha identities and bounds") {
  const auto x = random_vector(128, 9);
  CHECK(loss_pha(x, x, kDeskStft) == 0.0);

  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_vector(128, 100 + trial);
    const auto b = random_vector(128, 200 + trial);
    const double lp = loss_pha(a, b, kDeskStft);
    CHECK(lp >= 0.0);
    CHECK(lp <= M_PI * M_PI + 1e-12);
  }
}

TEST_CASE("global sign flip costs pi^2 on energetic bins") {
  const auto x = sine(620.0, 8000.0, 256, 0.7);
  auto neg = x;
  for (auto& v : neg) v = -v;
  const double lp = loss_pha(x, neg, kDeskStft, /*mask=*/true);
  CHECK(lp == doctest::Approx(M_PI * M_PI).epsilon(1e-10));
}

TEST_CASE("infer_loss identities and composition") {
  MultiResConfig cfg = MultiResConfig::desk();
  const auto fbs = filterbanks_for(cfg, 16, 8000.0, 80.0, 4000.0);
  const auto x = random_vector(512, 10);
  const auto y = random_vector(512, 11);

  CHECK(infer_loss(x, x, cfg, fbs).total == 0.0);

  // M=1 equals the single-resolution sum.
  MultiResConfig single = cfg;
  single.resolutions = {cfg.resolutions[0]};
  const auto fb1 = filterbanks_for(single, 16, 8000.0, 80.0, 4000.0);
  const double li = infer_loss(x, y, single, fb1).total;
  const double direct = loss_mag(x, y, cfg.resolutions[0], fbs[0]) +
                        loss_pha(x, y, cfg.resolutions[0]);
  CHECK(li == doctest::Approx(direct).epsilon(1e-12));

  // The multi-resolution mean lies between min and max single-resolution sums.
  std::vector<double> singles;
  for (std::size_t m = 0; m < cfg.resolutions.size(); ++m)
    singles.push_back(loss_mag(x, y, cfg.resolutions[m], fbs[m]) +
                      loss_pha(x, y, cfg.resolutions[m]));
  const double full = infer_loss(x, y, cfg, fbs).total;
  CHECK(full >= *std::min_element(singles.begin(), singles.end()) - 1e-12);
  CHECK(full <= *std::max_element(singles.begin(), singles.end()) + 1e-12);
}

TEST_CASE("disabling the phase term leaves only magnitude terms") {
  MultiResConfig cfg = MultiResConfig::desk();
  cfg.include_pha = false;
  const auto fbs = filterbanks_for(cfg, 16, 8000.0, 80.0, 4000.0);
  const auto x = random_vector(512, 12);
  const auto y = random_vector(512, 13);
  const auto b = infer_loss(x, y, cfg, fbs);
  CHECK(b.pha_per_resolution.empty());
  double mag_mean = 0.0;
  for (double v : b.mag_per_resolution) mag_mean += v;
  mag_mean /= static_cast<double>(b.mag_per_resolution.size());
  CHECK(b.total == doctest::Approx(mag_mean).epsilon(1e-12));

  MultiResConfig neither = cfg;
  neither.include_mag = false;
  CHECK_THROWS_AS(neither.validate(), ConfigError);
}

TEST_CASE("diffusion_loss basics") {
  const auto e = random_vector(64, 14);
  CHECK(diffusion_loss(e, e) == 0.0);

  // eps_hat = 0 against standard normal noise: mean square approaches 1.
  Rng rng(2);
  std::vector<double> eps(200000);
  rng.fill_normal(eps);
  std::vector<double> zeros(eps.size(), 0.0);
  CHECK(diffusion_loss(eps, zeros) == doctest::Approx(1.0).epsilon(0.02));

  // Homogeneity: scaling both inputs by c scales the loss by c^2.
  const auto a = random_vector(64, 15);
  const auto b = random_vector(64, 16);
  auto a3 = a, b3 = b;
  for (auto& v : a3) v *= 3.0;
  for (auto& v : b3) v *= 3.0;
  CHECK(diffusion_loss(a3, b3) ==
        doctest::Approx(9.0 * diffusion_loss(a, b)).epsilon(1e-12));
}

TEST_CASE("total_loss composition") {
  CHECK(total_loss(0.4, 2.0, 0.0) == 0.4);
  CHECK(total_loss(0.4, 2.0, 5e-4) == doctest::Approx(0.4 + 1e-3));
  CHECK(total_loss(0.4, 2.0, 1e-3) == doctest::Approx(0.4 + 2e-3));
}

TEST_CASE("infer_loss gradient wrt x_hat matches finite differences") {
  // Single desk resolution on a length-64 signal, double precision.
  // Broadband signals keep every band energetic, so no |.| kink or phase
  // wrap boundary sits inside the finite-difference stencil.
  MultiResConfig cfg;
  cfg.resolutions = {kDeskStft};
  const auto fbs = filterbanks_for(cfg, 16, 8000.0, 80.0, 4000.0);

  const auto x = random_vector(64, 31, -0.8, 0.8);
  const auto xh = random_vector(64, 32, -0.8, 0.8);

  ad::Var leaf = ad::Var::leaf(xh, true);
  ad::Var loss = infer_loss_ad(x, leaf, cfg, fbs);
  ad::backward(loss);

  auto eval = [&](const std::vector<double>& v) {
    return infer_loss_ad(x, ad::Var::constant(v), cfg, fbs).item();
  };
  const double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < xh.size(); ++i) {
    auto p = xh, m = xh;
    p[i] += eps;
    m[i] -= eps;
    const double fd = (eval(p) - eval(m)) / (2 * eps);
    worst = std::max(worst, rel_err(leaf.grad()[i], fd, 1e-6));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("losses reject mismatched shapes") {
  const auto x = random_vector(128, 17);
  const auto y = random_vector(120, 18);
  CHECK_THROWS_AS(loss_mag(x, y, kDeskStft, kDeskFb), ContractError);
  CHECK_THROWS_AS(loss_pha(x, y, kDeskStft), ContractError);
  CHECK_THROWS_AS(diffusion_loss(x, y), ContractError);
}
