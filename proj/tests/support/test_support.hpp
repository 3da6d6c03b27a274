// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test oracles. Everything here is intentionally independent of the
// library implementation paths it is used to check: naive DFT loops, long
// double running products, central finite differences.

#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace testsupport {

// Central finite difference of a scalar function at x.
inline double central_diff(const std::function<double(double)>& f, double x,
                           double eps) {
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

// Relative error with an absolute floor so near-zero pairs compare sanely.
inline double rel_err(double a, double b, double floor = 1e-8) {
  const double denom = std::max({std::fabs(a), std::fabs(b), floor});
  return std::fabs(a - b) / denom;
}

// Running product in extended precision; the oracle for alpha-bar curves.
inline std::vector<long double> product_curve(const std::vector<double>& betas) {
  std::vector<long double> out;
  out.reserve(betas.size() + 1);
  long double acc = 1.0L;
  out.push_back(acc);
  for (double b : betas) {
    acc *= (1.0L - static_cast<long double>(b));
    out.push_back(acc);
  }
  return out;
}

// Naive O(n^2) DFT of a real frame, one-sided bins. Deliberately written
// without any shared code with the library's transform.
inline std::vector<std::complex<double>> naive_dft(
    const std::vector<double>& frame, int fft_size, int offset) {
  const int bins = fft_size / 2 + 1;
  std::vector<std::complex<double>> out(bins);
  for (int k = 0; k < bins; ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t n = 0; n < frame.size(); ++n) {
      const double ang = -2.0 * M_PI * k *
                         (static_cast<double>(n) + offset) / fft_size;
      acc += frame[n] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

// Unique scratch directory per test binary run.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto base = std::filesystem::temp_directory_path() /
              ("diffvoc_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(base);
  return base;
}

inline std::vector<double> random_vector(std::size_t n, unsigned seed,
                                         double lo = -1.0, double hi = 1.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

}  // namespace testsupport
