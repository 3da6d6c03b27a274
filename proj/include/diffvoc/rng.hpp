// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

namespace diffvoc {

// xoshiro256** with splitmix64 seeding. Chosen over <random> engines for a
// compact serializable state (four words), which checkpoint/resume relies on.
// Normal draws use Box-Muller without caching so the state alone fully
// determines the stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  // Uniform integer in [0, n), n > 0. Rejection-free modulo with 64-bit
  // state; bias is negligible for the n used here (< 2^32).
  std::uint64_t uniform_int(std::uint64_t n);

  double normal();
  void fill_normal(std::span<double> out);

  std::array<std::uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

  // Derives an independent generator for a named substream.
  Rng fork(std::uint64_t stream) const;

 private:
  std::array<std::uint64_t, 4> s_{};
};

// FNV-1a 64-bit. Used for config digests, dataset digests, checkpoint
// checksums, and per-(schedule, clip) evaluation seeds.
std::uint64_t fnv1a64(const void* data, std::size_t len,
                      std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t fnv1a64(const std::string& s,
                      std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t fnv1a64(std::span<const double> values,
                      std::uint64_t seed = 1469598103934665603ULL);

}  // namespace diffvoc
