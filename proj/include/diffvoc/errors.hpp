// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace diffvoc {

// Error taxonomy used across the library. The CLI maps these onto exit
// codes: usage/configuration -> 1, schedule validation -> 2, runtime and
// numerical failures -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad settings: out-of-range bounds, inconsistent presets, malformed files.
struct ConfigError : Error {
  using Error::Error;
};

// A caller violated a documented precondition (shape mismatch, out-of-range
// argument). These indicate bugs in the calling code, not bad data.
struct ContractError : Error {
  using Error::Error;
};

// Non-finite values or numerically impossible requests encountered at
// runtime; the message carries diagnostics (step index, sampled schedule).
struct NumericalError : Error {
  using Error::Error;
};

// Rejection sampling could not produce a valid draw within its bound.
struct SamplingError : Error {
  using Error::Error;
};

// File ingestion/serialization problems: truncated WAV, checksum mismatch.
struct IoError : Error {
  using Error::Error;
};

}  // namespace diffvoc
