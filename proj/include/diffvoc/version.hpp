// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace diffvoc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace diffvoc
