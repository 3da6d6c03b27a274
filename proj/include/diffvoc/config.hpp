// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0
//
// One structured run-configuration document covering features, network,
// spectral-loss resolutions, training, and the training noise schedule.
// Presets expand first; explicit fields override.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "diffvoc/audio_data.hpp"
#include "diffvoc/losses.hpp"
#include "diffvoc/noise_model.hpp"
#include "diffvoc/schedules.hpp"
#include "diffvoc/trainer.hpp"

namespace diffvoc {

struct ScheduleSpec {
  std::string type = "linear";  // "linear" | "explicit"
  double beta_min = 1e-6;
  double beta_max = 1e-2;
  int steps = 1000;
  std::vector<double> betas;  // explicit only

  NoiseSchedule build() const;
  nlohmann::json to_json() const;
  static ScheduleSpec from_json(const nlohmann::json& j);
};

nlohmann::json to_json(const StftConfig& cfg);
nlohmann::json to_json(const MultiResConfig& cfg);
StftConfig stft_config_from_json(const nlohmann::json& j);
MultiResConfig multires_from_json(const nlohmann::json& j);

struct RunConfig {
  FeatureConfig feature = FeatureConfig::desk();
  NetworkConfig network = NetworkConfig::desk();
  MultiResConfig multires = MultiResConfig::desk();
  TrainingConfig training;
  ScheduleSpec schedule;

  static RunConfig desk_defaults();
  static RunConfig production_defaults();

  void validate() const;
  std::uint64_t digest() const;
  // Digest of everything that shapes the training trajectory; max_steps and
  // checkpoint cadence are excluded so a run can be resumed to a longer
  // horizon.
  std::uint64_t resume_digest() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace diffvoc
