// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffvoc/config.hpp"

#include <fstream>

#include "diffvoc/errors.hpp"

namespace diffvoc {

NoiseSchedule ScheduleSpec::build() const {
  if (type == "linear") return linear_schedule(beta_min, beta_max, steps);
  if (type == "explicit") {
    NoiseSchedule s{betas};
    s.validate();
    return s;
  }
  throw ConfigError("ScheduleSpec: unknown type " + type);
}

nlohmann::json ScheduleSpec::to_json() const {
  if (type == "linear")
    return {{"type", "linear"},
            {"beta_min", beta_min},
            {"beta_max", beta_max},
            {"T", steps}};
  return {{"type", "explicit"}, {"betas", betas}};
}

ScheduleSpec ScheduleSpec::from_json(const nlohmann::json& j) {
  ScheduleSpec spec;
  spec.type = j.value("type", "linear");
  if (spec.type == "linear") {
    spec.beta_min = j.value("beta_min", spec.beta_min);
    spec.beta_max = j.value("beta_max", spec.beta_max);
    spec.steps = j.value("T", spec.steps);
  } else if (spec.type == "explicit") {
    spec.betas = j.at("betas").get<std::vector<double>>();
  } else {
    throw ConfigError("ScheduleSpec: unknown type " + spec.type);
  }
  spec.build();  // validates
  return spec;
}

nlohmann::json to_json(const StftConfig& cfg) {
  return {{"fft_size", cfg.fft_size},
          {"window_length", cfg.window_length},
          {"hop", cfg.hop}};
}

nlohmann::json to_json(const MultiResConfig& cfg) {
  nlohmann::json resolutions = nlohmann::json::array();
  for (const auto& r : cfg.resolutions) resolutions.push_back(to_json(r));
  return {{"resolutions", resolutions},
          {"include_mag", cfg.include_mag},
          {"include_pha", cfg.include_pha},
          {"mask_low_magnitude_phase", cfg.mask_low_magnitude_phase}};
}

StftConfig stft_config_from_json(const nlohmann::json& j) {
  StftConfig cfg;
  cfg.fft_size = j.at("fft_size").get<int>();
  cfg.window_length = j.at("window_length").get<int>();
  cfg.hop = j.value("hop", cfg.window_length / 4);
  cfg.validate();
  return cfg;
}

MultiResConfig multires_from_json(const nlohmann::json& j) {
  MultiResConfig cfg;
  cfg.resolutions.clear();
  for (const auto& r : j.at("resolutions"))
    cfg.resolutions.push_back(stft_config_from_json(r));
  cfg.include_mag = j.value("include_mag", true);
  cfg.include_pha = j.value("include_pha", true);
  cfg.mask_low_magnitude_phase = j.value("mask_low_magnitude_phase", true);
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::desk_defaults() {
  RunConfig cfg;
  cfg.feature = FeatureConfig::desk();
  cfg.network = NetworkConfig::desk();
  cfg.multires = MultiResConfig::desk();
  cfg.training = TrainingConfig{};
  cfg.schedule = ScheduleSpec{};
  return cfg;
}

RunConfig RunConfig::production_defaults() {
  RunConfig cfg;
  cfg.feature = FeatureConfig::production();
  cfg.network = NetworkConfig::paper();
  cfg.multires = MultiResConfig::production();
  cfg.training = TrainingConfig{};
  cfg.training.batch_size = 256;
  cfg.schedule = ScheduleSpec{};
  return cfg;
}

void RunConfig::validate() const {
  feature.validate();
  network.validate();
  multires.validate();
  training.validate();
  schedule.build();
  if (network.hop() != feature.hop_length)
    throw ConfigError(
        "RunConfig: upsample factors must multiply to the feature hop");
  if (network.n_mels != feature.n_mels)
    throw ConfigError("RunConfig: network and feature mel band counts differ");
  for (const auto& r : multires.resolutions)
    if (r.window_length > feature.segment_length)
      throw ConfigError(
          "RunConfig: an analysis window exceeds the segment length");
}

std::uint64_t RunConfig::digest() const { return fnv1a64(to_json().dump()); }

std::uint64_t RunConfig::resume_digest() const {
  RunConfig normalized = *this;
  normalized.training.max_steps = 0;
  normalized.training.checkpoint_every = 0;
  return normalized.digest();
}

nlohmann::json RunConfig::to_json() const {
  return {{"feature", feature.to_json()},
          {"network", network.to_json()},
          {"multires", diffvoc::to_json(multires)},
          {"training", training.to_json()},
          {"schedule", schedule.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig cfg;
  // Presets give the baseline; sections override.
  const std::string preset = j.value("preset", "desk");
  if (preset == "desk") cfg = desk_defaults();
  else if (preset == "production") cfg = production_defaults();
  else throw ConfigError("RunConfig: unknown preset " + preset);

  if (j.contains("feature"))
    cfg.feature = FeatureConfig::from_json(j.at("feature"));
  if (j.contains("network"))
    cfg.network = NetworkConfig::from_json(j.at("network"));
  if (j.contains("multires"))
    cfg.multires = multires_from_json(j.at("multires"));
  if (j.contains("training"))
    cfg.training = TrainingConfig::from_json(j.at("training"));
  if (j.contains("schedule"))
    cfg.schedule = ScheduleSpec::from_json(j.at("schedule"));
  cfg.validate();
  return cfg;
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("RunConfig: cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("RunConfig: cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("RunConfig: malformed JSON in " + path.string() + ": " +
                      e.what());
  }
  return from_json(j);
}

}  // namespace diffvoc
