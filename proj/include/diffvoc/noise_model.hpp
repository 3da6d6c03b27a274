// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0
//
// The noise-prediction network: a conditional mel-upsampling stack with a
// level-conditioned gain on the noisy-signal branch. The mel conditioner is
// projected to the working width, upsampled stage by stage (the product of
// the stage factors equals the feature hop), merged with a 1x1 projection
// of the noisy waveform, modulated by the level embedding, and projected
// back to one channel.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffvoc/ad.hpp"
#include "diffvoc/audio_data.hpp"

namespace diffvoc {

enum class Preset { kDesk, kPaper };

struct NetworkConfig {
  std::vector<int> upsample_factors;
  std::vector<int> channel_widths;  // one per stage
  int level_embedding_dim = 32;
  int n_mels = 16;
  Preset preset = Preset::kDesk;

  // [4,2] / widths [8,8] / embedding 32 / 16 mel bands; ~1e3 parameters,
  // small enough for finite-difference verification.
  static NetworkConfig desk();
  // [4,4,4,2,2] / widths [512,512,256,128,128] / 80 mel bands.
  static NetworkConfig paper();

  int hop() const;
  int sinusoid_dims() const;  // fixed basis feeding the embedding affine
  std::size_t param_count() const;
  void validate() const;
  std::uint64_t digest() const;
  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
};

// Named parameter groups in a fixed order; the flat view is the order the
// optimizer and checkpoints use.
class ParamStore {
 public:
  struct Group {
    std::string name;
    std::vector<double> values;
  };

  void add(std::string name, std::size_t size);
  Group& group(const std::string& name);
  const Group& group(const std::string& name) const;
  const std::vector<Group>& groups() const { return groups_; }
  std::vector<Group>& groups() { return groups_; }
  std::size_t flat_size() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  bool all_finite() const;

 private:
  std::vector<Group> groups_;
};

class NoisePredictor {
 public:
  NetworkConfig config;
  ParamStore params;
  std::int64_t step_count = 0;

  // Variance-scaled random init, deterministic for a fixed seed.
  static NoisePredictor init(const NetworkConfig& config, std::uint64_t seed);

  std::vector<double> embed_level(double sqrt_alpha_bar) const;
  // x_t length must equal hop * mel.frames and mel bands must match config.
  std::vector<double> predict_noise(std::span<const double> x_t,
                                    const MelConditioner& mel,
                                    double sqrt_alpha_bar) const;
};

// One training/inference graph over a predictor's parameters. Parameter
// leaves are created once, so gradients accumulate across repeated predict
// calls (the unrolled sampler evaluates the network N times).
class PredictorGraph {
 public:
  PredictorGraph(const NoisePredictor& predictor, bool requires_grad);

  ad::Var embed_level(double sqrt_alpha_bar) const;
  ad::Var predict(const ad::Var& x_t, const MelConditioner& mel,
                  double sqrt_alpha_bar) const;
  // Gradient in ParamStore flat order; call after ad::backward.
  std::vector<double> grad_flat() const;

 private:
  const NetworkConfig& config_;
  std::map<std::string, ad::Var> leaves_;
  std::vector<std::string> order_;
};

// Versioned binary container: header {magic, version, config digest,
// step_count}, the config JSON, named blobs in fixed order, and a trailing
// checksum over everything before it.
void save_checkpoint(const NoisePredictor& predictor,
                     const std::filesystem::path& path,
                     const std::vector<ParamStore::Group>& extra_blobs = {});
struct Checkpoint {
  NoisePredictor predictor;
  std::vector<ParamStore::Group> extra_blobs;

  const ParamStore::Group* find_blob(const std::string& name) const;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Raises ConfigError when the stored config digest differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const NetworkConfig& expected);

}  // namespace diffvoc
