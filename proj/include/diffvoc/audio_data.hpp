// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Audio ingestion, mel conditioner extraction, segment sampling, dataset
// splits, and a deterministic synthetic corpus for desk-scale experiments.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffvoc/losses.hpp"
#include "diffvoc/rng.hpp"

namespace diffvoc {

struct FeatureConfig {
  double sample_rate = 22050.0;
  int n_fft = 1024;
  int hop_length = 256;
  int n_mels = 80;
  double f_min = 80.0;
  double f_max = 8000.0;
  int segment_length = 7168;

  // 22.05 kHz / 1024 FFT / hop 256 / 80 bands / segment 7168.
  static FeatureConfig production();
  // 8 kHz / 128 FFT / hop 8 / 16 bands / segment 256.
  static FeatureConfig desk();

  int segment_frames() const { return segment_length / hop_length; }
  StftConfig stft_config() const { return {n_fft, n_fft, hop_length}; }
  void validate() const;
  std::uint64_t digest() const;
  nlohmann::json to_json() const;
  static FeatureConfig from_json(const nlohmann::json& j);
};

struct AudioClip {
  std::vector<double> samples;  // [-1, 1]
  double sample_rate = 0.0;
  std::string id;
};

// Log-compressed mel magnitude spectra, frame-major (frames x n_mels).
struct MelConditioner {
  int frames = 0;
  int n_mels = 0;
  std::vector<double> data;
  std::uint64_t config_digest = 0;

  std::span<const double> frame(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * n_mels,
            static_cast<std::size_t>(n_mels)};
  }
  // Frame range [begin, end) as a new conditioner.
  MelConditioner slice(int begin, int end) const;
};

// 16-bit PCM mono RIFF/WAVE only; samples scale by 1/32768.
AudioClip load_wav(const std::filesystem::path& path);
void save_wav(const std::filesystem::path& path, std::span<const double> samples,
              double sample_rate);

// log(mel magnitudes + 1e-5) with the same centered framing as the losses.
MelConditioner mel_features(const AudioClip& clip, const FeatureConfig& cfg);

// The conditioner filterbank; shared construction with the loss module.
const MelFilterbank& conditioner_filterbank(const FeatureConfig& cfg);

struct Segment {
  std::vector<double> samples;  // length = cfg.segment_length
  MelConditioner mel;           // aligned slice, segment_length / hop frames
  int start_sample = 0;
};

// Draws a hop-aligned segment; clips shorter than a segment are zero-padded
// at the tail. The full-clip conditioner is passed in so repeated draws do
// not recompute features.
Segment sample_segment(const AudioClip& clip, const MelConditioner& full_mel,
                       const FeatureConfig& cfg, Rng& rng);
Segment sample_segment(const AudioClip& clip, const FeatureConfig& cfg,
                       Rng& rng);

struct SynthSpec {
  int n_clips = 0;
  double clip_seconds = 1.0;
  std::uint64_t seed = 0;
  double sample_rate = 8000.0;
};

struct SynthClip {
  AudioClip clip;
  double fundamental_hz = 0.0;
  int harmonics = 0;
};

// Deterministic harmonic clips: 2-5 harmonics, fundamentals in [80, 400] Hz,
// slow amplitude envelopes, a -30 dB noise floor, peak-normalized to 0.95.
std::vector<SynthClip> synth_corpus(const SynthSpec& spec);

struct DatasetSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> search_ids;
  std::vector<std::string> test_ids;

  void validate() const;  // pairwise disjoint
};

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the manifest directory
  std::int64_t n_samples = 0;
  double sample_rate = 0.0;
  std::string split;  // "train" | "search" | "test"
  double fundamental_hz = 0.0;
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;

  DatasetSplit split() const;
  std::uint64_t digest() const;
  nlohmann::json to_json() const;
  static CorpusManifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static CorpusManifest load(const std::filesystem::path& path);
};

// Clips resolved against a manifest; order follows the manifest.
class Dataset {
 public:
  static Dataset load(const std::filesystem::path& manifest_path);
  static Dataset from_clips(std::vector<AudioClip> clips,
                            CorpusManifest manifest);

  const CorpusManifest& manifest() const { return manifest_; }
  const std::vector<AudioClip>& clips() const { return clips_; }
  const AudioClip& clip_by_id(const std::string& id) const;
  std::vector<const AudioClip*> clips_for_split(const std::string& split) const;
  // Hash of ids, lengths and sample bits; checked when resuming training.
  std::uint64_t digest() const;

 private:
  CorpusManifest manifest_;
  std::vector<AudioClip> clips_;
};

}  // namespace diffvoc
