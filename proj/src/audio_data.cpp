// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffvoc/audio_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <set>

#include "diffvoc/errors.hpp"

namespace diffvoc {

FeatureConfig FeatureConfig::production() { return FeatureConfig{}; }

FeatureConfig FeatureConfig::desk() {
  FeatureConfig cfg;
  cfg.sample_rate = 8000.0;
  cfg.n_fft = 128;
  cfg.hop_length = 8;
  cfg.n_mels = 16;
  cfg.f_min = 80.0;
  cfg.f_max = 4000.0;
  cfg.segment_length = 256;
  return cfg;
}

void FeatureConfig::validate() const {
  if (sample_rate <= 0.0) throw ConfigError("FeatureConfig: bad sample_rate");
  if (n_fft <= 0 || hop_length <= 0 || n_mels <= 0 || segment_length <= 0)
    throw ConfigError("FeatureConfig: sizes must be positive");
  if (segment_length % hop_length != 0)
    throw ConfigError("FeatureConfig: segment_length must divide by hop");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
    throw ConfigError("FeatureConfig: need 0 <= f_min < f_max <= nyquist");
}

std::uint64_t FeatureConfig::digest() const {
  return fnv1a64(to_json().dump());
}

nlohmann::json FeatureConfig::to_json() const {
  return {{"sample_rate", sample_rate}, {"n_fft", n_fft},
          {"hop_length", hop_length},   {"n_mels", n_mels},
          {"f_min", f_min},             {"f_max", f_max},
          {"segment_length", segment_length}};
}

FeatureConfig FeatureConfig::from_json(const nlohmann::json& j) {
  FeatureConfig cfg;
  cfg.sample_rate = j.at("sample_rate").get<double>();
  cfg.n_fft = j.at("n_fft").get<int>();
  cfg.hop_length = j.at("hop_length").get<int>();
  cfg.n_mels = j.at("n_mels").get<int>();
  cfg.f_min = j.at("f_min").get<double>();
  cfg.f_max = j.at("f_max").get<double>();
  cfg.segment_length = j.at("segment_length").get<int>();
  cfg.validate();
  return cfg;
}

MelConditioner MelConditioner::slice(int begin, int end) const {
  if (begin < 0 || end > frames || begin >= end)
    throw ContractError("MelConditioner::slice: bad frame range");
  MelConditioner out;
  out.frames = end - begin;
  out.n_mels = n_mels;
  out.config_digest = config_digest;
  out.data.assign(data.begin() + static_cast<std::size_t>(begin) * n_mels,
                  data.begin() + static_cast<std::size_t>(end) * n_mels);
  return out;
}

namespace {

struct RiffReader {
  std::ifstream in;

  explicit RiffReader(const std::filesystem::path& path)
      : in(path, std::ios::binary) {
    if (!in) throw IoError("load_wav: cannot open " + path.string());
  }

  template <typename T>
  T read_le() {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw IoError("load_wav: truncated file");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
  }

  std::string read_tag() {
    char tag[4];
    in.read(tag, 4);
    if (!in) throw IoError("load_wav: truncated file");
    return std::string(tag, 4);
  }
};

void write_le(std::ofstream& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i)
    out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

AudioClip load_wav(const std::filesystem::path& path) {
  RiffReader r(path);
  if (r.read_tag() != "RIFF") throw IoError("load_wav: not a RIFF file");
  r.read_le<std::uint32_t>();  // chunk size
  if (r.read_tag() != "WAVE") throw IoError("load_wav: not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool got_fmt = false;
  AudioClip clip;

  while (r.in.peek() != EOF) {
    const std::string tag = r.read_tag();
    const auto size = r.read_le<std::uint32_t>();
    if (tag == "fmt ") {
      format = r.read_le<std::uint16_t>();
      channels = r.read_le<std::uint16_t>();
      rate = r.read_le<std::uint32_t>();
      r.read_le<std::uint32_t>();  // byte rate
      r.read_le<std::uint16_t>();  // block align
      bits = r.read_le<std::uint16_t>();
      if (size > 16) r.in.seekg(size - 16, std::ios::cur);
      got_fmt = true;
    } else if (tag == "data") {
      if (!got_fmt) throw IoError("load_wav: data chunk before fmt");
      if (format != 1 || bits != 16)
        throw IoError("load_wav: unsupported encoding (16-bit PCM only)");
      if (channels != 1)
        throw IoError("load_wav: unsupported encoding (mono only)");
      const std::size_t count = size / 2;
      clip.samples.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const auto raw = r.read_le<std::uint16_t>();
        const auto s = static_cast<std::int16_t>(raw);
        clip.samples[i] = static_cast<double>(s) / 32768.0;
      }
      clip.sample_rate = static_cast<double>(rate);
      clip.id = path.stem().string();
      if (clip.samples.empty()) throw IoError("load_wav: empty data chunk");
      return clip;
    } else {
      r.in.seekg(size + (size % 2), std::ios::cur);  // chunks are word-aligned
      if (!r.in) throw IoError("load_wav: truncated file");
    }
  }
  throw IoError("load_wav: no data chunk in " + path.string());
}

void save_wav(const std::filesystem::path& path, std::span<const double> samples,
              double sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_wav: cannot open " + path.string());
  const std::uint32_t data_size = static_cast<std::uint32_t>(samples.size() * 2);
  const auto rate = static_cast<std::uint32_t>(std::llround(sample_rate));

  out.write("RIFF", 4);
  write_le(out, 36 + data_size, 4);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le(out, 16, 4);
  write_le(out, 1, 2);  // PCM
  write_le(out, 1, 2);  // mono
  write_le(out, rate, 4);
  write_le(out, rate * 2, 4);
  write_le(out, 2, 2);
  write_le(out, 16, 2);
  out.write("data", 4);
  write_le(out, data_size, 4);
  for (double x : samples) {
    long v = std::lrint(std::clamp(x, -1.0, 1.0) * 32768.0);
    v = std::clamp(v, -32768L, 32767L);
    write_le(out, static_cast<std::uint32_t>(static_cast<std::uint16_t>(
                      static_cast<std::int16_t>(v))),
             2);
  }
  if (!out) throw IoError("save_wav: write failed for " + path.string());
}

const MelFilterbank& conditioner_filterbank(const FeatureConfig& cfg) {
  static std::mutex mu;
  static std::map<std::uint64_t, MelFilterbank> cache;
  std::lock_guard<std::mutex> lock(mu);
  const auto key = cfg.digest();
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache
             .emplace(key, MelFilterbank::build(cfg.n_mels, cfg.n_fft,
                                                cfg.sample_rate, cfg.f_min,
                                                cfg.f_max))
             .first;
  return it->second;
}

MelConditioner mel_features(const AudioClip& clip, const FeatureConfig& cfg) {
  cfg.validate();
  if (clip.sample_rate != cfg.sample_rate)
    throw ContractError("mel_features: clip sample rate does not match config");
  if (clip.samples.empty()) throw ContractError("mel_features: empty clip");

  const auto spec = stft(clip.samples, cfg.stft_config());
  const auto& fb = conditioner_filterbank(cfg);
  MelConditioner mel;
  mel.frames = spec.frames;
  mel.n_mels = cfg.n_mels;
  mel.config_digest = cfg.digest();
  mel.data = fb.project(spec.magnitude, spec.frames);
  for (auto& v : mel.data) v = std::log(v + kLogFloor);
  return mel;
}

Segment sample_segment(const AudioClip& clip, const MelConditioner& full_mel,
                       const FeatureConfig& cfg, Rng& rng) {
  cfg.validate();
  if (full_mel.config_digest != cfg.digest())
    throw ContractError("sample_segment: conditioner built for another config");

  const int seg_len = cfg.segment_length;
  const int hop = cfg.hop_length;
  const auto clip_len = static_cast<std::int64_t>(clip.samples.size());

  Segment seg;
  if (clip_len <= seg_len) {
    seg.start_sample = 0;
  } else {
    const auto max_start_frame = (clip_len - seg_len) / hop;
    seg.start_sample =
        static_cast<int>(rng.uniform_int(max_start_frame + 1)) * hop;
  }
  seg.samples.assign(seg_len, 0.0);
  const auto copy_len =
      std::min<std::int64_t>(seg_len, clip_len - seg.start_sample);
  std::copy_n(clip.samples.begin() + seg.start_sample, copy_len,
              seg.samples.begin());

  const int start_frame = seg.start_sample / hop;
  const int want_frames = cfg.segment_frames();
  if (start_frame + want_frames > full_mel.frames)
    throw ContractError("sample_segment: conditioner shorter than the clip");
  seg.mel = full_mel.slice(start_frame, start_frame + want_frames);
  return seg;
}

Segment sample_segment(const AudioClip& clip, const FeatureConfig& cfg,
                       Rng& rng) {
  if (static_cast<int>(clip.samples.size()) < cfg.segment_length) {
    AudioClip padded = clip;
    padded.samples.resize(cfg.segment_length, 0.0);
    return sample_segment(padded, mel_features(padded, cfg), cfg, rng);
  }
  return sample_segment(clip, mel_features(clip, cfg), cfg, rng);
}

std::vector<SynthClip> synth_corpus(const SynthSpec& spec) {
  if (spec.n_clips < 0) throw ConfigError("synth_corpus: n_clips must be >= 0");
  if (spec.clip_seconds <= 0.0 || spec.sample_rate <= 0.0)
    throw ConfigError("synth_corpus: sizes must be positive");

  const auto n = static_cast<std::size_t>(
      std::llround(spec.clip_seconds * spec.sample_rate));
  std::vector<SynthClip> out;
  out.reserve(spec.n_clips);

  Rng master(spec.seed);
  for (int c = 0; c < spec.n_clips; ++c) {
    Rng rng = master.fork(static_cast<std::uint64_t>(c) + 1);
    SynthClip sc;
    sc.fundamental_hz = rng.uniform(80.0, 400.0);
    sc.harmonics = 2 + static_cast<int>(rng.uniform_int(4));

    std::vector<double> phases(sc.harmonics);
    for (auto& p : phases) p = rng.uniform(0.0, 2.0 * M_PI);
    const double env_hz = rng.uniform(0.5, 2.0);
    const double env_phase = rng.uniform(0.0, 2.0 * M_PI);

    std::vector<double> x(n, 0.0);
    const double nyquist = spec.sample_rate / 2.0;
    for (int k = 0; k < sc.harmonics; ++k) {
      const double f = sc.fundamental_hz * (k + 1);
      if (f >= nyquist) break;
      const double amp = 1.0 / (k + 1);
      for (std::size_t i = 0; i < n; ++i)
        x[i] += amp * std::sin(2.0 * M_PI * f * i / spec.sample_rate + phases[k]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double env =
          0.55 + 0.45 * std::sin(2.0 * M_PI * env_hz * i / spec.sample_rate +
                                 env_phase);
      x[i] *= env;
    }
    // -30 dB noise floor relative to the 0.95 peak target.
    const double noise_amp = 0.95 * std::pow(10.0, -30.0 / 20.0);
    for (auto& v : x) v += noise_amp * rng.normal();

    double peak = 0.0;
    for (double v : x) peak = std::max(peak, std::fabs(v));
    const double gain = 0.95 / peak;
    for (auto& v : x) v *= gain;

    char id[32];
    std::snprintf(id, sizeof(id), "clip-%05d", c);
    sc.clip = AudioClip{std::move(x), spec.sample_rate, id};
    out.push_back(std::move(sc));
  }
  return out;
}

void DatasetSplit::validate() const {
  std::set<std::string> seen;
  for (const auto* list : {&train_ids, &search_ids, &test_ids})
    for (const auto& id : *list)
      if (!seen.insert(id).second)
        throw ConfigError("DatasetSplit: id in multiple splits: " + id);
}

DatasetSplit CorpusManifest::split() const {
  DatasetSplit s;
  for (const auto& e : entries) {
    if (e.split == "train") s.train_ids.push_back(e.id);
    else if (e.split == "search") s.search_ids.push_back(e.id);
    else if (e.split == "test") s.test_ids.push_back(e.id);
    else throw ConfigError("CorpusManifest: unknown split " + e.split);
  }
  s.validate();
  return s;
}

std::uint64_t CorpusManifest::digest() const { return fnv1a64(to_json().dump()); }

nlohmann::json CorpusManifest::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries)
    arr.push_back({{"id", e.id},
                   {"path", e.path},
                   {"n_samples", e.n_samples},
                   {"sample_rate", e.sample_rate},
                   {"split", e.split},
                   {"fundamental_hz", e.fundamental_hz}});
  return {{"clips", arr}};
}

CorpusManifest CorpusManifest::from_json(const nlohmann::json& j) {
  CorpusManifest m;
  for (const auto& e : j.at("clips")) {
    ManifestEntry me;
    me.id = e.at("id").get<std::string>();
    me.path = e.at("path").get<std::string>();
    me.n_samples = e.at("n_samples").get<std::int64_t>();
    me.sample_rate = e.at("sample_rate").get<double>();
    me.split = e.at("split").get<std::string>();
    me.fundamental_hz = e.value("fundamental_hz", 0.0);
    m.entries.push_back(std::move(me));
  }
  return m;
}

void CorpusManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("CorpusManifest: cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

CorpusManifest CorpusManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("CorpusManifest: cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

Dataset Dataset::load(const std::filesystem::path& manifest_path) {
  Dataset d;
  d.manifest_ = CorpusManifest::load(manifest_path);
  const auto dir = manifest_path.parent_path();
  d.clips_.reserve(d.manifest_.entries.size());
  for (const auto& e : d.manifest_.entries) {
    AudioClip clip = load_wav(dir / e.path);
    clip.id = e.id;
    if (static_cast<std::int64_t>(clip.samples.size()) != e.n_samples)
      throw IoError("Dataset: sample count mismatch for " + e.id);
    d.clips_.push_back(std::move(clip));
  }
  return d;
}

Dataset Dataset::from_clips(std::vector<AudioClip> clips,
                            CorpusManifest manifest) {
  if (clips.size() != manifest.entries.size())
    throw ContractError("Dataset: clip/manifest size mismatch");
  Dataset d;
  d.manifest_ = std::move(manifest);
  d.clips_ = std::move(clips);
  return d;
}

const AudioClip& Dataset::clip_by_id(const std::string& id) const {
  for (const auto& c : clips_)
    if (c.id == id) return c;
  throw ContractError("Dataset: unknown clip id " + id);
}

std::vector<const AudioClip*> Dataset::clips_for_split(
    const std::string& split) const {
  std::vector<const AudioClip*> out;
  for (std::size_t i = 0; i < manifest_.entries.size(); ++i)
    if (manifest_.entries[i].split == split) out.push_back(&clips_[i]);
  return out;
}

std::uint64_t Dataset::digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& c : clips_) {
    h = fnv1a64(c.id, h);
    const std::uint64_t n = c.samples.size();
    h = fnv1a64(&n, sizeof(n), h);
    h = fnv1a64(std::span<const double>(c.samples), h);
  }
  return h;
}

}  // namespace diffvoc
