// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffvoc/noise_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "diffvoc/errors.hpp"
#include "diffvoc/rng.hpp"

namespace diffvoc {

namespace {

constexpr char kMagic[4] = {'D', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

// Fixed sinusoidal basis of the level embedding: frequency ladder from 5000
// down to 5, applied to the conditioning sqrt(alpha_bar). The slowest pair
// stays within one revolution over (0,1], which keeps the map injective.
std::vector<double> sinusoid_features(int dims, double level) {
  const int half = dims / 2;
  std::vector<double> out(dims);
  for (int k = 0; k < half; ++k) {
    const double expo = half == 1 ? 0.0 : -3.0 * k / (half - 1);
    const double freq = 5000.0 * std::pow(10.0, expo);
    out[2 * k] = std::sin(freq * level);
    out[2 * k + 1] = std::cos(freq * level);
  }
  return out;
}

// Group layout in checkpoint/optimizer order.
ParamStore build_layout(const NetworkConfig& cfg) {
  const int e = cfg.level_embedding_dim;
  const int s = cfg.sinusoid_dims();
  const int c0 = cfg.channel_widths.front();
  const int c_last = cfg.channel_widths.back();

  ParamStore store;
  store.add("embed.w", static_cast<std::size_t>(e) * s);
  store.add("embed.b", e);
  store.add("film.w", static_cast<std::size_t>(c_last + 1) * e);
  store.add("film.b", c_last + 1);
  store.add("mel_in.w", static_cast<std::size_t>(c0) * cfg.n_mels);
  store.add("mel_in.b", c0);
  int c_in = c0;
  for (std::size_t i = 0; i < cfg.channel_widths.size(); ++i) {
    const int c_out = cfg.channel_widths[i];
    store.add("stage" + std::to_string(i) + ".w",
              static_cast<std::size_t>(c_out) * c_in * 3);
    store.add("stage" + std::to_string(i) + ".b", c_out);
    c_in = c_out;
  }
  store.add("x_proj.w", c_last);
  store.add("out.w", c_last);
  store.add("out.b", 1);
  return store;
}

}  // namespace

NetworkConfig NetworkConfig::desk() {
  NetworkConfig cfg;
  cfg.upsample_factors = {4, 2};
  cfg.channel_widths = {8, 8};
  cfg.level_embedding_dim = 32;
  cfg.n_mels = 16;
  cfg.preset = Preset::kDesk;
  return cfg;
}

NetworkConfig NetworkConfig::paper() {
  NetworkConfig cfg;
  cfg.upsample_factors = {4, 4, 4, 2, 2};
  cfg.channel_widths = {512, 512, 256, 128, 128};
  cfg.level_embedding_dim = 512;
  cfg.n_mels = 80;
  cfg.preset = Preset::kPaper;
  return cfg;
}

int NetworkConfig::hop() const {
  int h = 1;
  for (int f : upsample_factors) h *= f;
  return h;
}

int NetworkConfig::sinusoid_dims() const {
  const int s = std::max(4, level_embedding_dim / 8);
  return s + (s % 2);
}

std::size_t NetworkConfig::param_count() const {
  const auto layout = build_layout(*this);
  return layout.flat_size();
}

void NetworkConfig::validate() const {
  if (upsample_factors.empty())
    throw ConfigError("NetworkConfig: need at least one stage");
  if (channel_widths.size() != upsample_factors.size())
    throw ConfigError("NetworkConfig: one channel width per stage");
  for (int f : upsample_factors)
    if (f <= 0) throw ConfigError("NetworkConfig: factors must be positive");
  for (int c : channel_widths)
    if (c <= 0) throw ConfigError("NetworkConfig: widths must be positive");
  if (level_embedding_dim <= 0 || n_mels <= 0)
    throw ConfigError("NetworkConfig: dims must be positive");
}

std::uint64_t NetworkConfig::digest() const { return fnv1a64(to_json().dump()); }

nlohmann::json NetworkConfig::to_json() const {
  return {{"upsample_factors", upsample_factors},
          {"channel_widths", channel_widths},
          {"level_embedding_dim", level_embedding_dim},
          {"n_mels", n_mels},
          {"preset", preset == Preset::kDesk ? "desk" : "paper"}};
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig cfg;
  cfg.upsample_factors = j.at("upsample_factors").get<std::vector<int>>();
  cfg.channel_widths = j.at("channel_widths").get<std::vector<int>>();
  cfg.level_embedding_dim = j.at("level_embedding_dim").get<int>();
  cfg.n_mels = j.at("n_mels").get<int>();
  cfg.preset =
      j.value("preset", "desk") == std::string("paper") ? Preset::kPaper
                                                        : Preset::kDesk;
  cfg.validate();
  return cfg;
}

void ParamStore::add(std::string name, std::size_t size) {
  groups_.push_back({std::move(name), std::vector<double>(size, 0.0)});
}

ParamStore::Group& ParamStore::group(const std::string& name) {
  for (auto& g : groups_)
    if (g.name == name) return g;
  throw ContractError("ParamStore: no group " + name);
}

const ParamStore::Group& ParamStore::group(const std::string& name) const {
  for (const auto& g : groups_)
    if (g.name == name) return g;
  throw ContractError("ParamStore: no group " + name);
}

std::size_t ParamStore::flat_size() const {
  std::size_t n = 0;
  for (const auto& g : groups_) n += g.values.size();
  return n;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> out;
  out.reserve(flat_size());
  for (const auto& g : groups_)
    out.insert(out.end(), g.values.begin(), g.values.end());
  return out;
}

void ParamStore::unflatten(std::span<const double> flat) {
  if (flat.size() != flat_size())
    throw ContractError("ParamStore::unflatten: size mismatch");
  std::size_t pos = 0;
  for (auto& g : groups_) {
    std::copy_n(flat.begin() + pos, g.values.size(), g.values.begin());
    pos += g.values.size();
  }
}

bool ParamStore::all_finite() const {
  for (const auto& g : groups_)
    for (double v : g.values)
      if (!std::isfinite(v)) return false;
  return true;
}

NoisePredictor NoisePredictor::init(const NetworkConfig& config,
                                    std::uint64_t seed) {
  config.validate();
  NoisePredictor p;
  p.config = config;
  p.params = build_layout(config);
  p.step_count = 0;

  Rng rng(seed ^ 0xd1ffb0c5u);
  auto fill_scaled = [&](const std::string& name, std::size_t fan_in) {
    auto& g = p.params.group(name);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : g.values) v = scale * rng.normal();
  };

  const int s = config.sinusoid_dims();
  const int e = config.level_embedding_dim;
  fill_scaled("embed.w", s);
  fill_scaled("film.w", e);
  fill_scaled("mel_in.w", config.n_mels);
  int c_in = config.channel_widths.front();
  for (std::size_t i = 0; i < config.channel_widths.size(); ++i) {
    fill_scaled("stage" + std::to_string(i) + ".w",
                static_cast<std::size_t>(c_in) * 3);
    c_in = config.channel_widths[i];
  }
  fill_scaled("x_proj.w", 1);
  // Near-zero output head: the untrained predictor starts in the
  // eps_hat ~ 0 regime.
  {
    auto& g = p.params.group("out.w");
    for (auto& v : g.values) v = 0.01 * rng.normal();
  }
  // Film bias opens both the feature scales and the signal gate.
  for (auto& v : p.params.group("film.b").values) v = 1.0;
  return p;
}

PredictorGraph::PredictorGraph(const NoisePredictor& predictor,
                               bool requires_grad)
    : config_(predictor.config) {
  for (const auto& g : predictor.params.groups()) {
    std::int64_t rows = 1;
    const int e = config_.level_embedding_dim;
    const int c_last = config_.channel_widths.back();
    if (g.name == "embed.w") rows = e;
    else if (g.name == "film.w") rows = c_last + 1;
    else if (g.name == "mel_in.w") rows = config_.channel_widths.front();
    else if (g.name.starts_with("stage") && g.name.ends_with(".w")) {
      const int idx = std::stoi(g.name.substr(5, g.name.size() - 7));
      rows = config_.channel_widths[idx];
    } else if (g.name == "x_proj.w") rows = c_last;
    else if (g.name == "out.w") rows = 1;
    leaves_.emplace(g.name, ad::Var::leaf(g.values, requires_grad, rows));
    order_.push_back(g.name);
  }
}

ad::Var PredictorGraph::embed_level(double sqrt_alpha_bar) const {
  if (!(sqrt_alpha_bar > 0.0 && sqrt_alpha_bar <= 1.0))
    throw ContractError("embed_level: sqrt_alpha_bar must lie in (0, 1]");
  ad::Var s = ad::Var::constant(
      sinusoid_features(config_.sinusoid_dims(), sqrt_alpha_bar));
  return ad::add(ad::matvec(leaves_.at("embed.w"), s), leaves_.at("embed.b"));
}

ad::Var PredictorGraph::predict(const ad::Var& x_t, const MelConditioner& mel,
                                double sqrt_alpha_bar) const {
  if (mel.n_mels != config_.n_mels)
    throw ContractError("predict_noise: conditioner bands do not match config");
  const std::int64_t want = static_cast<std::int64_t>(config_.hop()) * mel.frames;
  if (x_t.size() != want)
    throw ContractError("predict_noise: waveform length must be hop * frames");

  // Level pathway: embedding -> per-channel scales + signal gate.
  ad::Var emb = embed_level(sqrt_alpha_bar);
  ad::Var film =
      ad::add(ad::matvec(leaves_.at("film.w"), emb), leaves_.at("film.b"));
  const int c_last = config_.channel_widths.back();
  ad::Var scales = ad::slice(film, 0, c_last);
  ad::Var gate = ad::slice(film, c_last, c_last + 1);

  // Mel pathway: transpose to (bands x frames), project, upsample stages.
  std::vector<double> mel_t(static_cast<std::size_t>(mel.n_mels) * mel.frames);
  for (int f = 0; f < mel.frames; ++f)
    for (int b = 0; b < mel.n_mels; ++b)
      mel_t[static_cast<std::size_t>(b) * mel.frames + f] =
          mel.data[static_cast<std::size_t>(f) * mel.n_mels + b];
  ad::Var h = ad::conv1d(ad::Var::constant(std::move(mel_t), mel.n_mels),
                         leaves_.at("mel_in.w"), leaves_.at("mel_in.b"), 1);
  for (std::size_t i = 0; i < config_.upsample_factors.size(); ++i) {
    h = ad::upsample_repeat(h, config_.upsample_factors[i]);
    h = ad::tanh(ad::conv1d(h, leaves_.at("stage" + std::to_string(i) + ".w"),
                            leaves_.at("stage" + std::to_string(i) + ".b"), 3));
  }

  // Signal pathway and merge.
  ad::Var xp = ad::conv1d(x_t, leaves_.at("x_proj.w"), ad::Var(), 1);
  ad::Var merged = ad::add(ad::channel_scale(h, scales),
                           ad::mul_scalar_var(xp, gate));
  ad::Var act = ad::tanh(merged);
  return ad::conv1d(act, leaves_.at("out.w"), leaves_.at("out.b"), 1);
}

std::vector<double> PredictorGraph::grad_flat() const {
  std::vector<double> out;
  for (const auto& name : order_) {
    const auto& g = leaves_.at(name).grad();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

std::vector<double> NoisePredictor::embed_level(double sqrt_alpha_bar) const {
  PredictorGraph g(*this, false);
  return g.embed_level(sqrt_alpha_bar).value();
}

std::vector<double> NoisePredictor::predict_noise(std::span<const double> x_t,
                                                  const MelConditioner& mel,
                                                  double sqrt_alpha_bar) const {
  PredictorGraph g(*this, false);
  return g.predict(ad::Var::constant(x_t), mel, sqrt_alpha_bar).value();
}

namespace {

struct ByteSink {
  std::vector<char> bytes;

  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
};

struct ByteSource {
  const std::vector<char>& bytes;
  std::size_t pos = 0;

  void raw(void* p, std::size_t n) {
    if (pos + n > bytes.size())
      throw IoError("checkpoint: truncated container");
    std::memcpy(p, bytes.data() + pos, n);
    pos += n;
  }
  std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
  std::int64_t i64() { std::int64_t v; raw(&v, 8); return v; }
  std::string str() {
    const auto n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::vector<double> doubles() {
    const auto n = u64();
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }
};

}  // namespace

void save_checkpoint(const NoisePredictor& predictor,
                     const std::filesystem::path& path,
                     const std::vector<ParamStore::Group>& extra_blobs) {
  ByteSink sink;
  sink.raw(kMagic, 4);
  sink.u32(kVersion);
  sink.u64(predictor.config.digest());
  sink.i64(predictor.step_count);
  sink.str(predictor.config.to_json().dump());

  const auto& groups = predictor.params.groups();
  sink.u32(static_cast<std::uint32_t>(groups.size() + extra_blobs.size()));
  for (const auto& g : groups) {
    sink.str(g.name);
    sink.doubles(g.values);
  }
  for (const auto& g : extra_blobs) {
    sink.str(g.name);
    sink.doubles(g.values);
  }
  sink.u64(fnv1a64(sink.bytes.data(), sink.bytes.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write " + path.string());
  out.write(sink.bytes.data(), static_cast<std::streamsize>(sink.bytes.size()));
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

const ParamStore::Group* Checkpoint::find_blob(const std::string& name) const {
  for (const auto& g : extra_blobs)
    if (g.name == name) return &g;
  return nullptr;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot read " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() < 24) throw IoError("checkpoint: file too small");

  // Verify the trailing checksum before trusting any field.
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a64(bytes.data(), bytes.size() - 8) != stored)
    throw IoError("checkpoint: checksum mismatch (corrupt file)");

  ByteSource src{bytes};
  char magic[4];
  src.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic");
  const auto version = src.u32();
  if (version != kVersion)
    throw IoError("checkpoint: unsupported format version " +
                  std::to_string(version));
  const auto header_digest = src.u64();
  const auto step_count = src.i64();
  const auto config_json = src.str();

  Checkpoint ckpt;
  ckpt.predictor.config =
      NetworkConfig::from_json(nlohmann::json::parse(config_json));
  if (ckpt.predictor.config.digest() != header_digest)
    throw IoError("checkpoint: header digest does not match stored config");
  ckpt.predictor.step_count = step_count;
  ckpt.predictor.params = build_layout(ckpt.predictor.config);

  const auto n_blobs = src.u32();
  for (std::uint32_t i = 0; i < n_blobs; ++i) {
    std::string name = src.str();
    std::vector<double> values = src.doubles();
    bool is_param = false;
    for (auto& g : ckpt.predictor.params.groups()) {
      if (g.name == name) {
        if (g.values.size() != values.size())
          throw IoError("checkpoint: blob size mismatch for " + name);
        g.values = std::move(values);
        is_param = true;
        break;
      }
    }
    if (!is_param) ckpt.extra_blobs.push_back({std::move(name), std::move(values)});
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const NetworkConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.predictor.config.digest() != expected.digest())
    throw ConfigError(
        "checkpoint: stored network config does not match the expected one");
  return ckpt;
}

}  // namespace diffvoc
