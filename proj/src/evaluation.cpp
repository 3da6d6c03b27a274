// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffvoc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "diffvoc/errors.hpp"

namespace diffvoc {

namespace {

constexpr double kMrstftLogFloor = 1e-7;

std::vector<double> log_mel_of(std::span<const double> x,
                               const FeatureConfig& cfg) {
  AudioClip clip{std::vector<double>(x.begin(), x.end()), cfg.sample_rate,
                 "metric"};
  return mel_features(clip, cfg).data;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Simple dot scatter of per-index values, dark dots on white.
void write_scatter_pgm(const std::vector<double>& values,
                       const std::filesystem::path& path) {
  const int width = std::max<int>(64, static_cast<int>(values.size()) * 8);
  const int height = 160;
  std::vector<unsigned char> img(static_cast<std::size_t>(width) * height,
                                 255);
  double lo = 0.0, hi = 1e-12;
  for (double v : values) hi = std::max(hi, v);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int cx = static_cast<int>((i + 0.5) * width / values.size());
    const double t = (values[i] - lo) / (hi - lo);
    const int cy = height - 1 -
                   static_cast<int>(t * (height - 9)) - 4;
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx) {
        const int x = cx + dx, y = cy + dy;
        if (x >= 0 && x < width && y >= 0 && y < height)
          img[static_cast<std::size_t>(y) * width + x] = 0;
      }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_scatter_pgm: cannot write " + path.string());
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data()),
            static_cast<std::streamsize>(img.size()));
}

}  // namespace

double ls_mse(std::span<const double> x, std::span<const double> x_hat,
              const FeatureConfig& cfg) {
  if (x.size() != x_hat.size()) throw ContractError("ls_mse: length mismatch");
  const auto a = log_mel_of(x, cfg);
  const auto b = log_mel_of(x_hat, cfg);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

double l1_mel(std::span<const double> x, std::span<const double> x_hat,
              const FeatureConfig& cfg) {
  if (x.size() != x_hat.size()) throw ContractError("l1_mel: length mismatch");
  const auto a = log_mel_of(x, cfg);
  const auto b = log_mel_of(x_hat, cfg);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::fabs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

double mrstft_metric(std::span<const double> x, std::span<const double> x_hat,
                     const MultiResConfig& cfg) {
  if (x.size() != x_hat.size())
    throw ContractError("mrstft_metric: length mismatch");
  cfg.validate();

  double acc = 0.0;
  for (const auto& res : cfg.resolutions) {
    const auto sx = stft(x, res);
    const auto sh = stft(x_hat, res);

    double diff2 = 0.0, ref2 = 0.0, log_l1 = 0.0;
    for (std::size_t i = 0; i < sx.magnitude.size(); ++i) {
      const double d = sx.magnitude[i] - sh.magnitude[i];
      diff2 += d * d;
      ref2 += sx.magnitude[i] * sx.magnitude[i];
      log_l1 += std::fabs(
          std::log(std::max(sx.magnitude[i], kMrstftLogFloor)) -
          std::log(std::max(sh.magnitude[i], kMrstftLogFloor)));
    }
    if (ref2 == 0.0)
      throw NumericalError(
          "mrstft_metric: reference spectrum has zero energy");
    acc += std::sqrt(diff2) / std::sqrt(ref2) +
           log_l1 / static_cast<double>(sx.magnitude.size());
  }
  return acc / static_cast<double>(cfg.resolutions.size());
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : per_clip)
    clips.push_back({{"clip_id", c.clip_id},
                     {"ls_mse", c.ls_mse},
                     {"mrstft", c.mrstft},
                     {"l1_mel", c.l1_mel}});
  // pesq/stoi columns are reserved for externally computed values.
  return {{"model_id", model_id},
          {"schedule", schedule.betas_hat},
          {"n_steps", n_steps},
          {"clips", clips},
          {"aggregate",
           {{"ls_mse", aggregate.ls_mse},
            {"mrstft", aggregate.mrstft},
            {"l1_mel", aggregate.l1_mel}}},
          {"pesq", nullptr},
          {"stoi", nullptr}};
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  os << "clip_id\tls_mse\tmrstft\tl1_mel\n";
  for (const auto& c : per_clip)
    os << c.clip_id << "\t" << fmt_double(c.ls_mse) << "\t"
       << fmt_double(c.mrstft) << "\t" << fmt_double(c.l1_mel) << "\n";
  os << "mean\t" << fmt_double(aggregate.ls_mse) << "\t"
     << fmt_double(aggregate.mrstft) << "\t" << fmt_double(aggregate.l1_mel)
     << "\n";
  return os.str();
}

std::vector<double> generate_for_clip(const NoisePredictor& predictor,
                                      const AudioClip& clip,
                                      const InferenceSchedule& schedule,
                                      const FeatureConfig& cfg,
                                      const GenerateOptions& opts) {
  const int hop = cfg.hop_length;
  const auto usable =
      static_cast<std::int64_t>(clip.samples.size()) / hop * hop;
  if (usable == 0) throw ContractError("generate_for_clip: clip too short");
  AudioClip trimmed{{clip.samples.begin(), clip.samples.begin() + usable},
                    clip.sample_rate,
                    clip.id};
  const auto mel = mel_features(trimmed, cfg)
                       .slice(0, static_cast<int>(usable / hop));
  Rng rng(fnv1a64(clip.id, schedule.digest()));
  return generate(predictor, mel, schedule, rng, opts);
}

MetricsReport evaluate_model(const NoisePredictor& predictor,
                             const std::vector<const AudioClip*>& clips,
                             const InferenceSchedule& schedule,
                             const FeatureConfig& feature,
                             const MultiResConfig& multires,
                             const std::string& model_id) {
  if (clips.empty()) throw ContractError("evaluate_model: no clips");
  MetricsReport report;
  report.model_id = model_id;
  report.schedule = schedule;
  report.n_steps = schedule.steps();

  for (const auto* clip : clips) {
    const auto x_hat = generate_for_clip(predictor, *clip, schedule, feature);
    std::span<const double> ref(clip->samples.data(), x_hat.size());
    ClipMetrics m;
    m.clip_id = clip->id;
    m.ls_mse = ls_mse(ref, x_hat, feature);
    m.mrstft = mrstft_metric(ref, x_hat, multires);
    m.l1_mel = l1_mel(ref, x_hat, feature);
    report.aggregate.ls_mse += m.ls_mse;
    report.aggregate.mrstft += m.mrstft;
    report.aggregate.l1_mel += m.l1_mel;
    report.per_clip.push_back(std::move(m));
  }
  const double inv = 1.0 / static_cast<double>(report.per_clip.size());
  report.aggregate.clip_id = "mean";
  report.aggregate.ls_mse *= inv;
  report.aggregate.mrstft *= inv;
  report.aggregate.l1_mel *= inv;
  return report;
}

nlohmann::json SweepReport::to_json() const {
  nlohmann::json schedules = nlohmann::json::array();
  for (const auto& r : per_schedule) {
    nlohmann::json violations = nlohmann::json::array();
    for (const auto& v : r.validation.violations) {
      nlohmann::json entry{{"rule", rule_name(v.rule)},
                           {"measured", v.measured},
                           {"bound", v.bound}};
      if (v.step) entry["step"] = *v.step;
      violations.push_back(entry);
    }
    schedules.push_back({{"betas_hat", r.schedule.betas_hat},
                         {"l1_mel", r.mean_l1},
                         {"failed", r.failed},
                         {"error", r.error},
                         {"valid", r.validation.passed},
                         {"violations", violations}});
  }
  nlohmann::json j{{"model_id", model_id},
                   {"grid", grid_description},
                   {"schedules", schedules},
                   {"mean", mean},
                   // population standard deviation
                   {"std", std_dev}};
  if (best_index) j["best_index"] = *best_index;
  return j;
}

std::string SweepReport::to_table() const {
  std::ostringstream os;
  os << "index\tschedule\tl1_mel\tvalid\tviolations\terror\n";
  for (std::size_t i = 0; i < per_schedule.size(); ++i) {
    const auto& r = per_schedule[i];
    os << i << "\t";
    for (std::size_t s = 0; s < r.schedule.betas_hat.size(); ++s) {
      if (s) os << ",";
      os << fmt_double(r.schedule.betas_hat[s]);
    }
    os << "\t" << (r.failed ? "-" : fmt_double(r.mean_l1)) << "\t"
       << (r.validation.passed ? 1 : 0) << "\t"
       << r.validation.violations.size() << "\t" << r.error << "\n";
  }
  os << "# mean\t" << fmt_double(mean) << "\n";
  os << "# std\t" << fmt_double(std_dev) << "\n";
  if (best_index) os << "# best_index\t" << *best_index << "\n";
  return os.str();
}

namespace {

SweepReport sweep_core(const NoisePredictor& predictor,
                       const std::vector<const AudioClip*>& clips,
                       const std::vector<InferenceSchedule>& grid,
                       const FeatureConfig& feature,
                       const NoiseSchedule& training_schedule,
                       const std::string& model_id) {
  if (grid.empty()) throw ContractError("sweep: empty schedule grid");
  if (clips.empty()) throw ContractError("sweep: no clips");

  SweepReport report;
  report.model_id = model_id;
  {
    std::ostringstream os;
    os << grid.size() << " schedules, N=" << grid.front().steps() << ", "
       << clips.size() << " clips";
    report.grid_description = os.str();
  }

  for (const auto& schedule : grid) {
    ScheduleResult r;
    r.schedule = schedule;
    r.validation = validate_inference_schedule(schedule, training_schedule);
    try {
      double acc = 0.0;
      for (const auto* clip : clips) {
        const auto x_hat =
            generate_for_clip(predictor, *clip, schedule, feature);
        std::span<const double> ref(clip->samples.data(), x_hat.size());
        acc += l1_mel(ref, x_hat, feature);
      }
      r.mean_l1 = acc / static_cast<double>(clips.size());
    } catch (const NumericalError& e) {
      r.failed = true;
      r.error = e.what();
    }
    report.per_schedule.push_back(std::move(r));
  }

  // Mean/std over the non-failed points (population definition), best by
  // value with a lexicographic schedule tie-break.
  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < report.per_schedule.size(); ++i) {
    const auto& r = report.per_schedule[i];
    if (r.failed) continue;
    sum += r.mean_l1;
    sum2 += r.mean_l1 * r.mean_l1;
    ++count;
    if (!report.best_index) {
      report.best_index = i;
    } else {
      const auto& best = report.per_schedule[*report.best_index];
      if (r.mean_l1 < best.mean_l1 ||
          (r.mean_l1 == best.mean_l1 &&
           r.schedule.betas_hat < best.schedule.betas_hat))
        report.best_index = i;
    }
  }
  if (count > 0) {
    report.mean = sum / static_cast<double>(count);
    const double var =
        std::max(0.0, sum2 / static_cast<double>(count) -
                          report.mean * report.mean);
    report.std_dev = std::sqrt(var);
  }
  return report;
}

}  // namespace

SweepReport grid_search(const NoisePredictor& predictor,
                        const std::vector<const AudioClip*>& clips,
                        const std::vector<InferenceSchedule>& grid,
                        const FeatureConfig& feature,
                        const NoiseSchedule& training_schedule,
                        const std::string& model_id) {
  return sweep_core(predictor, clips, grid, feature, training_schedule,
                    model_id);
}

SweepReport sensitivity_sweep(const NoisePredictor& predictor,
                              const std::vector<const AudioClip*>& clips,
                              const std::vector<InferenceSchedule>& grid,
                              const FeatureConfig& feature,
                              const NoiseSchedule& training_schedule,
                              const std::string& model_id) {
  return sweep_core(predictor, clips, grid, feature, training_schedule,
                    model_id);
}

namespace {

std::vector<std::filesystem::path> write_formats(
    const nlohmann::json& j, const std::string& table,
    const std::filesystem::path& dir, const std::string& stem,
    const std::vector<ReportFormat>& formats) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto f : formats) {
    if (f == ReportFormat::kJson) {
      const auto path = dir / (stem + ".json");
      std::ofstream out(path);
      if (!out) throw IoError("emit_report: cannot write " + path.string());
      out << j.dump(2) << "\n";
      written.push_back(path);
    } else {
      const auto path = dir / (stem + ".tsv");
      std::ofstream out(path);
      if (!out) throw IoError("emit_report: cannot write " + path.string());
      out << table;
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace

std::vector<std::filesystem::path> emit_report(
    const SweepReport& report, const std::filesystem::path& dir,
    const std::vector<ReportFormat>& formats, bool plot) {
  auto written =
      write_formats(report.to_json(), report.to_table(), dir, "sweep", formats);
  if (plot) {
    std::vector<double> values;
    for (const auto& r : report.per_schedule)
      values.push_back(r.failed ? 0.0 : r.mean_l1);
    const auto path = dir / "sweep.pgm";
    write_scatter_pgm(values, path);
    written.push_back(path);
  }
  return written;
}

std::vector<std::filesystem::path> emit_report(
    const MetricsReport& report, const std::filesystem::path& dir,
    const std::vector<ReportFormat>& formats, bool plot) {
  auto written = write_formats(report.to_json(), report.to_table(), dir,
                               "metrics", formats);
  if (plot) {
    std::vector<double> values;
    for (const auto& c : report.per_clip) values.push_back(c.l1_mel);
    const auto path = dir / "metrics.pgm";
    write_scatter_pgm(values, path);
    written.push_back(path);
  }
  return written;
}

void write_spectrogram_pgm(const MelConditioner& mel,
                           const std::filesystem::path& path) {
  if (mel.frames <= 0 || mel.n_mels <= 0)
    throw ContractError("write_spectrogram_pgm: empty conditioner");
  double lo = mel.data[0], hi = mel.data[0];
  for (double v : mel.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;

  // Rows are bands (low band at the bottom), columns are frames.
  std::vector<unsigned char> img(mel.data.size());
  for (int f = 0; f < mel.frames; ++f)
    for (int b = 0; b < mel.n_mels; ++b) {
      const double t = (mel.frame(f)[b] - lo) / span;
      img[static_cast<std::size_t>(mel.n_mels - 1 - b) * mel.frames + f] =
          static_cast<unsigned char>(std::lround(255.0 * t));
    }
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("write_spectrogram_pgm: cannot write " + path.string());
  out << "P5\n" << mel.frames << " " << mel.n_mels << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data()),
            static_cast<std::streamsize>(img.size()));
}

}  // namespace diffvoc
