// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry points: dataset synthesis, the two training phases,
// conditioned sampling, schedule grid search, sensitivity sweeps, and
// objective evaluation. Every command stamps a run manifest into its
// output directory so results stay attributable to a config digest and
// seed. Exit codes: 0 success, 1 usage/config error, 2 schedule validation
// failure, 3 runtime or numerical failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "diffvoc/config.hpp"
#include "diffvoc/errors.hpp"
#include "diffvoc/evaluation.hpp"
#include "diffvoc/trainer.hpp"
#include "diffvoc/version.hpp"

namespace fs = std::filesystem;
using namespace diffvoc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct ValidationRefused : Error {
  using Error::Error;
};

fs::path resolve_out(const std::string& out, const std::string& command) {
  if (!out.empty()) return fs::path(out);
  const char* root = std::getenv("DIFFVOC_OUT");
  return fs::path(root ? root : "out") / command;
}

std::uint64_t file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return fnv1a64(bytes);
}

void write_run_manifest(const fs::path& out_dir, const std::string& command,
                        const std::string& config_path,
                        std::uint64_t config_digest, std::uint64_t seed,
                        const std::vector<std::string>& args) {
  fs::create_directories(out_dir);
  nlohmann::json j{{"command", command},
                   {"config_path", config_path},
                   {"config_digest", config_digest},
                   {"seed", seed},
                   {"version", kVersion},
                   {"out_dir", out_dir.string()},
                   {"args", args}};
  if (!config_path.empty()) j["config_file_digest"] = file_digest(config_path);
  std::ofstream out(out_dir / "run_manifest.json");
  if (!out) throw IoError("cannot write run manifest in " + out_dir.string());
  out << j.dump(2) << "\n";
}

InferenceSchedule parse_schedule_arg(const std::string& inline_arg,
                                     const std::string& file_arg) {
  if (!inline_arg.empty()) {
    InferenceSchedule s;
    std::stringstream ss(inline_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) s.betas_hat.push_back(std::stod(tok));
    s.validate();
    return s;
  }
  if (!file_arg.empty()) {
    std::ifstream in(file_arg);
    if (!in) throw IoError("cannot read schedule file " + file_arg);
    nlohmann::json j;
    in >> j;
    return inference_schedule_from_json(j);
  }
  throw ConfigError("a schedule is required (--schedule or --schedule-file)");
}

std::vector<ReportFormat> parse_formats(const std::string& arg) {
  if (arg == "json") return {ReportFormat::kJson};
  if (arg == "table") return {ReportFormat::kTable};
  if (arg == "both") return {ReportFormat::kJson, ReportFormat::kTable};
  throw ConfigError("unknown --format " + arg + " (json|table|both)");
}

// ---- make-dataset ----

int cmd_make_dataset(const std::string& out_arg, int n_train, int n_search,
                     int n_test, double clip_seconds, std::uint64_t seed,
                     bool force, const std::vector<std::string>& args) {
  const fs::path out = resolve_out(out_arg, "dataset");
  if (fs::exists(out / "manifest.json") && !force)
    throw ConfigError("dataset already exists at " + out.string() +
                      "; pass --force to overwrite");
  const int n_clips = n_train + n_search + n_test;
  if (n_clips == 0)
    std::cerr << "warning: zero clips requested; writing an empty manifest\n";

  SynthSpec spec{n_clips, clip_seconds, seed, 8000.0};
  const auto clips = synth_corpus(spec);

  fs::create_directories(out / "wav");
  CorpusManifest manifest;
  for (int i = 0; i < n_clips; ++i) {
    const std::string split =
        i < n_train ? "train" : (i < n_train + n_search ? "search" : "test");
    char id[48];
    std::snprintf(id, sizeof(id), "%s-%04d", split.c_str(), i);
    const std::string rel = "wav/" + std::string(id) + ".wav";
    save_wav(out / rel, clips[i].clip.samples, spec.sample_rate);
    // Reload so the manifest reflects the quantized audio on disk.
    const auto stored = load_wav(out / rel);
    manifest.entries.push_back(
        {id, rel, static_cast<std::int64_t>(stored.samples.size()),
         spec.sample_rate, split, clips[i].fundamental_hz});
  }
  manifest.save(out / "manifest.json");
  write_run_manifest(out, "make-dataset", "", manifest.digest(), seed, args);
  std::cout << "wrote " << n_clips << " clips to " << out.string()
            << " (manifest digest " << manifest.digest() << ")\n";
  return kExitOk;
}

// ---- train / finetune ----

int cmd_train(const std::string& command, const std::string& config_path,
              const std::string& manifest_path, const std::string& out_arg,
              std::optional<std::uint64_t> seed_override,
              const std::string& init_from, const std::string& resume,
              const std::vector<std::string>& args) {
  RunConfig cfg = RunConfig::load(config_path);
  cfg.training.phase =
      command == "finetune" ? Phase::kFinetune : Phase::kPretrain;
  if (seed_override) cfg.training.seed = *seed_override;
  cfg.validate();

  const fs::path out = resolve_out(out_arg, command);
  const Dataset dataset = Dataset::load(manifest_path);
  write_run_manifest(out, command, config_path, cfg.digest(),
                     cfg.training.seed, args);

  std::optional<fs::path> init;
  if (!init_from.empty()) init = fs::path(init_from);
  std::optional<fs::path> res;
  if (!resume.empty()) res = fs::path(resume);

  const auto result = run_training(cfg, dataset, out, init, res);
  std::cout << "finished " << result.records.size() << " steps; final "
            << result.final_checkpoint.string() << "\n";
  if (!result.records.empty()) {
    const auto& last = result.records.back();
    std::cout << "last step losses: total " << last.losses.total << " (l_d "
              << last.losses.l_d << ", l_i " << last.losses.l_i << ")\n";
  }
  return kExitOk;
}

// ---- sample ----

int cmd_sample(const std::string& config_path, const std::string& ckpt_path,
               const std::string& schedule_arg, const std::string& schedule_file,
               const std::string& input_wav, const std::string& mel_file,
               const std::string& out_wav, std::uint64_t seed,
               bool allow_invalid, const std::vector<std::string>& args) {
  RunConfig cfg = RunConfig::load(config_path);
  const auto schedule = parse_schedule_arg(schedule_arg, schedule_file);

  const auto report =
      validate_inference_schedule(schedule, cfg.schedule.build());
  if (!report.passed) {
    std::cerr << "schedule validation: " << report.summary() << "\n";
    if (!allow_invalid)
      throw ValidationRefused(
          "schedule rejected; pass --allow-invalid to sample anyway");
  }

  const auto ckpt = load_checkpoint(ckpt_path, cfg.network);

  MelConditioner mel;
  if (!input_wav.empty()) {
    const auto clip = load_wav(input_wav);
    if (clip.sample_rate != cfg.feature.sample_rate)
      throw ConfigError("input sample rate does not match the feature config");
    const auto hop = cfg.feature.hop_length;
    const auto usable =
        static_cast<std::int64_t>(clip.samples.size()) / hop * hop;
    AudioClip trimmed{{clip.samples.begin(), clip.samples.begin() + usable},
                      clip.sample_rate,
                      clip.id};
    mel = mel_features(trimmed, cfg.feature)
              .slice(0, static_cast<int>(usable / hop));
  } else if (!mel_file.empty()) {
    std::ifstream in(mel_file);
    if (!in) throw IoError("cannot read mel file " + mel_file);
    nlohmann::json j;
    in >> j;
    mel.frames = j.at("frames").get<int>();
    mel.n_mels = j.at("n_mels").get<int>();
    mel.data = j.at("data").get<std::vector<double>>();
    mel.config_digest = cfg.feature.digest();
    if (static_cast<int>(mel.data.size()) != mel.frames * mel.n_mels)
      throw ConfigError("mel file shape mismatch");
  } else {
    throw ConfigError("conditioning is required (--input-wav or --mel)");
  }

  Rng rng(seed);
  const auto audio = generate(ckpt.predictor, mel, schedule, rng);
  const fs::path out(out_wav);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_wav(out, audio, cfg.feature.sample_rate);
  if (out.has_parent_path())
    write_run_manifest(out.parent_path(), "sample", config_path, cfg.digest(),
                       seed, args);
  std::cout << "wrote " << audio.size() << " samples ("
            << audio.size() / cfg.feature.sample_rate << " s) to "
            << out.string() << "\n";
  return kExitOk;
}

// ---- grid-search / sweep / evaluate ----

std::vector<InferenceSchedule> build_grid(const std::string& grid_file,
                                          int range_n,
                                          const std::string& mantissas_arg,
                                          const TrainingConfig& training) {
  if (!grid_file.empty()) {
    std::ifstream in(grid_file);
    if (!in) throw IoError("cannot read grid file " + grid_file);
    nlohmann::json j;
    in >> j;
    std::vector<InferenceSchedule> grid;
    for (const auto& entry : j.at("schedules"))
      grid.push_back(inference_schedule_from_json(entry));
    if (grid.empty()) throw ConfigError("grid file holds no schedules");
    return grid;
  }
  if (range_n <= 0)
    throw ConfigError("a grid is required (--grid-file or --range-n)");
  std::vector<double> mantissas{1, 2, 3, 4, 5, 6, 7, 8, 9};
  if (!mantissas_arg.empty()) {
    mantissas.clear();
    std::stringstream ss(mantissas_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) mantissas.push_back(std::stod(tok));
  }
  return enumerate_grid(training.range_for(range_n), mantissas);
}

int cmd_sweep_like(const std::string& command, const std::string& config_path,
                   const std::string& ckpt_path,
                   const std::string& manifest_path, const std::string& split,
                   const std::string& grid_file, int range_n,
                   const std::string& mantissas, const std::string& out_arg,
                   const std::string& format, bool plot,
                   const std::vector<std::string>& args) {
  RunConfig cfg = RunConfig::load(config_path);
  const auto ckpt = load_checkpoint(ckpt_path, cfg.network);
  const Dataset dataset = Dataset::load(manifest_path);
  const auto clips = dataset.clips_for_split(split);
  if (clips.empty())
    throw ConfigError("no clips in split '" + split + "'");

  const auto grid = build_grid(grid_file, range_n, mantissas, cfg.training);
  const fs::path out = resolve_out(out_arg, command);
  write_run_manifest(out, command, config_path, cfg.digest(),
                     cfg.training.seed, args);

  const auto train_sched = cfg.schedule.build();
  const std::string model_id = fs::path(ckpt_path).stem().string();
  const SweepReport report =
      command == "grid-search"
          ? grid_search(ckpt.predictor, clips, grid, cfg.feature, train_sched,
                        model_id)
          : sensitivity_sweep(ckpt.predictor, clips, grid, cfg.feature,
                              train_sched, model_id);
  const auto files = emit_report(report, out, parse_formats(format), plot);
  for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
  std::cout << "mean " << report.mean << " std " << report.std_dev;
  if (report.best_index)
    std::cout << " best "
              << report.per_schedule[*report.best_index].schedule.to_string();
  std::cout << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& config_path, const std::string& ckpt_path,
                 const std::string& manifest_path, const std::string& split,
                 const std::string& schedule_arg,
                 const std::string& schedule_file, const std::string& out_arg,
                 const std::string& format, bool plot,
                 const std::vector<std::string>& args) {
  RunConfig cfg = RunConfig::load(config_path);
  const auto ckpt = load_checkpoint(ckpt_path, cfg.network);
  const Dataset dataset = Dataset::load(manifest_path);
  const auto clips = dataset.clips_for_split(split);
  if (clips.empty()) throw ConfigError("no clips in split '" + split + "'");

  const auto schedule = parse_schedule_arg(schedule_arg, schedule_file);
  const fs::path out = resolve_out(out_arg, "evaluate");
  write_run_manifest(out, "evaluate", config_path, cfg.digest(),
                     cfg.training.seed, args);

  const auto report =
      evaluate_model(ckpt.predictor, clips, schedule, cfg.feature,
                     cfg.multires, fs::path(ckpt_path).stem().string());
  const auto files = emit_report(report, out, parse_formats(format), plot);
  for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
  std::cout << "ls_mse " << report.aggregate.ls_mse << " mrstft "
            << report.aggregate.mrstft << " l1_mel " << report.aggregate.l1_mel
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffvoc: a desk-scale diffusion vocoder laboratory"};
  app.set_version_flag("--version", std::string("diffvoc ") + kVersion);
  app.require_subcommand(1);
  std::vector<std::string> args(argv, argv + argc);

  // make-dataset
  auto* mk = app.add_subcommand("make-dataset", "synthesize a WAV corpus");
  std::string mk_out;
  int mk_train = 160, mk_search = 20, mk_test = 20;
  double mk_seconds = 1.0;
  std::uint64_t mk_seed = 1;
  bool mk_force = false;
  mk->add_option("--out", mk_out, "output directory");
  mk->add_option("--n-train", mk_train, "clips in the train split");
  mk->add_option("--n-search", mk_search, "clips in the schedule-search split");
  mk->add_option("--n-test", mk_test, "clips in the test split");
  mk->add_option("--clip-seconds", mk_seconds, "seconds per clip");
  mk->add_option("--seed", mk_seed, "corpus seed");
  mk->add_flag("--force", mk_force, "overwrite an existing dataset");

  // train / finetune
  std::string tr_config, tr_manifest, tr_out, tr_resume, tr_init;
  std::uint64_t tr_seed = 0;
  bool tr_seed_set = false;
  auto add_train_opts = [&](CLI::App* sub, bool finetune) {
    sub->add_option("--config", tr_config, "run configuration JSON")
        ->required();
    sub->add_option("--manifest", tr_manifest, "dataset manifest")->required();
    sub->add_option("--out", tr_out, "output directory");
    sub->add_option("--resume", tr_resume, "checkpoint to resume from");
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& v) {
          tr_seed = v;
          tr_seed_set = true;
        },
        "override the config seed");
    if (finetune)
      sub->add_option("--init-from", tr_init,
                      "pretrained checkpoint to fine-tune")
          ->required();
  };
  add_train_opts(app.add_subcommand("train", "pretrain a noise predictor"),
                 false);
  add_train_opts(
      app.add_subcommand("finetune",
                         "fine-tune through the unrolled sampler"),
      true);

  // sample
  auto* sm = app.add_subcommand("sample", "generate audio from conditioning");
  std::string sm_config, sm_ckpt, sm_schedule, sm_schedule_file, sm_wav,
      sm_mel, sm_out = "sample.wav";
  std::uint64_t sm_seed = 1;
  bool sm_allow_invalid = false;
  sm->add_option("--config", sm_config, "run configuration JSON")->required();
  sm->add_option("--checkpoint", sm_ckpt, "model checkpoint")->required();
  sm->add_option("--schedule", sm_schedule, "comma-separated betas");
  sm->add_option("--schedule-file", sm_schedule_file, "schedule JSON file");
  sm->add_option("--input-wav", sm_wav, "conditioning audio (mel source)");
  sm->add_option("--mel", sm_mel, "conditioning mel JSON file");
  sm->add_option("--out", sm_out, "output WAV path");
  sm->add_option("--seed", sm_seed, "generation seed");
  sm->add_flag("--allow-invalid", sm_allow_invalid,
               "sample even if the schedule fails validation");

  // grid-search / sweep
  std::string gs_config, gs_ckpt, gs_manifest, gs_split = "search",
              gs_grid_file, gs_mantissas, gs_out, gs_format = "both";
  int gs_range_n = 0;
  bool gs_plot = false;
  auto add_sweep_opts = [&](CLI::App* sub) {
    sub->add_option("--config", gs_config, "run configuration JSON")
        ->required();
    sub->add_option("--checkpoint", gs_ckpt, "model checkpoint")->required();
    sub->add_option("--manifest", gs_manifest, "dataset manifest")->required();
    sub->add_option("--split", gs_split, "dataset split to evaluate on");
    sub->add_option("--grid-file", gs_grid_file, "explicit schedule grid JSON");
    sub->add_option("--range-n", gs_range_n,
                    "enumerate the configured range for this step count");
    sub->add_option("--mantissas", gs_mantissas,
                    "comma-separated grid mantissas (default 1..9)");
    sub->add_option("--out", gs_out, "output directory");
    sub->add_option("--format", gs_format, "json | table | both");
    sub->add_flag("--plot", gs_plot, "write a scatter image");
  };
  add_sweep_opts(
      app.add_subcommand("grid-search", "find the best inference schedule"));
  add_sweep_opts(app.add_subcommand(
      "sweep", "schedule-sensitivity sweep (mean/std over a grid)"));

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "objective metrics on a split");
  std::string ev_config, ev_ckpt, ev_manifest, ev_split = "test", ev_schedule,
              ev_schedule_file, ev_out, ev_format = "both";
  bool ev_plot = false;
  ev->add_option("--config", ev_config, "run configuration JSON")->required();
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--manifest", ev_manifest, "dataset manifest")->required();
  ev->add_option("--split", ev_split, "dataset split");
  ev->add_option("--schedule", ev_schedule, "comma-separated betas");
  ev->add_option("--schedule-file", ev_schedule_file, "schedule JSON file");
  ev->add_option("--out", ev_out, "output directory");
  ev->add_option("--format", ev_format, "json | table | both");
  ev->add_flag("--plot", ev_plot, "write a scatter image");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (mk->parsed())
      return cmd_make_dataset(mk_out, mk_train, mk_search, mk_test, mk_seconds,
                              mk_seed, mk_force, args);
    if (app.got_subcommand("train"))
      return cmd_train("train", tr_config, tr_manifest, tr_out,
                       tr_seed_set ? std::optional<std::uint64_t>(tr_seed)
                                   : std::nullopt,
                       "", tr_resume, args);
    if (app.got_subcommand("finetune"))
      return cmd_train("finetune", tr_config, tr_manifest, tr_out,
                       tr_seed_set ? std::optional<std::uint64_t>(tr_seed)
                                   : std::nullopt,
                       tr_init, tr_resume, args);
    if (sm->parsed())
      return cmd_sample(sm_config, sm_ckpt, sm_schedule, sm_schedule_file,
                        sm_wav, sm_mel, sm_out, sm_seed, sm_allow_invalid,
                        args);
    if (app.got_subcommand("grid-search"))
      return cmd_sweep_like("grid-search", gs_config, gs_ckpt, gs_manifest,
                            gs_split, gs_grid_file, gs_range_n, gs_mantissas,
                            gs_out, gs_format, gs_plot, args);
    if (app.got_subcommand("sweep"))
      return cmd_sweep_like("sweep", gs_config, gs_ckpt, gs_manifest, gs_split,
                            gs_grid_file, gs_range_n, gs_mantissas, gs_out,
                            gs_format, gs_plot, args);
    if (ev->parsed())
      return cmd_evaluate(ev_config, ev_ckpt, ev_manifest, ev_split,
                          ev_schedule, ev_schedule_file, ev_out, ev_format,
                          ev_plot, args);
    std::cerr << "no subcommand\n";
    return kExitUsage;
  } catch (const ValidationRefused& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
