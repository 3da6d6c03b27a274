// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks through the installed binary: exit codes, manifest
// determinism, and the train -> sample -> evaluate flow on a tiny corpus.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "diffvoc/config.hpp"
#include "diffvoc/rng.hpp"

namespace fs = std::filesystem;

namespace {

const char* kBin = DIFFVOC_CLI_PATH;

struct CommandResult {
  int exit_code;
};

CommandResult run(const std::string& args) {
  const std::string cmd = std::string(kBin) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status)};
}

fs::path scratch(const std::string& tag) {
  auto dir = fs::temp_directory_path() /
             ("diffvoc_cli_" + tag + "_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

fs::path write_desk_config(const fs::path& dir, int max_steps, int batch) {
  diffvoc::RunConfig cfg = diffvoc::RunConfig::desk_defaults();
  cfg.training.max_steps = max_steps;
  cfg.training.batch_size = batch;
  cfg.training.checkpoint_every = 50;
  cfg.training.seed = 7;
  const auto path = dir / "config.json";
  cfg.save(path);
  return path;
}

}  // namespace

TEST_CASE("make-dataset is deterministic and refuses to clobber") {
  const auto dir = scratch("mkds");
  const std::string base = " --n-train 2 --n-search 1 --n-test 1 "
                           "--clip-seconds 0.25 --seed 11 --out ";

  CHECK(run("make-dataset" + base + (dir / "a").string()).exit_code == 0);
  CHECK(run("make-dataset" + base + (dir / "b").string()).exit_code == 0);
  CHECK(read_file(dir / "a" / "manifest.json") ==
        read_file(dir / "b" / "manifest.json"));
  CHECK(read_file(dir / "a" / "wav" / "train-0000.wav") ==
        read_file(dir / "b" / "wav" / "train-0000.wav"));

  // Second run into the same directory refuses without --force.
  CHECK(run("make-dataset" + base + (dir / "a").string()).exit_code == 1);
  CHECK(run("make-dataset" + base + (dir / "a").string() + " --force")
            .exit_code == 0);
}

TEST_CASE("zero-clip dataset writes an empty manifest") {
  const auto dir = scratch("mkds_zero");
  CHECK(run("make-dataset --n-train 0 --n-search 0 --n-test 0 --out " +
            (dir / "e").string())
            .exit_code == 0);
  nlohmann::json j;
  std::ifstream in(dir / "e" / "manifest.json");
  in >> j;
  CHECK(j.at("clips").empty());
}

TEST_CASE("train, sample and evaluate round-trip") {
  const auto dir = scratch("flow");
  CHECK(run("make-dataset --n-train 3 --n-search 1 --n-test 1 "
            "--clip-seconds 0.25 --seed 3 --out " +
            (dir / "data").string())
            .exit_code == 0);
  const auto config = write_desk_config(dir, 30, 4);
  const auto manifest = (dir / "data" / "manifest.json").string();

  CHECK(run("train --config " + config.string() + " --manifest " + manifest +
            " --out " + (dir / "pre").string())
            .exit_code == 0);
  CHECK(fs::exists(dir / "pre" / "final.dvck"));
  CHECK(fs::exists(dir / "pre" / "run_manifest.json"));

  // Fine-tuning without a pretrained checkpoint is refused at parse level
  // (missing --init-from), and works with one.
  CHECK(run("finetune --config " + config.string() + " --manifest " +
            manifest + " --out " + (dir / "ft_bad").string())
            .exit_code == 1);
  CHECK(run("finetune --config " + config.string() + " --manifest " +
            manifest + " --init-from " + (dir / "pre" / "final.dvck").string() +
            " --out " + (dir / "ft").string())
            .exit_code == 0);

  // Sampling with the corrected 2-step schedule passes validation.
  const auto wav = (dir / "data" / "wav" / "test-0004.wav").string();
  CHECK(run("sample --config " + config.string() + " --checkpoint " +
            (dir / "ft" / "final.dvck").string() +
            " --schedule 0.001,0.5 --input-wav " + wav + " --out " +
            (dir / "sample.wav").string())
            .exit_code == 0);
  CHECK(fs::exists(dir / "sample.wav"));

  // The uncorrected searched 2-step schedule violates the ratio rule:
  // refused with exit code 2 unless overridden.
  CHECK(run("sample --config " + config.string() + " --checkpoint " +
            (dir / "ft" / "final.dvck").string() +
            " --schedule 0.0001,0.3 --input-wav " + wav + " --out " +
            (dir / "rejected.wav").string())
            .exit_code == 2);
  CHECK_FALSE(fs::exists(dir / "rejected.wav"));
  CHECK(run("sample --config " + config.string() + " --checkpoint " +
            (dir / "ft" / "final.dvck").string() +
            " --schedule 0.0001,0.3 --allow-invalid --input-wav " + wav +
            " --out " + (dir / "forced.wav").string())
            .exit_code == 0);
  CHECK(fs::exists(dir / "forced.wav"));

  // Evaluation and sweep reports.
  CHECK(run("evaluate --config " + config.string() + " --checkpoint " +
            (dir / "ft" / "final.dvck").string() + " --manifest " + manifest +
            " --split test --schedule 0.001,0.5 --out " +
            (dir / "eval").string())
            .exit_code == 0);
  CHECK(fs::exists(dir / "eval" / "metrics.json"));
  CHECK(fs::exists(dir / "eval" / "metrics.tsv"));

  CHECK(run("sweep --config " + config.string() + " --checkpoint " +
            (dir / "ft" / "final.dvck").string() + " --manifest " + manifest +
            " --split search --range-n 3 --mantissas 1,5 --out " +
            (dir / "sweep").string() + " --plot")
            .exit_code == 0);
  CHECK(fs::exists(dir / "sweep" / "sweep.json"));
  CHECK(fs::exists(dir / "sweep" / "sweep.pgm"));

  // Identical evaluate invocations emit byte-identical reports.
  CHECK(run("evaluate --config " + config.string() + " --checkpoint " +
            (dir / "ft" / "final.dvck").string() + " --manifest " + manifest +
            " --split test --schedule 0.001,0.5 --out " +
            (dir / "eval2").string())
            .exit_code == 0);
  CHECK(read_file(dir / "eval" / "metrics.json") ==
        read_file(dir / "eval2" / "metrics.json"));
  CHECK(read_file(dir / "eval" / "metrics.tsv") ==
        read_file(dir / "eval2" / "metrics.tsv"));
}

TEST_CASE("usage errors exit with code 1") {
  CHECK(run("train --config /nonexistent.json --manifest also-missing")
            .exit_code == 1);
  CHECK(run("no-such-command").exit_code == 1);
  const auto dir = scratch("usage");
  // Missing checkpoint surfaces as a runtime error (3).
  const auto config = write_desk_config(dir, 1, 1);
  CHECK(run("evaluate --config " + config.string() +
            " --checkpoint missing.dvck --manifest missing.json "
            "--schedule 0.001,0.5")
            .exit_code == 3);
}
