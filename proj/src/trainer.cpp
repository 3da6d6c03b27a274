// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffvoc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "diffvoc/config.hpp"
#include "diffvoc/errors.hpp"

namespace diffvoc {

namespace {

double bits_to_double(std::uint64_t u) {
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

std::uint64_t double_to_bits(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  return u;
}

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(
             clock::now().time_since_epoch())
      .count();
}

// Batch-mean noise-prediction MSE; consumes (level, eps) per item in order.
ad::Var build_diffusion_term(const ItemPredictFn& predict,
                             const std::vector<Segment>& batch,
                             const TrainContext& ctx, Rng& rng) {
  ad::Var acc = ad::Var::scalar(0.0);
  std::vector<double> eps(batch.front().samples.size());
  for (const auto& item : batch) {
    const LevelDraw draw = sample_continuous_level(ctx.curve, rng);
    rng.fill_normal(eps);
    std::vector<double> x_t(item.samples.size());
    for (std::size_t i = 0; i < x_t.size(); ++i)
      x_t[i] = draw.sqrt_alpha_bar * item.samples[i] +
               draw.sqrt_one_minus * eps[i];
    ad::Var eps_hat = predict(ad::Var::constant(std::move(x_t)), item.mel,
                              draw.sqrt_alpha_bar);
    ad::Var item_loss = diffusion_loss_ad(eps, eps_hat);
    if (!std::isfinite(item_loss.item()))
      throw NumericalError(
          "trainer: non-finite diffusion loss at level " +
          std::to_string(draw.sqrt_alpha_bar));
    acc = ad::add(acc, item_loss);
  }
  return ad::mul_scalar(acc, 1.0 / static_cast<double>(batch.size()));
}

// Batch-mean spectral loss through the unrolled sampler; one schedule for
// the whole batch, fresh start/injection noise per item.
ad::Var build_infer_term(const ItemPredictFn& predict,
                         const std::vector<Segment>& batch,
                         const TrainContext& ctx,
                         const InferenceSchedule& schedule, Rng& rng,
                         LossBreakdown* breakdown) {
  ad::Var acc = ad::Var::scalar(0.0);
  if (breakdown) {
    breakdown->mag_per_resolution.assign(ctx.multires.resolutions.size(), 0.0);
    breakdown->pha_per_resolution.assign(ctx.multires.resolutions.size(), 0.0);
  }
  for (const auto& item : batch) {
    PredictFn bound = [&predict, &item](const ad::Var& x_t, double level) {
      return predict(x_t, item.mel, level);
    };
    ad::Var x_hat =
        generate_core(bound, static_cast<std::int64_t>(item.samples.size()),
                      schedule, rng, GenerateOptions{});
    InferLossBreakdown bd;
    ad::Var item_loss = infer_loss_ad(item.samples, x_hat, ctx.multires,
                                      ctx.filterbanks, &bd);
    if (breakdown) {
      for (std::size_t m = 0; m < bd.mag_per_resolution.size(); ++m)
        breakdown->mag_per_resolution[m] += bd.mag_per_resolution[m];
      for (std::size_t m = 0; m < bd.pha_per_resolution.size(); ++m)
        breakdown->pha_per_resolution[m] += bd.pha_per_resolution[m];
    }
    acc = ad::add(acc, item_loss);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  if (breakdown) {
    for (auto& v : breakdown->mag_per_resolution) v *= inv;
    for (auto& v : breakdown->pha_per_resolution) v *= inv;
  }
  return ad::mul_scalar(acc, inv);
}

void check_params_finite(const NoisePredictor& predictor, const char* where) {
  if (!predictor.params.all_finite())
    throw NumericalError(std::string(where) +
                         ": optimizer step produced non-finite parameters");
}

}  // namespace

void AdamState::step(ParamStore& params, std::span<const double> grad,
                     const AdamConfig& cfg, double clip_norm) {
  if (m_.size() != grad.size())
    throw ContractError("AdamState: gradient size mismatch");

  double scale = 1.0;
  if (clip_norm > 0.0) {
    double norm2 = 0.0;
    for (double g : grad) norm2 += g * g;
    const double norm = std::sqrt(norm2);
    if (norm > clip_norm) scale = clip_norm / norm;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));

  auto flat = params.flatten();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double g = grad[i] * scale;
    m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * g;
    v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * g * g;
    flat[i] -= cfg.learning_rate * (m_[i] / bc1) /
               (std::sqrt(v_[i] / bc2) + cfg.eps);
  }
  params.unflatten(flat);
}

std::vector<ParamStore::Group> AdamState::to_blobs() const {
  return {{"opt/m", m_},
          {"opt/v", v_},
          {"opt/t", {static_cast<double>(t_)}}};
}

AdamState AdamState::from_blobs(const std::vector<ParamStore::Group>& blobs,
                                std::size_t expected_size) {
  AdamState state(expected_size);
  bool got_m = false, got_v = false, got_t = false;
  for (const auto& b : blobs) {
    if (b.name == "opt/m") { state.m_ = b.values; got_m = true; }
    else if (b.name == "opt/v") { state.v_ = b.values; got_v = true; }
    else if (b.name == "opt/t") {
      state.t_ = static_cast<std::int64_t>(b.values.at(0));
      got_t = true;
    }
  }
  if (!got_m || !got_v || !got_t)
    throw IoError("AdamState: optimizer blobs missing from checkpoint");
  if (state.m_.size() != expected_size || state.v_.size() != expected_size)
    throw IoError("AdamState: optimizer blob size mismatch");
  return state;
}

double TrainingConfig::effective_learning_rate() const {
  if (learning_rate > 0.0) return learning_rate;
  return phase == Phase::kPretrain ? 2e-4 : 5.8e-5;
}

const ScheduleRange& TrainingConfig::range_for(int n) const {
  auto it = ranges_by_n.find(n);
  if (it != ranges_by_n.end()) return it->second;
  // The published search ranges back the standard step counts.
  if (n == 2 || n == 3 || n == 6) {
    static const std::map<int, ScheduleRange> reference{
        {2, reference_range(2)}, {3, reference_range(3)},
        {6, reference_range(6)}};
    return reference.at(n);
  }
  throw ConfigError("TrainingConfig: no schedule range for N=" +
                    std::to_string(n));
}

void TrainingConfig::validate() const {
  if (n_modes.empty()) throw ConfigError("TrainingConfig: n_modes is empty");
  if (batch_size <= 0) throw ConfigError("TrainingConfig: batch_size > 0");
  if (max_steps < 0) throw ConfigError("TrainingConfig: max_steps >= 0");
  if (learning_rate < 0.0)
    throw ConfigError("TrainingConfig: learning_rate >= 0");
  if (phase == Phase::kFinetune) {
    for (int n : n_modes) {
      if (!lambda_by_n.count(n))
        throw ConfigError("TrainingConfig: no lambda for N=" +
                          std::to_string(n));
      const auto& range = range_for(n);
      if (range.steps() != n)
        throw ConfigError("TrainingConfig: range length != N for N=" +
                          std::to_string(n));
    }
  }
}

nlohmann::json TrainingConfig::to_json() const {
  nlohmann::json lambdas = nlohmann::json::object();
  for (const auto& [n, l] : lambda_by_n) lambdas[std::to_string(n)] = l;
  nlohmann::json ranges = nlohmann::json::object();
  for (const auto& [n, r] : ranges_by_n)
    ranges[std::to_string(n)] = diffvoc::to_json(r);
  return {{"phase", phase == Phase::kPretrain ? "pretrain" : "finetune"},
          {"lambda_by_n", lambdas},
          {"n_modes", n_modes},
          {"ranges_by_n", ranges},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"max_steps", max_steps},
          {"checkpoint_every", checkpoint_every},
          {"seed", seed},
          {"finetune_clip_norm", finetune_clip_norm}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
  TrainingConfig cfg;
  const std::string phase = j.value("phase", "pretrain");
  if (phase == "pretrain") cfg.phase = Phase::kPretrain;
  else if (phase == "finetune") cfg.phase = Phase::kFinetune;
  else throw ConfigError("TrainingConfig: unknown phase " + phase);
  if (j.contains("lambda_by_n")) {
    cfg.lambda_by_n.clear();
    for (const auto& [k, v] : j.at("lambda_by_n").items())
      cfg.lambda_by_n[std::stoi(k)] = v.get<double>();
  }
  if (j.contains("n_modes"))
    cfg.n_modes = j.at("n_modes").get<std::vector<int>>();
  std::sort(cfg.n_modes.begin(), cfg.n_modes.end());
  if (j.contains("ranges_by_n")) {
    for (const auto& [k, v] : j.at("ranges_by_n").items())
      cfg.ranges_by_n[std::stoi(k)] = schedule_range_from_json(v);
  }
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.max_steps = j.value("max_steps", cfg.max_steps);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.finetune_clip_norm = j.value("finetune_clip_norm", cfg.finetune_clip_norm);
  cfg.validate();
  return cfg;
}

nlohmann::json StepRecord::to_json() const {
  nlohmann::json j{{"step", step},
                   {"l_d", losses.l_d},
                   {"l_i", losses.l_i},
                   {"lambda", losses.lambda},
                   {"total", losses.total},
                   {"n", sampled_n},
                   {"wall_ms", wall_ms}};
  if (schedule) j["schedule"] = schedule->betas_hat;
  if (!losses.mag_per_resolution.empty())
    j["l_mag"] = losses.mag_per_resolution;
  if (!losses.pha_per_resolution.empty())
    j["l_pha"] = losses.pha_per_resolution;
  return j;
}

TrainContext TrainContext::make(const FeatureConfig& feature,
                                const MultiResConfig& multires,
                                const NoiseSchedule& training_schedule) {
  feature.validate();
  multires.validate();
  training_schedule.validate();
  TrainContext ctx;
  ctx.feature = feature;
  ctx.multires = multires;
  ctx.filterbanks = filterbanks_for(multires, feature.n_mels,
                                    feature.sample_rate, feature.f_min,
                                    feature.f_max);
  ctx.curve = alpha_bar(training_schedule);
  return ctx;
}

StepRecord pretrain_step(NoisePredictor& predictor,
                         const std::vector<Segment>& batch,
                         const TrainContext& ctx, Rng& rng, AdamState& adam,
                         const AdamConfig& adam_cfg, const StepHooks* hooks) {
  if (batch.empty()) throw ContractError("pretrain_step: empty batch");
  const double t0 = now_ms();

  PredictorGraph graph(predictor, true);
  ItemPredictFn predict =
      hooks && hooks->predict_override
          ? hooks->predict_override
          : ItemPredictFn([&graph](const ad::Var& x_t, const MelConditioner& mel,
                                   double level) {
              return graph.predict(x_t, mel, level);
            });

  ad::Var l_d = build_diffusion_term(predict, batch, ctx, rng);
  ad::backward(l_d);
  adam.step(predictor.params, graph.grad_flat(), adam_cfg);
  predictor.step_count += 1;
  check_params_finite(predictor, "pretrain_step");

  StepRecord rec;
  rec.losses.l_d = l_d.item();
  rec.losses.total = rec.losses.l_d;
  rec.wall_ms = now_ms() - t0;
  return rec;
}

StepRecord finetune_step(NoisePredictor& predictor,
                         const std::vector<Segment>& batch,
                         const TrainContext& ctx, const TrainingConfig& cfg,
                         Rng& rng, AdamState& adam, const AdamConfig& adam_cfg,
                         const StepHooks* hooks) {
  if (batch.empty()) throw ContractError("finetune_step: empty batch");
  cfg.validate();
  const double t0 = now_ms();

  PredictorGraph graph(predictor, true);
  ItemPredictFn predict =
      hooks && hooks->predict_override
          ? hooks->predict_override
          : ItemPredictFn([&graph](const ad::Var& x_t, const MelConditioner& mel,
                                   double level) {
              return graph.predict(x_t, mel, level);
            });

  // Noise-prediction term first; its draws are independent of the schedule.
  ad::Var l_d = build_diffusion_term(predict, batch, ctx, rng);

  const int n = cfg.n_modes[rng.uniform_int(cfg.n_modes.size())];
  const InferenceSchedule schedule =
      sample_schedule_from_range(cfg.range_for(n), rng);
  const double lambda = cfg.lambda_by_n.at(n);

  StepRecord rec;
  ad::Var l_i;
  try {
    l_i = build_infer_term(predict, batch, ctx, schedule, rng, &rec.losses);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(e.what()) + " [sampled schedule " +
                         schedule.to_string() + "]");
  }

  ad::Var total = ad::add(l_d, ad::mul_scalar(l_i, lambda));
  if (!std::isfinite(total.item()))
    throw NumericalError("finetune_step: non-finite objective with schedule " +
                         schedule.to_string());

  ad::backward(total);
  adam.step(predictor.params, graph.grad_flat(), adam_cfg,
            cfg.finetune_clip_norm);
  predictor.step_count += 1;
  check_params_finite(predictor, "finetune_step");

  rec.sampled_n = n;
  rec.schedule = schedule;
  rec.losses.l_d = l_d.item();
  rec.losses.l_i = l_i.item();
  rec.losses.lambda = lambda;
  rec.losses.total = total.item();
  rec.wall_ms = now_ms() - t0;
  return rec;
}

namespace {

std::vector<ParamStore::Group> trainer_blobs(const AdamState& adam,
                                             const Rng& rng,
                                             std::int64_t phase_step,
                                             std::uint64_t data_digest,
                                             std::uint64_t config_digest) {
  auto blobs = adam.to_blobs();
  const auto state = rng.state();
  blobs.push_back({"rng/state",
                   {bits_to_double(state[0]), bits_to_double(state[1]),
                    bits_to_double(state[2]), bits_to_double(state[3])}});
  blobs.push_back({"trainer/phase_step", {static_cast<double>(phase_step)}});
  blobs.push_back({"data/digest", {bits_to_double(data_digest)}});
  blobs.push_back({"config/digest", {bits_to_double(config_digest)}});
  return blobs;
}

}  // namespace

RunResult run_training(const RunConfig& cfg, const Dataset& dataset,
                       const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& init_from,
                       const std::optional<std::filesystem::path>& resume) {
  cfg.validate();
  const TrainingConfig& train = cfg.training;
  std::filesystem::create_directories(out_dir / "checkpoints");

  const TrainContext ctx =
      TrainContext::make(cfg.feature, cfg.multires, cfg.schedule.build());
  const auto train_clips = dataset.clips_for_split("train");
  if (train_clips.empty())
    throw ConfigError("run_training: dataset has no train split");
  std::vector<MelConditioner> mels;
  mels.reserve(train_clips.size());
  for (const auto* clip : train_clips)
    mels.push_back(mel_features(*clip, cfg.feature));

  const std::uint64_t data_digest = dataset.digest();
  const std::uint64_t config_digest = cfg.resume_digest();

  NoisePredictor predictor;
  AdamState adam;
  Rng rng(train.seed);
  std::int64_t start_step = 0;

  if (resume) {
    const Checkpoint ckpt = load_checkpoint(*resume, cfg.network);
    predictor = ckpt.predictor;
    const auto* dd = ckpt.find_blob("data/digest");
    if (!dd || double_to_bits(dd->values.at(0)) != data_digest)
      throw ConfigError("run_training: dataset digest mismatch on resume");
    const auto* cd = ckpt.find_blob("config/digest");
    if (!cd || double_to_bits(cd->values.at(0)) != config_digest)
      throw ConfigError("run_training: config digest mismatch on resume");
    adam = AdamState::from_blobs(ckpt.extra_blobs,
                                 predictor.params.flat_size());
    const auto* rs = ckpt.find_blob("rng/state");
    if (!rs || rs->values.size() != 4)
      throw IoError("run_training: RNG state missing from checkpoint");
    rng.set_state({double_to_bits(rs->values[0]), double_to_bits(rs->values[1]),
                   double_to_bits(rs->values[2]),
                   double_to_bits(rs->values[3])});
    const auto* ps = ckpt.find_blob("trainer/phase_step");
    if (!ps) throw IoError("run_training: phase step missing from checkpoint");
    start_step = static_cast<std::int64_t>(ps->values.at(0));
  } else if (init_from) {
    if (train.phase != Phase::kFinetune)
      throw ConfigError("run_training: init_from applies to fine-tuning only");
    predictor = load_checkpoint(*init_from, cfg.network).predictor;
    adam = AdamState(predictor.params.flat_size());
  } else {
    if (train.phase == Phase::kFinetune)
      throw ConfigError(
          "run_training: fine-tuning requires a pretrained checkpoint "
          "(init_from)");
    predictor = NoisePredictor::init(cfg.network, train.seed);
    adam = AdamState(predictor.params.flat_size());
  }

  AdamConfig adam_cfg;
  adam_cfg.learning_rate = train.effective_learning_rate();

  std::ofstream log(out_dir / "steps.ndjson",
                    resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("run_training: cannot open step log");

  RunResult result;
  std::vector<Segment> batch(train.batch_size);
  for (std::int64_t step = start_step; step < train.max_steps; ++step) {
    for (int b = 0; b < train.batch_size; ++b) {
      const auto idx = rng.uniform_int(train_clips.size());
      batch[b] = sample_segment(*train_clips[idx], mels[idx], cfg.feature, rng);
    }
    StepRecord rec =
        train.phase == Phase::kPretrain
            ? pretrain_step(predictor, batch, ctx, rng, adam, adam_cfg)
            : finetune_step(predictor, batch, ctx, train, rng, adam, adam_cfg);
    rec.step = step;
    log << rec.to_json().dump() << "\n";
    result.records.push_back(std::move(rec));

    if (train.checkpoint_every > 0 &&
        (step + 1) % train.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "step_%07lld.dvck",
                    static_cast<long long>(step + 1));
      save_checkpoint(predictor, out_dir / "checkpoints" / name,
                      trainer_blobs(adam, rng, step + 1, data_digest,
                                    config_digest));
    }
  }

  result.final_checkpoint = out_dir / "final.dvck";
  save_checkpoint(predictor, result.final_checkpoint,
                  trainer_blobs(adam, rng, train.max_steps, data_digest,
                                config_digest));
  return result;
}

double gradcheck(const LossEvaluator& evaluator, const NoisePredictor& base,
                 double epsilon, int sample_count, Rng& rng) {
  if (!(epsilon > 0.0))
    throw ContractError("gradcheck: epsilon must be positive");
  if (sample_count <= 0)
    throw ContractError("gradcheck: sample_count must be positive");

  const auto analytic = evaluator.gradient(base);
  const auto flat = base.params.flatten();
  if (analytic.size() != flat.size())
    throw ContractError("gradcheck: gradient size mismatch");

  double worst = 0.0;
  for (int s = 0; s < sample_count; ++s) {
    const auto i = rng.uniform_int(flat.size());
    const double eps_i = epsilon * std::max(1.0, std::fabs(flat[i]));
    NoisePredictor plus = base;
    NoisePredictor minus = base;
    auto fp = flat, fm = flat;
    fp[i] += eps_i;
    fm[i] -= eps_i;
    plus.params.unflatten(fp);
    minus.params.unflatten(fm);
    const double fd =
        (evaluator.value(plus) - evaluator.value(minus)) / (2.0 * eps_i);
    const double denom =
        std::max({std::fabs(analytic[i]), std::fabs(fd), 1e-6});
    worst = std::max(worst, std::fabs(analytic[i] - fd) / denom);
  }
  return worst;
}

namespace {

double objective_eval(const NoisePredictor& p,
                      const std::vector<Segment>& batch,
                      const TrainContext& ctx, const InferenceSchedule& sched,
                      double lambda, std::uint64_t noise_seed,
                      std::vector<double>* grad_out) {
  PredictorGraph graph(p, grad_out != nullptr);
  ItemPredictFn predict = [&graph](const ad::Var& x_t,
                                   const MelConditioner& mel, double level) {
    return graph.predict(x_t, mel, level);
  };
  Rng rng(noise_seed);
  ad::Var l_d = build_diffusion_term(predict, batch, ctx, rng);
  ad::Var l_i = build_infer_term(predict, batch, ctx, sched, rng, nullptr);
  ad::Var total = ad::add(l_d, ad::mul_scalar(l_i, lambda));
  if (grad_out) {
    ad::backward(total);
    *grad_out = graph.grad_flat();
  }
  return total.item();
}

}  // namespace

LossEvaluator make_objective_evaluator(const std::vector<Segment>& batch,
                                       const TrainContext& ctx,
                                       const InferenceSchedule& schedule,
                                       double lambda,
                                       std::uint64_t noise_seed) {
  LossEvaluator ev;
  ev.value = [batch, &ctx, schedule, lambda,
              noise_seed](const NoisePredictor& p) {
    return objective_eval(p, batch, ctx, schedule, lambda, noise_seed,
                          nullptr);
  };
  ev.gradient = [batch, &ctx, schedule, lambda,
                 noise_seed](const NoisePredictor& p) {
    std::vector<double> grad;
    objective_eval(p, batch, ctx, schedule, lambda, noise_seed, &grad);
    return grad;
  };
  return ev;
}

}  // namespace diffvoc
