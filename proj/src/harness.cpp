// SPDX-License-Identifier: Apache-2.0
#include "diffquant/harness.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "diffquant/errors.hpp"

namespace diffquant {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open output file " + path);
  f << content;
  if (!f) throw std::runtime_error("write failed for " + path);
}

std::string file_header(const ExperimentConfig& cfg) {
  return std::string("# ") + kToolVersion + " config " + config_hash(cfg) + "\n";
}

void ensure_out_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    throw std::runtime_error("cannot create output directory " + out_dir);
}

struct LoadedRun {
  Checkpoint ckpt;
  NoiseSchedule sched;
};

LoadedRun load_run(const ExperimentConfig& cfg, const std::string& out_dir) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path(out_dir));
  if (ckpt.config_hash != train_config_hash(cfg))
    throw ConsistencyError(
        "checkpoint was trained under a different dataset/schedule/model/"
        "training configuration");
  NoiseSchedule sched = make_config_schedule(cfg);
  return LoadedRun{std::move(ckpt), std::move(sched)};
}

ActQuantTable expected_schedule(const ExperimentConfig& cfg, int T) {
  ActQuantTable table(T, cfg.act_bits);
  if (cfg.tau > 0.0 && !is_passthrough_bits(cfg.act_bits))
    apply_relaxation(table, make_relaxation_policy(cfg));
  return table;
}

QuantizedDenoiser build_weight_quantized(const ExperimentConfig& cfg,
                                         const Denoiser& model,
                                         const NoiseSchedule& sched) {
  const CalibrationSpec spec = make_calibration_spec(cfg);
  WeightQuantOptions opts;
  opts.scale_grid_points = cfg.weight_scale_grid;
  opts.adaptive_rounding = cfg.weight_adaround;
  if (is_passthrough_bits(cfg.weight_bits)) {
    LayerInputPool empty;
    return quantize_weights(model, kFpBits, empty, opts);
  }
  const LayerInputPool pool = collect_fp_layer_inputs(
      model, spec.conditions, spec.samples_per_condition, spec.seed, sched);
  return quantize_weights(model, cfg.weight_bits, pool, opts);
}

double nominal_act_bits(const ExperimentConfig& cfg) {
  if (is_passthrough_bits(cfg.act_bits)) return 32.0;
  if (cfg.tau <= 0.0) return static_cast<double>(cfg.act_bits);
  return nominal_average(make_relaxation_policy(cfg));
}

QuantizedDenoiser load_calibrated(const ExperimentConfig& cfg,
                                  const LoadedRun& run,
                                  const std::string& out_dir) {
  QuantizedDenoiser qm = build_weight_quantized(cfg, run.ckpt.model, run.sched);
  ActQuantTable table = ActQuantTable::load(table_path(out_dir));
  if (!table.same_schedule(expected_schedule(cfg, run.sched.steps())))
    throw ConsistencyError(
        "persisted quantizer table's bit schedule does not match the "
        "configured act_bits/relaxation");
  if (!table.fully_calibrated())
    throw ConsistencyError("persisted quantizer table is not fully calibrated");
  qm.set_table(std::move(table));
  return qm;
}

} // namespace

std::string train_config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["dataset"] = {{"modes", cfg.dataset.num_modes},
                  {"radius", cfg.dataset.radius},
                  {"std", cfg.dataset.mode_std},
                  {"phase", cfg.dataset.phase},
                  {"seed", cfg.dataset.seed}};
  j["schedule"] = {{"T", cfg.T},
                   {"beta_start", cfg.beta_start},
                   {"beta_end", cfg.beta_end}};
  j["model"] = {{"hidden_width", cfg.model.hidden_width},
                {"time_features", cfg.model.time_feat_dim},
                {"cond_embed", cfg.model.cond_emb_dim},
                {"init_seed", cfg.model.init_seed}};
  j["training"] = {{"steps", cfg.training.steps},
                   {"batch", cfg.training.batch_size},
                   {"lr", cfg.training.learning_rate},
                   {"rms_decay", cfg.training.rms_decay},
                   {"seed", cfg.training.seed}};
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string checkpoint_path(const std::string& out_dir) {
  return out_dir + "/checkpoint.txt";
}

std::string table_path(const std::string& out_dir) {
  return out_dir + "/act_table.txt";
}

void cmd_train(const ExperimentConfig& cfg, const std::string& out_dir) {
  ensure_out_dir(out_dir);
  const NoiseSchedule sched = make_config_schedule(cfg);
  const GaussianMixture data(cfg.dataset);

  TrainResult result;
  const Denoiser model =
      train_denoiser(data, sched, cfg.model, cfg.training, &result);

  save_checkpoint(checkpoint_path(out_dir), model, sched, cfg.beta_start,
                  cfg.beta_end, train_config_hash(cfg));
  save_config(out_dir + "/config_used.json", cfg);

  std::ostringstream log;
  log << file_header(cfg);
  log << "step\tloss\trunning_loss\tbest_running\n";
  for (const TrainLogRow& row : result.log)
    log << row.step << "\t" << fmt(row.loss) << "\t" << fmt(row.running_loss)
        << "\t" << fmt(row.best_running) << "\n";
  write_file(out_dir + "/training_log.tsv", log.str());
}

void cmd_calibrate(const ExperimentConfig& cfg, const std::string& out_dir,
                   const std::string& method) {
  if (method != "progressive" && method != "fp_trajectory")
    throw ConfigError("calibrate: method must be 'progressive' or 'fp_trajectory'");
  ensure_out_dir(out_dir);
  const LoadedRun run = load_run(cfg, out_dir);

  QuantizedDenoiser qm = build_weight_quantized(cfg, run.ckpt.model, run.sched);
  qm.set_table(expected_schedule(cfg, run.sched.steps()));

  const CalibrationSpec spec = make_calibration_spec(cfg);
  CalibLog log;
  ActQuantTable table =
      method == "progressive"
          ? progressive_calibrate(qm, spec, run.sched, &log)
          : fp_trajectory_calibrate(qm, spec, run.sched, &log);

  table.meta = config_hash(cfg) + ":diffquant-0.1.0";
  table.save(table_path(out_dir));
  write_file(out_dir + "/calibration_log.tsv",
             file_header(cfg) + format_calib_log(log));
}

void cmd_probe(const ExperimentConfig& cfg, const std::string& out_dir, int a,
               int b, double noise_std) {
  ensure_out_dir(out_dir);
  const LoadedRun run = load_run(cfg, out_dir);
  const Denoiser& model = run.ckpt.model;
  const ProbeSpec spec = make_probe_spec(cfg);

  const double std_used =
      noise_std >= 0.0 ? noise_std
                       : default_probe_std(model, a, b, spec, run.sched);
  const ProbeResult perturb = sensitivity_probe(model, a, b, std_used, spec,
                                                run.sched, cfg.probe_seed_groups);

  // Interval override: steps in [a, b] run the FP model, the rest quantized.
  const QuantizedDenoiser qm = load_calibrated(cfg, run, out_dir);
  const GaussianMixture modes(cfg.dataset);
  double frechet_mixed = 0, cond_mixed = 0, frechet_full = 0, cond_full = 0;
  const int groups = std::max(cfg.probe_seed_groups, 1);
  for (int g = 0; g < groups; ++g) {
    const std::uint64_t gseed =
        Rng::mix(spec.seed, 0x0f00 + static_cast<std::uint64_t>(g));
    const std::vector<Trajectory> fp_trajs = sample(
        model, spec.samples_per_group, spec.conditions, gseed, run.sched,
        SigmaMode::kZero);
    const auto mixed_predict = [&](const Tensor& x, int t, int label) {
      return (t >= a && t <= b) ? qm.base_predict(x, t, label)
                                : qm.predict(x, t, label);
    };
    const std::vector<Trajectory> mixed_trajs =
        sample_with(mixed_predict, model.config().data_dim,
                    spec.samples_per_group, spec.conditions, gseed, run.sched,
                    SigmaMode::kZero);
    const std::vector<Trajectory> full_trajs =
        sample(qm, spec.samples_per_group, spec.conditions, gseed, run.sched,
               SigmaMode::kZero);

    const std::vector<Tensor> fp_x0 = final_states(fp_trajs);
    const std::vector<Tensor> mixed_x0 = final_states(mixed_trajs);
    const std::vector<Tensor> full_x0 = final_states(full_trajs);
    frechet_mixed += frechet_distance(MomentSummary::from_samples(fp_x0),
                                      MomentSummary::from_samples(mixed_x0));
    frechet_full += frechet_distance(MomentSummary::from_samples(fp_x0),
                                     MomentSummary::from_samples(full_x0));
    cond_mixed += condition_match_score(mixed_x0, trajectory_labels(mixed_trajs),
                                        modes.centers());
    cond_full += condition_match_score(full_x0, trajectory_labels(full_trajs),
                                       modes.centers());
  }
  frechet_mixed /= groups;
  cond_mixed /= groups;
  frechet_full /= groups;
  cond_full /= groups;

  std::ostringstream os;
  os << file_header(cfg);
  os << "kind\ta\tb\tnoise_std\tfrechet\tcondition\tbaseline_condition\tseeds\n";
  os << "perturb\t" << a << "\t" << b << "\t" << fmt(perturb.noise_std) << "\t"
     << fmt(perturb.fidelity_frechet) << "\t" << fmt(perturb.condition_score)
     << "\t" << fmt(perturb.baseline_condition) << "\t" << perturb.seed_groups
     << "\n";
  os << "override_fp_interval\t" << a << "\t" << b << "\t0\t"
     << fmt(frechet_mixed) << "\t" << fmt(cond_mixed) << "\t"
     << fmt(cond_full) << "\t" << groups << "\n";
  os << "override_none\t" << a << "\t" << b << "\t0\t" << fmt(frechet_full)
     << "\t" << fmt(cond_full) << "\t" << fmt(cond_full) << "\t" << groups
     << "\n";
  write_file(out_dir + "/probe_report.tsv", os.str());
}

void cmd_evaluate(const ExperimentConfig& cfg, const std::string& out_dir) {
  ensure_out_dir(out_dir);
  const LoadedRun run = load_run(cfg, out_dir);
  const QuantizedDenoiser qm = load_calibrated(cfg, run, out_dir);

  const EvalSpec spec = make_eval_spec(cfg);
  const MetricsReport rep =
      evaluate(run.ckpt.model, qm, spec, run.sched, nominal_act_bits(cfg));

  std::ostringstream txt;
  txt << file_header(cfg);
  txt << "# flops = forward MACs * T * n_samples\n";
  txt << "calib.frechet_to_fp " << fmt(rep.calib_split.frechet_to_fp) << "\n";
  txt << "calib.condition_score " << fmt(rep.calib_split.condition_score) << "\n";
  txt << "calib.fp_condition_score "
      << fmt(rep.calib_split.fp_condition_score) << "\n";
  txt << "holdout.frechet_to_fp " << fmt(rep.holdout_split.frechet_to_fp) << "\n";
  txt << "holdout.condition_score "
      << fmt(rep.holdout_split.condition_score) << "\n";
  txt << "holdout.fp_condition_score "
      << fmt(rep.holdout_split.fp_condition_score) << "\n";
  txt << "flops " << fmt(rep.flops) << "\n";
  txt << "weight_bits " << fmt(rep.weight_bits) << "\n";
  txt << "act_bits_nominal " << fmt(rep.act_bits_nominal) << "\n";
  txt << "act_bits_schedule " << fmt(rep.act_bits_schedule) << "\n";
  txt << "bops " << fmt(rep.bops_value) << "\n";
  txt << "delta_sum " << fmt(rep.delta_sum) << "\n";
  txt << "theorem_delta_actual " << fmt(rep.theorem_delta_actual) << "\n";
  txt << "theorem_bound " << fmt(rep.theorem_bound) << "\n";
  txt << "n_samples " << rep.n_samples << "\n";
  txt << "seed_groups " << rep.n_seed_groups << "\n";
  write_file(out_dir + "/metrics.txt", txt.str());

  nlohmann::json j;
  j["tool"] = kToolVersion;
  j["config_hash"] = config_hash(cfg);
  j["calib"] = {{"frechet_to_fp", rep.calib_split.frechet_to_fp},
                {"condition_score", rep.calib_split.condition_score},
                {"fp_condition_score", rep.calib_split.fp_condition_score}};
  j["holdout"] = {{"frechet_to_fp", rep.holdout_split.frechet_to_fp},
                  {"condition_score", rep.holdout_split.condition_score},
                  {"fp_condition_score", rep.holdout_split.fp_condition_score}};
  j["flops"] = rep.flops;
  j["weight_bits"] = rep.weight_bits;
  j["act_bits_nominal"] = rep.act_bits_nominal;
  j["act_bits_schedule"] = rep.act_bits_schedule;
  j["bops"] = rep.bops_value;
  j["per_step_delta"] = rep.mean_per_step_delta;
  j["delta_sum"] = rep.delta_sum;
  j["theorem_delta_actual"] = rep.theorem_delta_actual;
  j["theorem_bound"] = rep.theorem_bound;
  j["n_samples"] = rep.n_samples;
  j["seed_groups"] = rep.n_seed_groups;
  write_file(out_dir + "/metrics.json", j.dump(2) + "\n");
}

void cmd_sweep(const ExperimentConfig& cfg, const std::string& out_dir,
               std::vector<double> taus) {
  if (taus.empty()) throw ConfigError("sweep: need at least one tau");
  ensure_out_dir(out_dir);
  const LoadedRun run = load_run(cfg, out_dir);

  const QuantizedDenoiser qm =
      build_weight_quantized(cfg, run.ckpt.model, run.sched);
  const std::vector<SweepRow> rows = relaxation_sweep(
      qm, taus, parse_relax_end(cfg.relax_end), cfg.act_bits, cfg.high_bits,
      make_calibration_spec(cfg), make_eval_spec(cfg), run.sched);
  write_file(out_dir + "/sweep.tsv", file_header(cfg) + format_sweep_rows(rows));
}

void cmd_theorem_check(const ExperimentConfig& cfg,
                       const std::string& out_dir) {
  ensure_out_dir(out_dir);
  const LoadedRun run = load_run(cfg, out_dir);
  const QuantizedDenoiser qm = load_calibrated(cfg, run, out_dir);

  // Jacobian-free first-order chain, reported alongside the
  // Jacobian-augmented coefficients.
  const std::vector<double> c_free = taylor_coefficients(
      run.sched, std::vector<double>(static_cast<std::size_t>(run.sched.steps()), 0.0));

  std::ostringstream os;
  os << file_header(cfg);
  os << "seed\tlabel\tdelta_actual\tbound\tbound_jacobian_free\tslack\n";
  double mean_actual = 0, mean_bound = 0;
  const int n = std::max(cfg.eval_seed_groups, 1);
  ErrorBoundReport first;
  for (int i = 0; i < n; ++i) {
    const int label = cfg.calib_labels[static_cast<std::size_t>(i) %
                                       cfg.calib_labels.size()];
    const std::uint64_t seed =
        Rng::mix(cfg.eval_seed, 0x7e0 + static_cast<std::uint64_t>(i));
    const ErrorBoundReport rep = error_bound_check(qm, label, seed, run.sched);
    if (i == 0) first = rep;
    double bound_free = 0.0;
    for (std::size_t t = 0; t < c_free.size(); ++t)
      bound_free += c_free[t] * rep.per_step_delta_norms[t];
    os << i << "\t" << label << "\t" << fmt(rep.delta_actual) << "\t"
       << fmt(rep.linear_prediction) << "\t" << fmt(bound_free) << "\t"
       << fmt(rep.residual) << "\n";
    mean_actual += rep.delta_actual;
    mean_bound += rep.linear_prediction;
  }
  os << "mean\t-\t" << fmt(mean_actual / n) << "\t" << fmt(mean_bound / n)
     << "\t-\t" << fmt(mean_bound / n - mean_actual / n) << "\n";
  os << "# per-step |Delta_t| and coefficients of the first seed\n";
  os << "t\tdelta_norm\tcoefficient\tcoefficient_jacobian_free\n";
  for (int t = 1; t <= run.sched.steps(); ++t)
    os << t << "\t"
       << fmt(first.per_step_delta_norms[static_cast<std::size_t>(t - 1)])
       << "\t" << fmt(first.coefficients[static_cast<std::size_t>(t - 1)])
       << "\t" << fmt(c_free[static_cast<std::size_t>(t - 1)]) << "\n";
  write_file(out_dir + "/theorem_report.txt", os.str());
}

} // namespace diffquant
