// SPDX-License-Identifier: Apache-2.0
//
// diffquant: reproducible experiment runner for post-training quantization
// of a small conditional diffusion model. Subcommands: train, calibrate,
// probe, evaluate, sweep, theorem-check. Exit codes: 0 success, 2 config
// error, 3 consistency error, 1 anything else.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "diffquant/errors.hpp"
#include "diffquant/harness.hpp"

namespace {

diffquant::ExperimentConfig load_with_overrides(const std::string& config_path,
                                                bool has_seed,
                                                std::uint64_t seed) {
  diffquant::ExperimentConfig cfg = diffquant::load_config(config_path);
  if (has_seed) {
    // One flag reseeds every stage deterministically.
    cfg.training.seed = seed;
    cfg.calib_seed = diffquant::Rng::mix(seed, 1);
    cfg.eval_seed = diffquant::Rng::mix(seed, 2);
    cfg.probe_seed = diffquant::Rng::mix(seed, 3);
    cfg.dataset.seed = diffquant::Rng::mix(seed, 4);
  }
  return cfg;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"post-training quantization lab for a toy diffusion model"};
  app.require_subcommand(1);
  // Global flags may appear after the subcommand name.
  app.fallthrough();

  std::string config_path;
  std::string out_dir = "runs/default";
  std::string method = "progressive";
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::vector<double> taus;
  std::vector<int> interval{1, 1};
  double noise_std = -1.0;

  app.add_option("--config", config_path, "experiment config (JSON)")
      ->required();
  app.add_option("--out", out_dir, "run directory for inputs/outputs");
  app.add_option_function<std::uint64_t>(
         "--seed",
         [&](std::uint64_t s) {
           seed = s;
           has_seed = true;
         },
         "override all stage seeds from one base seed");

  CLI::App* train = app.add_subcommand("train", "train the FP denoiser");
  CLI::App* calibrate =
      app.add_subcommand("calibrate", "quantize weights and calibrate activations");
  calibrate->add_option("--method", method,
                        "progressive | fp_trajectory");
  CLI::App* probe = app.add_subcommand(
      "probe", "timestep sensitivity probe (perturbation + FP override)");
  probe->add_option("--interval", interval, "probed timestep interval [a, b]")
      ->expected(2);
  probe->add_option("--noise-std", noise_std,
                    "perturbation std (negative = default 0.1 x RMS)");
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "metrics report for the calibrated model");
  CLI::App* sweep =
      app.add_subcommand("sweep", "relaxation proportion sweep");
  sweep->add_option("--tau", taus, "relaxation proportions (ascending)")
      ->expected(-1);
  CLI::App* theorem = app.add_subcommand(
      "theorem-check", "error-accumulation bound report");

  CLI11_PARSE(app, argc, argv);

  try {
    const diffquant::ExperimentConfig cfg =
        load_with_overrides(config_path, has_seed, seed);
    if (train->parsed()) {
      diffquant::cmd_train(cfg, out_dir);
    } else if (calibrate->parsed()) {
      diffquant::cmd_calibrate(cfg, out_dir, method);
    } else if (probe->parsed()) {
      diffquant::cmd_probe(cfg, out_dir, interval[0], interval[1], noise_std);
    } else if (evaluate->parsed()) {
      diffquant::cmd_evaluate(cfg, out_dir);
    } else if (sweep->parsed()) {
      if (taus.empty()) taus = {0.0, 0.05, 0.1, 0.2};
      diffquant::cmd_sweep(cfg, out_dir, taus);
    } else if (theorem->parsed()) {
      diffquant::cmd_theorem_check(cfg, out_dir);
    }
  } catch (const diffquant::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const diffquant::ConsistencyError& e) {
    std::fprintf(stderr, "consistency error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
