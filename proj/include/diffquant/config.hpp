// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffquant/calibration.hpp"
#include "diffquant/dataset.hpp"
#include "diffquant/denoiser.hpp"
#include "diffquant/metrics.hpp"
#include "diffquant/relaxing.hpp"

namespace diffquant {

/// Everything a run needs, with every seed explicit. The JSON schema is
/// documented in the README; unknown fields are rejected so typos fail fast.
struct ExperimentConfig {
  int version = 1;

  MixtureConfig dataset; // num_modes, radius, mode_std, phase, seed

  int T = 50;
  double beta_start = 0.002;
  double beta_end = 0.25;

  DenoiserConfig model; // num_labels mirrors dataset.num_modes

  TrainConfig training;

  int weight_bits = 8;
  int act_bits = 8;
  std::string calib_method = "mse"; // "mse" | "minmax"
  int mse_grid_points = 80;
  bool weight_adaround = true;
  int weight_scale_grid = 80;
  int calib_conditions = 32;
  int samples_per_condition = 4;
  std::vector<int> calib_labels{0, 1};
  std::uint64_t calib_seed = 11;

  double tau = 0.0;
  std::string relax_end = "near_x0";
  int high_bits = 10;

  int eval_samples = 2048;
  int eval_seed_groups = 5;
  std::uint64_t eval_seed = 17;
  std::vector<int> holdout_labels{2, 3};
  int feature_dim = 0;

  std::uint64_t probe_seed = 23;
  int probe_samples = 256;
  int probe_seed_groups = 10;
};

/// Throws ConfigError naming the offending field or the JSON parse location.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text);

/// Canonical serialization (sorted keys, stable number formatting); input of
/// the config hash and output of `save_config`.
std::string config_to_json_text(const ExperimentConfig& cfg);
void save_config(const std::string& path, const ExperimentConfig& cfg);

/// FNV-1a 64-bit hash of the canonical serialization, as fixed-width hex.
std::string config_hash(const ExperimentConfig& cfg);

// Derived module inputs.
CalibrationSpec make_calibration_spec(const ExperimentConfig& cfg);
EvalSpec make_eval_spec(const ExperimentConfig& cfg);
RelaxationPolicy make_relaxation_policy(const ExperimentConfig& cfg);
ProbeSpec make_probe_spec(const ExperimentConfig& cfg);
NoiseSchedule make_config_schedule(const ExperimentConfig& cfg);

} // namespace diffquant
