// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "diffquant/config.hpp"

namespace diffquant {

inline constexpr const char* kToolVersion = "diffquant 0.1.0";

/// Hash over the training-relevant subset of the config (dataset, schedule,
/// model, training); checkpoints embed it, so quantization settings can vary
/// across runs of the same trained model.
std::string train_config_hash(const ExperimentConfig& cfg);

// Output file names inside a run directory.
std::string checkpoint_path(const std::string& out_dir);
std::string table_path(const std::string& out_dir);

/// Trains the FP denoiser; writes checkpoint.txt, training_log.tsv and
/// config_used.json into out_dir.
void cmd_train(const ExperimentConfig& cfg, const std::string& out_dir);

/// Quantizes weights, applies the configured relaxation to a fresh schedule
/// and runs the chosen calibration ("progressive" | "fp_trajectory");
/// persists act_table.txt and calibration_log.tsv.
void cmd_calibrate(const ExperimentConfig& cfg, const std::string& out_dir,
                   const std::string& method);

/// Sensitivity probe on [a, b] (noise_std < 0 picks the default: 0.1 x RMS
/// of the predicted noise over the interval) plus the interval-override
/// variant (steps in [a, b] run full precision, the rest quantized); writes
/// probe_report.tsv.
void cmd_probe(const ExperimentConfig& cfg, const std::string& out_dir, int a,
               int b, double noise_std);

/// Full evaluation of the calibrated model; writes metrics.txt and
/// metrics.json. Fails with ConsistencyError when the persisted table's bit
/// schedule does not match the config.
void cmd_evaluate(const ExperimentConfig& cfg, const std::string& out_dir);

/// Relaxation sweep over the given taus; writes sweep.tsv.
void cmd_sweep(const ExperimentConfig& cfg, const std::string& out_dir,
               std::vector<double> taus);

/// Error-accumulation report for the calibrated model; writes
/// theorem_report.txt.
void cmd_theorem_check(const ExperimentConfig& cfg, const std::string& out_dir);

} // namespace diffquant
