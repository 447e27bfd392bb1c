// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "diffquant/quantized_denoiser.hpp"
#include "diffquant/schedule.hpp"

namespace diffquant {

enum class ActCalibMethod { kMinMax, kMse };

/// Calibration population: one trajectory per (condition, sample) pair.
/// Conditions are the desk-scale analog of calibration prompts.
struct CalibrationSpec {
  std::vector<int> conditions;
  int samples_per_condition = 4;
  std::uint64_t seed = 11;
  ActCalibMethod act_calib_method = ActCalibMethod::kMse;
  int weight_bits = 8;
  int act_bits = 8;
  int mse_grid_points = 80;
  // Clipping ranges always come from the full recorded population; the MSE
  // objective is evaluated on at most this many values (strided subsample).
  int max_mse_values = 8192;

  int population() const {
    return static_cast<int>(conditions.size()) * samples_per_condition;
  }
};

struct CalibLogRow {
  int t = 0;
  double wall_ms = 0.0;
  // Achieved calibration MSE per layer; negative when the layer was skipped.
  std::array<double, kNumQuantLayers> layer_mse{};
};
using CalibLog = std::vector<CalibLogRow>;

/// Progressive calibration: iterate t = T..1 on a single trajectory
/// population that starts at the shared x_T draws and is advanced one DDPM
/// step per iteration *with every already-calibrated step quantized*. At
/// step t the per-layer inputs are recorded from a quantized-weight,
/// full-precision-activation forward and the (layer, t) quantizers are fit
/// on them at the schedule's bit-width. The caller's table schedule (with
/// any relaxation applied) is respected; entries are rebuilt from scratch.
ActQuantTable progressive_calibrate(const QuantizedDenoiser& qm,
                                    const CalibrationSpec& spec,
                                    const NoiseSchedule& sched,
                                    CalibLog* log = nullptr);

/// Baseline: the same per-(layer, t) calibration, but on activations
/// recorded along fully full-precision trajectories.
ActQuantTable fp_trajectory_calibrate(const QuantizedDenoiser& qm,
                                      const CalibrationSpec& spec,
                                      const NoiseSchedule& sched,
                                      CalibLog* log = nullptr);

/// Records inputs of every affine layer during one forward over explicit
/// parameters. Shared plumbing for calibration and diagnostics.
Tensor record_forward(const Denoiser& model, std::span<const double> params,
                      const Tensor& x, int t, int label, LayerInputPool& pool);

struct ShiftStats {
  int t = 0;
  double mean_fp = 0, std_fp = 0, min_fp = 0, max_fp = 0;
  double mean_q = 0, std_q = 0, min_q = 0, max_q = 0;
  double sym_kl = 0; // symmetric KL between diagonal-Gaussian fits
};

/// Per-timestep statistics of one layer's input activations under FP
/// trajectories (through the FP net) versus quantized trajectories (through
/// the quantized-weight net), with shared initial-noise seeds.
std::vector<ShiftStats> distribution_shift_report(
    const Denoiser& model, const QuantizedDenoiser& qm,
    const CalibrationSpec& spec, const NoiseSchedule& sched,
    const std::vector<int>& probe_timesteps, int layer = kLayerInX);

std::string format_calib_log(const CalibLog& log);

} // namespace diffquant
