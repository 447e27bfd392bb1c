// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "diffquant/denoiser.hpp"
#include "diffquant/quant.hpp"
#include "diffquant/sampler.hpp"

namespace diffquant {

/// Bit-width actually applied to one layer given the schedule bits at a
/// timestep. The output head's input is protected at >= 8 bits.
inline int effective_layer_bits(int layer, int schedule_bits) {
  if (is_passthrough_bits(schedule_bits)) return kFpBits;
  return layer == kLayerOut ? std::max(schedule_bits, 8) : schedule_bits;
}

/// Per-(layer, timestep) activation quantizers plus the per-timestep bit
/// schedule B. Timesteps run over [1, T]. A schedule entry of kFpBits means
/// the step's activations stay full precision.
class ActQuantTable {
public:
  ActQuantTable() = default;
  ActQuantTable(int T, int base_bits);

  int steps() const noexcept { return T_; }

  int bits_at(int t) const { return schedule_[index_t(t)]; }
  const std::vector<int>& bit_schedule() const noexcept { return schedule_; }

  /// Sets B[t] and invalidates any calibrated entries at t.
  void set_timestep_bits(int t, int bits);

  bool layer_enabled(int layer) const { return enabled_[check_layer(layer)]; }
  void set_layer_enabled(int layer, bool on);

  bool has_entry(int layer, int t) const;
  /// Throws UncalibratedTimestepError when missing.
  const QuantParams& entry(int layer, int t) const;
  void set_entry(int layer, int t, QuantParams q);
  void clear_entries_at(int t);

  /// True when every enabled layer has an entry at every timestep whose
  /// effective bits are not pass-through.
  bool fully_calibrated() const;

  /// Mean of the integer bit schedule.
  double average_bits() const;

  bool same_schedule(const ActQuantTable& other) const {
    return T_ == other.T_ && schedule_ == other.schedule_;
  }

  /// Free-form single token recorded in the file (config hash, tool tag).
  std::string meta;

  std::string to_text() const;
  static ActQuantTable from_text(const std::string& text);
  void save(const std::string& path) const;
  static ActQuantTable load(const std::string& path);

private:
  std::size_t index_t(int t) const;
  static std::size_t check_layer(int layer);
  std::size_t slot(int layer, int t) const {
    return index_t(t) * kNumQuantLayers + check_layer(layer);
  }

  int T_ = 0;
  std::vector<int> schedule_;
  std::array<bool, kNumQuantLayers> enabled_{};
  std::vector<std::optional<QuantParams>> entries_;
};

/// Per-layer pools of recorded affine-layer inputs (row-major rows of the
/// layer's input width). Feeds weight and activation calibration.
struct LayerInputPool {
  std::array<std::vector<double>, kNumQuantLayers> values;
  std::array<std::size_t, kNumQuantLayers> row_width{};

  void add_row(int layer, std::span<const double> row);
  std::size_t rows(int layer) const;
  bool empty() const;
};

struct WeightQuantOptions {
  int scale_grid_points = 80; // alpha grid over [0.5, 1.0]
  bool adaptive_rounding = true;
};

/// Denoiser with fake-quantized weights and a per-timestep activation
/// quantizer table. The base model is copied at wrap time and never mutated;
/// quantized weights are materialized once.
class QuantizedDenoiser {
public:
  const Denoiser& base() const noexcept { return base_; }
  const DenoiserConfig& config() const noexcept { return base_.config(); }

  const ActQuantTable& table() const noexcept { return table_; }
  void set_table(ActQuantTable table);
  ActQuantTable& mutable_table() noexcept { return table_; }

  int weight_bits() const noexcept { return weight_bits_; }
  bool weights_passthrough() const noexcept {
    return is_passthrough_bits(weight_bits_);
  }
  /// Per-channel weight quantizer of one layer (empty when pass-through).
  const QuantParams& weight_params(int layer) const;
  std::span<const double> quantized_parameters() const noexcept {
    return theta_hat_;
  }

  /// Quantized forward: quantized weights, activations fake-quantized per
  /// the installed table. Throws UncalibratedTimestepError on a missing
  /// entry for an enabled layer at a non-pass-through timestep.
  Tensor predict(const Tensor& x, int t, int label) const;

  /// Same, against an explicit table (used while a table is being built).
  Tensor predict_with_table(const Tensor& x, int t, int label,
                            const ActQuantTable& table) const;

  /// Full-precision forward of the wrapped base model.
  Tensor base_predict(const Tensor& x, int t, int label) const;

  /// Quantized weights, full-precision activations.
  Tensor weight_only_predict(const Tensor& x, int t, int label) const;

  /// Quantized weights, full-precision activations; records the raw input
  /// of every enabled layer into `pool`.
  Tensor record_predict(const Tensor& x, int t, int label,
                        LayerInputPool& pool) const;

private:
  friend QuantizedDenoiser quantize_weights(const Denoiser&, int,
                                            const LayerInputPool&,
                                            const WeightQuantOptions&);
  explicit QuantizedDenoiser(const Denoiser& base) : base_(base) {}

  Denoiser base_;
  std::vector<double> theta_hat_;
  std::array<QuantParams, kNumQuantLayers> weight_params_;
  int weight_bits_ = kFpBits;
  ActQuantTable table_;
};

/// Wraps `model` with per-channel weight quantizers chosen by layer-output
/// MSE over a clipping-scale grid (alpha in [0.5, 1.0], min-max included at
/// alpha = 1), followed by an optional greedy rounding refinement. The
/// returned wrapper has an empty activation table sized for no steps; install
/// one before quantized forwards. bits >= kFpBits builds an exact
/// pass-through twin.
QuantizedDenoiser quantize_weights(const Denoiser& model, int bits,
                                   const LayerInputPool& calib_inputs,
                                   const WeightQuantOptions& options = {});

/// Records per-layer inputs of full-precision forward passes along FP
/// trajectories for every (condition, sample) pair; feeds quantize_weights.
LayerInputPool collect_fp_layer_inputs(const Denoiser& model,
                                       std::span<const int> conditions,
                                       int samples_per_condition,
                                       std::uint64_t seed,
                                       const NoiseSchedule& sched);

/// Mean squared error between a layer's FP output and its output with the
/// given per-channel weight quantizer, over the recorded input pool.
double layer_output_mse(const Denoiser& model, int layer,
                        const QuantParams& params, const LayerInputPool& pool);

/// Reverse sampling through the quantized forward (same stream contract as
/// the full-precision overload).
std::vector<Trajectory> sample(const QuantizedDenoiser& qm, int n,
                               std::span<const int> labels, std::uint64_t seed,
                               const NoiseSchedule& sched, SigmaMode sigma_mode,
                               bool record_noises = false);

} // namespace diffquant
