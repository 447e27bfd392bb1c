// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "diffquant/tensor.hpp"

namespace diffquant {

/// Sentinel bit-width meaning "no quantization" (full-precision pass-through).
/// Real quantizers use 2..16 bits.
inline constexpr int kFpBits = 32;

inline bool is_passthrough_bits(int bits) { return bits >= kFpBits; }

enum class Granularity { kPerTensor, kPerChannel };

/// One uniform affine fake-quantizer: unsigned asymmetric scheme,
///   q = clip(round(x / s) + z, q_min, q_max),  dequant = s * (q - z).
/// Per-channel parameters carry one (scale, zero_point) pair per slice
/// along `axis`.
struct QuantParams {
  double scale = 1.0;
  int zero_point = 0;
  int bits = 8;
  int q_min = 0;
  int q_max = 255;
  Granularity granularity = Granularity::kPerTensor;
  int axis = 0;
  std::vector<double> channel_scales;
  std::vector<int> channel_zero_points;

  bool per_channel() const noexcept {
    return granularity == Granularity::kPerChannel;
  }
};

/// Integer range of the unsigned asymmetric scheme: (0, 2^bits - 1).
/// Throws std::invalid_argument unless 2 <= bits <= 16.
std::pair<int, int> qrange(int bits);

/// Quantize-then-dequantize a single value with explicit parameters.
/// Rounding is half-away-from-zero.
double fake_quantize_value(double x, double scale, int zero_point, int q_min,
                           int q_max);

/// Element-wise fake quantization. Output shape equals input shape.
/// Per-channel params apply one (s, z) pair per slice along q.axis.
Tensor fake_quantize(const Tensor& x, const QuantParams& q);

/// Min-max calibration: s = (max - min) / (q_max - q_min),
/// z = clamp(round(-min / s), q_min, q_max). Constant samples fall back to
/// s = max(|c|, 1) * 2^-bits with z from the same formula (q_min for c >= 0).
QuantParams calibrate_minmax(std::span<const double> samples, int bits);
QuantParams calibrate_minmax(const Tensor& samples, int bits);

/// MSE-optimal clipping-range search over [alpha*min, alpha*max] with alpha
/// on a uniform grid over [0.5, 1.0] (zero-point re-derived per candidate).
/// The grid contains alpha = 1.0, so the result never does worse than
/// calibrate_minmax on the calibration samples.
QuantParams calibrate_mse(std::span<const double> samples, int bits,
                          int grid_points = 80);
QuantParams calibrate_mse(const Tensor& samples, int bits,
                          int grid_points = 80);

/// MSE search over an explicit full range [lo, hi]; the MSE objective is
/// evaluated on `samples` (which may be a subsample of the population the
/// range was taken from).
QuantParams calibrate_mse_ranged(std::span<const double> samples, double lo,
                                 double hi, int bits, int grid_points);

/// Mean squared fake-quantization error of `q` on `samples`.
double quantization_mse(std::span<const double> samples, const QuantParams& q);

/// Per-tensor parameters covering the clipping range [lo, hi]; degenerate
/// ranges use the constant fallback scale. Building block of the calibrators
/// and of the per-channel weight-scale search.
QuantParams params_for_range(double lo, double hi, int bits);

/// Key-value text record for one per-tensor quantizer; scales carry 17
/// significant digits so parsing reproduces the exact double.
std::string format_quant_params(const QuantParams& q);
QuantParams parse_quant_params(const std::string& text);

} // namespace diffquant
