// SPDX-License-Identifier: Apache-2.0
#include "diffquant/quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace diffquant {

std::pair<int, int> qrange(int bits) {
  if (bits < 2 || bits > 16)
    throw std::invalid_argument("qrange: bits must be in [2, 16], got " +
                                std::to_string(bits));
  return {0, (1 << bits) - 1};
}

double fake_quantize_value(double x, double scale, int zero_point, int q_min,
                           int q_max) {
  double q = std::round(x / scale) + static_cast<double>(zero_point);
  q = std::clamp(q, static_cast<double>(q_min), static_cast<double>(q_max));
  return scale * (q - static_cast<double>(zero_point));
}

namespace {

void fake_quantize_span(std::span<const double> in, std::span<double> out,
                        double s, int z, int q_min, int q_max) {
  for (std::size_t i = 0; i < in.size(); ++i)
    out[i] = fake_quantize_value(in[i], s, z, q_min, q_max);
}

} // namespace

QuantParams params_for_range(double lo, double hi, int bits) {
  const auto [q_min, q_max] = qrange(bits);
  QuantParams q;
  q.bits = bits;
  q.q_min = q_min;
  q.q_max = q_max;
  const bool degenerate = !(hi > lo);
  // The unsigned asymmetric scheme can only represent intervals containing
  // zero (z is clamped to [q_min, q_max]); extend one-sided ranges so every
  // sample stays representable.
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  if (degenerate) {
    const double c = lo != 0.0 ? lo : hi;
    q.scale = std::max(std::abs(c), 1.0) * std::ldexp(1.0, -bits);
  } else {
    q.scale = (hi - lo) / static_cast<double>(q_max - q_min);
  }
  const double z_raw = std::round(-lo / q.scale);
  q.zero_point = static_cast<int>(std::clamp(
      z_raw, static_cast<double>(q_min), static_cast<double>(q_max)));
  return q;
}

Tensor fake_quantize(const Tensor& x, const QuantParams& q) {
  x.require_finite("fake_quantize input");
  Tensor out(x.shape());
  if (!q.per_channel()) {
    fake_quantize_span(x.span(), out.span(), q.scale, q.zero_point, q.q_min,
                       q.q_max);
    return out;
  }

  if (q.axis < 0 || static_cast<std::size_t>(q.axis) >= x.rank())
    throw std::invalid_argument("fake_quantize: per-channel axis out of range");
  const std::size_t n_slices = x.shape()[q.axis];
  if (q.channel_scales.size() != n_slices ||
      q.channel_zero_points.size() != n_slices)
    throw std::invalid_argument(
        "fake_quantize: per-channel parameter count does not match axis extent");

  std::size_t inner = 1;
  for (std::size_t d = q.axis + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  std::size_t outer = 1;
  for (int d = 0; d < q.axis; ++d) outer *= x.shape()[d];

  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < n_slices; ++c) {
      const std::size_t base = (o * n_slices + c) * inner;
      fake_quantize_span({x.data() + base, inner}, {out.data() + base, inner},
                         q.channel_scales[c], q.channel_zero_points[c], q.q_min,
                         q.q_max);
    }
  }
  return out;
}

QuantParams calibrate_minmax(std::span<const double> samples, int bits) {
  if (samples.empty())
    throw std::invalid_argument("calibrate_minmax: empty sample set");
  qrange(bits); // validate before scanning
  double lo = samples[0], hi = samples[0];
  for (double v : samples) {
    if (!std::isfinite(v))
      throw std::invalid_argument("calibrate_minmax: non-finite sample");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return params_for_range(lo, hi, bits);
}

QuantParams calibrate_minmax(const Tensor& samples, int bits) {
  return calibrate_minmax(samples.span(), bits);
}

double quantization_mse(std::span<const double> samples,
                        const QuantParams& q) {
  double acc = 0.0;
  for (double v : samples) {
    const double d =
        v - fake_quantize_value(v, q.scale, q.zero_point, q.q_min, q.q_max);
    acc += d * d;
  }
  return acc / static_cast<double>(samples.size());
}

QuantParams calibrate_mse_ranged(std::span<const double> samples, double lo,
                                 double hi, int bits, int grid_points) {
  if (samples.empty())
    throw std::invalid_argument("calibrate_mse: empty sample set");
  if (grid_points < 2)
    throw std::invalid_argument("calibrate_mse: grid_points must be >= 2");
  if (hi <= lo) return params_for_range(lo, hi, bits); // constant fallback

  QuantParams best;
  double best_mse = std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid_points; ++i) {
    const double alpha =
        0.5 + 0.5 * static_cast<double>(i) / static_cast<double>(grid_points - 1);
    const QuantParams cand = params_for_range(alpha * lo, alpha * hi, bits);
    const double mse = quantization_mse(samples, cand);
    if (mse < best_mse) {
      best_mse = mse;
      best = cand;
    }
  }
  return best;
}

QuantParams calibrate_mse(std::span<const double> samples, int bits,
                          int grid_points) {
  if (samples.empty())
    throw std::invalid_argument("calibrate_mse: empty sample set");
  double lo = samples[0], hi = samples[0];
  for (double v : samples) {
    if (!std::isfinite(v))
      throw std::invalid_argument("calibrate_mse: non-finite sample");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return calibrate_mse_ranged(samples, lo, hi, bits, grid_points);
}

QuantParams calibrate_mse(const Tensor& samples, int bits, int grid_points) {
  return calibrate_mse(samples.span(), bits, grid_points);
}

std::string format_quant_params(const QuantParams& q) {
  std::ostringstream os;
  char buf[64];
  os << "bits " << q.bits << "\n";
  os << "granularity "
     << (q.per_channel() ? "per-channel" : "per-tensor") << "\n";
  os << "axis " << q.axis << "\n";
  if (q.per_channel()) {
    os << "channels " << q.channel_scales.size() << "\n";
    for (std::size_t c = 0; c < q.channel_scales.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", q.channel_scales[c]);
      os << "channel " << c << " scale " << buf << " zero_point "
         << q.channel_zero_points[c] << "\n";
    }
  } else {
    std::snprintf(buf, sizeof buf, "%.17g", q.scale);
    os << "scale " << buf << "\n";
    os << "zero_point " << q.zero_point << "\n";
  }
  return os.str();
}

QuantParams parse_quant_params(const std::string& text) {
  std::istringstream is(text);
  QuantParams q;
  std::string key;
  std::size_t n_channels = 0;
  while (is >> key) {
    if (key == "bits") {
      is >> q.bits;
      const auto [lo, hi] = qrange(q.bits);
      q.q_min = lo;
      q.q_max = hi;
    } else if (key == "granularity") {
      std::string g;
      is >> g;
      q.granularity = (g == "per-channel") ? Granularity::kPerChannel
                                           : Granularity::kPerTensor;
    } else if (key == "axis") {
      is >> q.axis;
    } else if (key == "scale") {
      is >> q.scale;
    } else if (key == "zero_point") {
      is >> q.zero_point;
    } else if (key == "channels") {
      is >> n_channels;
      q.channel_scales.resize(n_channels);
      q.channel_zero_points.resize(n_channels);
    } else if (key == "channel") {
      std::size_t c;
      std::string k1, k2;
      double s;
      int z;
      is >> c >> k1 >> s >> k2 >> z;
      if (c >= n_channels)
        throw std::invalid_argument("parse_quant_params: channel index out of range");
      q.channel_scales[c] = s;
      q.channel_zero_points[c] = z;
    } else {
      throw std::invalid_argument("parse_quant_params: unknown key '" + key + "'");
    }
  }
  return q;
}

} // namespace diffquant
