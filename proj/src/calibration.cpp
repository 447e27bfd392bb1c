// SPDX-License-Identifier: Apache-2.0
#include "diffquant/calibration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "diffquant/rng.hpp"
#include "diffquant/sampler.hpp"

namespace diffquant {

namespace {

class PoolRecordTap final : public LayerTap {
public:
  explicit PoolRecordTap(LayerInputPool& pool) : pool_(pool) {}
  void tap(int layer, int, std::span<double> input) override {
    pool_.add_row(layer, input);
  }

private:
  LayerInputPool& pool_;
};

void check_spec(const CalibrationSpec& spec) {
  if (spec.conditions.empty())
    throw std::invalid_argument("CalibrationSpec: conditions must be non-empty");
  if (spec.samples_per_condition < 1)
    throw std::invalid_argument("CalibrationSpec: samples_per_condition >= 1");
}

QuantParams calibrate_pool(std::span<const double> values, int bits,
                           const CalibrationSpec& spec) {
  if (spec.act_calib_method == ActCalibMethod::kMinMax)
    return calibrate_minmax(values, bits);

  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const std::size_t cap = static_cast<std::size_t>(std::max(spec.max_mse_values, 2));
  if (values.size() <= cap)
    return calibrate_mse_ranged(values, lo, hi, bits, spec.mse_grid_points);
  // Strided subsample for the MSE objective; the range stays exact. The
  // population extremes are always part of the objective so clipping
  // candidates pay their cost even when the stride skips the tail.
  const std::size_t stride = (values.size() + cap - 1) / cap;
  std::vector<double> sub;
  sub.reserve(values.size() / stride + 3);
  for (std::size_t i = 0; i < values.size(); i += stride) sub.push_back(values[i]);
  sub.push_back(lo);
  sub.push_back(hi);
  return calibrate_mse_ranged(sub, lo, hi, bits, spec.mse_grid_points);
}

// Fits the (layer, t) quantizers of one timestep from a recorded pool and
// writes achieved calibration MSEs into the log row.
void calibrate_timestep(const QuantizedDenoiser& qm, ActQuantTable& table,
                        const LayerInputPool& pool, int t,
                        const CalibrationSpec& spec, CalibLogRow* row) {
  const int sched_bits = table.bits_at(t);
  for (int layer = 0; layer < kNumQuantLayers; ++layer) {
    if (row) row->layer_mse[static_cast<std::size_t>(layer)] = -1.0;
    if (!table.layer_enabled(layer)) continue;
    const int bits = effective_layer_bits(layer, sched_bits);
    if (is_passthrough_bits(bits)) continue;
    std::span<const double> values = pool.values[static_cast<std::size_t>(layer)];
    if (values.empty())
      throw std::invalid_argument("calibrate_timestep: no recorded inputs");
    QuantParams q = calibrate_pool(values, bits, spec);
    if (row)
      row->layer_mse[static_cast<std::size_t>(layer)] = quantization_mse(values, q);
    table.set_entry(layer, t, std::move(q));
  }
  (void)qm;
}

std::vector<int> population_labels(const CalibrationSpec& spec) {
  // Trajectory i is conditioned on conditions[i % |conditions|], matching
  // sample_with's label assignment for the same condition list.
  return spec.conditions;
}

} // namespace

Tensor record_forward(const Denoiser& model, std::span<const double> params,
                      const Tensor& x, int t, int label, LayerInputPool& pool) {
  PoolRecordTap tap(pool);
  return model.forward_with(params, x, t, label, &tap);
}

ActQuantTable progressive_calibrate(const QuantizedDenoiser& qm,
                                    const CalibrationSpec& spec,
                                    const NoiseSchedule& sched,
                                    CalibLog* log) {
  check_spec(spec);
  const int T = sched.steps();
  if (qm.table().steps() != T)
    throw std::invalid_argument(
        "progressive_calibrate: table schedule length does not match T");

  // Fresh entries, caller's bit schedule.
  ActQuantTable table = qm.table();
  for (int t = 1; t <= T; ++t) table.clear_entries_at(t);

  const std::vector<int> labels = population_labels(spec);
  const int n = spec.population();

  // Shared-seed x_T population (same stream derivation as sample_with).
  std::vector<Tensor> states;
  std::vector<int> traj_labels(static_cast<std::size_t>(n));
  states.reserve(static_cast<std::size_t>(n));
  const int d = qm.config().data_dim;
  for (int i = 0; i < n; ++i) {
    Rng rng(Rng::mix(spec.seed, static_cast<std::uint64_t>(i)));
    Tensor x({static_cast<std::size_t>(d)});
    rng.fill_normal(x.span());
    states.push_back(std::move(x));
    traj_labels[static_cast<std::size_t>(i)] =
        labels[static_cast<std::size_t>(i) % labels.size()];
  }

  for (int t = T; t >= 1; --t) {
    const auto tick = std::chrono::steady_clock::now();
    CalibLogRow row;
    row.t = t;

    // Record this step's layer inputs with weights quantized and
    // activations full precision, then fit the step-t quantizers.
    LayerInputPool pool;
    for (int i = 0; i < n; ++i)
      qm.record_predict(states[static_cast<std::size_t>(i)], t,
                        traj_labels[static_cast<std::size_t>(i)], pool);
    calibrate_timestep(qm, table, pool, t, spec, &row);

    // Advance the population through the now-quantized step t, so every
    // earlier step calibrates on data with all previous steps quantized.
    for (int i = 0; i < n; ++i) {
      Tensor& x = states[static_cast<std::size_t>(i)];
      const Tensor eps = qm.predict_with_table(
          x, t, traj_labels[static_cast<std::size_t>(i)], table);
      x = ddpm_step(x, eps, t, sched, nullptr, SigmaMode::kZero);
    }

    row.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - tick)
                      .count();
    if (log) log->push_back(row);
  }
  return table;
}

ActQuantTable fp_trajectory_calibrate(const QuantizedDenoiser& qm,
                                      const CalibrationSpec& spec,
                                      const NoiseSchedule& sched,
                                      CalibLog* log) {
  check_spec(spec);
  const int T = sched.steps();
  if (qm.table().steps() != T)
    throw std::invalid_argument(
        "fp_trajectory_calibrate: table schedule length does not match T");

  ActQuantTable table = qm.table();
  for (int t = 1; t <= T; ++t) table.clear_entries_at(t);

  const std::vector<int> labels = population_labels(spec);
  const std::vector<Trajectory> trajs =
      sample(qm.base(), spec.population(), labels, spec.seed, sched,
             SigmaMode::kZero);

  for (int t = T; t >= 1; --t) {
    const auto tick = std::chrono::steady_clock::now();
    CalibLogRow row;
    row.t = t;

    LayerInputPool pool;
    for (const Trajectory& traj : trajs)
      qm.record_predict(traj.state_at(t), t, traj.label, pool);
    calibrate_timestep(qm, table, pool, t, spec, &row);

    row.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - tick)
                      .count();
    if (log) log->push_back(row);
  }
  return table;
}

namespace {

struct Moments {
  double mean = 0, sd = 0, lo = 0, hi = 0;
  std::vector<double> dim_mean, dim_var;
};

Moments pool_moments(const LayerInputPool& pool, int layer) {
  const auto& v = pool.values[static_cast<std::size_t>(layer)];
  const std::size_t w = pool.row_width[static_cast<std::size_t>(layer)];
  const std::size_t n = pool.rows(layer);
  Moments m;
  if (v.empty()) return m;

  m.lo = m.hi = v[0];
  double sum = 0;
  for (double x : v) {
    sum += x;
    m.lo = std::min(m.lo, x);
    m.hi = std::max(m.hi, x);
  }
  m.mean = sum / static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - m.mean) * (x - m.mean);
  m.sd = std::sqrt(var / static_cast<double>(v.size()));

  m.dim_mean.assign(w, 0.0);
  m.dim_var.assign(w, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < w; ++j) m.dim_mean[j] += v[r * w + j];
  for (std::size_t j = 0; j < w; ++j) m.dim_mean[j] /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < w; ++j) {
      const double dxj = v[r * w + j] - m.dim_mean[j];
      m.dim_var[j] += dxj * dxj;
    }
  for (std::size_t j = 0; j < w; ++j) m.dim_var[j] /= static_cast<double>(n);
  return m;
}

double diag_sym_kl(const Moments& a, const Moments& b) {
  const std::size_t w = a.dim_mean.size();
  double acc = 0.0;
  for (std::size_t j = 0; j < w; ++j) {
    const double va = std::max(a.dim_var[j], 1e-12);
    const double vb = std::max(b.dim_var[j], 1e-12);
    const double dm = a.dim_mean[j] - b.dim_mean[j];
    const double kl_ab = 0.5 * (std::log(vb / va) + (va + dm * dm) / vb - 1.0);
    const double kl_ba = 0.5 * (std::log(va / vb) + (vb + dm * dm) / va - 1.0);
    acc += 0.5 * (kl_ab + kl_ba);
  }
  return acc / static_cast<double>(w);
}

} // namespace

std::vector<ShiftStats> distribution_shift_report(
    const Denoiser& model, const QuantizedDenoiser& qm,
    const CalibrationSpec& spec, const NoiseSchedule& sched,
    const std::vector<int>& probe_timesteps, int layer) {
  check_spec(spec);
  const std::vector<int>& labels = spec.conditions;
  const int n = spec.population();

  const std::vector<Trajectory> fp_trajs =
      sample(model, n, labels, spec.seed, sched, SigmaMode::kZero);
  const std::vector<Trajectory> q_trajs =
      sample(qm, n, labels, spec.seed, sched, SigmaMode::kZero);

  std::vector<ShiftStats> out;
  out.reserve(probe_timesteps.size());
  for (int t : probe_timesteps) {
    LayerInputPool fp_pool, q_pool;
    for (const Trajectory& traj : fp_trajs)
      record_forward(model, model.parameters(), traj.state_at(t), t, traj.label,
                     fp_pool);
    for (const Trajectory& traj : q_trajs)
      qm.record_predict(traj.state_at(t), t, traj.label, q_pool);

    const Moments a = pool_moments(fp_pool, layer);
    const Moments b = pool_moments(q_pool, layer);
    ShiftStats s;
    s.t = t;
    s.mean_fp = a.mean;
    s.std_fp = a.sd;
    s.min_fp = a.lo;
    s.max_fp = a.hi;
    s.mean_q = b.mean;
    s.std_q = b.sd;
    s.min_q = b.lo;
    s.max_q = b.hi;
    s.sym_kl = diag_sym_kl(a, b);
    out.push_back(s);
  }
  return out;
}

std::string format_calib_log(const CalibLog& log) {
  std::ostringstream os;
  os << "t\twall_ms";
  for (int l = 0; l < kNumQuantLayers; ++l) os << "\tmse_" << layer_name(l);
  os << "\n";
  char buf[64];
  for (const CalibLogRow& row : log) {
    os << row.t;
    std::snprintf(buf, sizeof buf, "%.3f", row.wall_ms);
    os << "\t" << buf;
    for (double m : row.layer_mse) {
      std::snprintf(buf, sizeof buf, "%.12g", m);
      os << "\t" << buf;
    }
    os << "\n";
  }
  return os.str();
}

} // namespace diffquant
