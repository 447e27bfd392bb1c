// SPDX-License-Identifier: Apache-2.0
#include "diffquant/quantized_denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "diffquant/errors.hpp"
#include "diffquant/sampler.hpp"

namespace diffquant {

// ---------------------------------------------------------------------------
// ActQuantTable

ActQuantTable::ActQuantTable(int T, int base_bits) : T_(T) {
  if (T < 1) throw std::invalid_argument("ActQuantTable: T must be >= 1");
  if (!is_passthrough_bits(base_bits)) qrange(base_bits); // validate
  schedule_.assign(static_cast<std::size_t>(T), base_bits);
  enabled_.fill(true);
  entries_.assign(static_cast<std::size_t>(T) * kNumQuantLayers, std::nullopt);
}

std::size_t ActQuantTable::index_t(int t) const {
  if (t < 1 || t > T_)
    throw std::invalid_argument("ActQuantTable: timestep " + std::to_string(t) +
                                " outside [1, " + std::to_string(T_) + "]");
  return static_cast<std::size_t>(t - 1);
}

std::size_t ActQuantTable::check_layer(int layer) {
  if (layer < 0 || layer >= kNumQuantLayers)
    throw std::invalid_argument("ActQuantTable: bad layer id");
  return static_cast<std::size_t>(layer);
}

void ActQuantTable::set_timestep_bits(int t, int bits) {
  if (!is_passthrough_bits(bits)) qrange(bits); // validate
  schedule_[index_t(t)] = bits;
  clear_entries_at(t);
}

void ActQuantTable::set_layer_enabled(int layer, bool on) {
  enabled_[check_layer(layer)] = on;
}

bool ActQuantTable::has_entry(int layer, int t) const {
  return entries_[slot(layer, t)].has_value();
}

const QuantParams& ActQuantTable::entry(int layer, int t) const {
  const auto& e = entries_[slot(layer, t)];
  if (!e) throw UncalibratedTimestepError(layer, t);
  return *e;
}

void ActQuantTable::set_entry(int layer, int t, QuantParams q) {
  entries_[slot(layer, t)] = std::move(q);
}

void ActQuantTable::clear_entries_at(int t) {
  const std::size_t base = index_t(t) * kNumQuantLayers;
  for (int l = 0; l < kNumQuantLayers; ++l) entries_[base + l].reset();
}

bool ActQuantTable::fully_calibrated() const {
  for (int t = 1; t <= T_; ++t) {
    const int b = bits_at(t);
    for (int l = 0; l < kNumQuantLayers; ++l) {
      if (!enabled_[static_cast<std::size_t>(l)]) continue;
      if (is_passthrough_bits(effective_layer_bits(l, b))) continue;
      if (!has_entry(l, t)) return false;
    }
  }
  return true;
}

double ActQuantTable::average_bits() const {
  if (schedule_.empty()) return 0.0;
  const double sum = std::accumulate(schedule_.begin(), schedule_.end(), 0.0);
  return sum / static_cast<double>(schedule_.size());
}

std::string ActQuantTable::to_text() const {
  std::ostringstream os;
  char buf[64];
  os << "diffquant-act-table v1\n";
  os << "T " << T_ << "\n";
  if (!meta.empty()) os << "meta " << meta << "\n";
  os << "bit_schedule";
  for (int b : schedule_) os << " " << b;
  os << "\n";
  os << "enabled";
  for (bool e : enabled_) os << " " << (e ? 1 : 0);
  os << "\n";
  std::size_t n_rows = 0;
  for (const auto& e : entries_)
    if (e) ++n_rows;
  os << "rows " << n_rows << "\n";
  os << "# layer t bits scale zero_point\n";
  for (int t = 1; t <= T_; ++t)
    for (int l = 0; l < kNumQuantLayers; ++l)
      if (has_entry(l, t)) {
        const QuantParams& q = entry(l, t);
        std::snprintf(buf, sizeof buf, "%.17g", q.scale);
        os << l << " " << t << " " << q.bits << " " << buf << " "
           << q.zero_point << "\n";
      }
  return os.str();
}

ActQuantTable ActQuantTable::from_text(const std::string& text) {
  std::istringstream is(text);
  std::string magic, version;
  is >> magic >> version;
  if (magic != "diffquant-act-table" || version != "v1")
    throw std::runtime_error("ActQuantTable: unrecognized table format");

  std::string key;
  int T = 0;
  is >> key >> T;
  if (key != "T" || T < 1)
    throw std::runtime_error("ActQuantTable: bad T header");
  ActQuantTable table(T, kFpBits);

  is >> key;
  if (key == "meta") {
    is >> table.meta;
    is >> key;
  }
  if (key != "bit_schedule")
    throw std::runtime_error("ActQuantTable: missing bit_schedule");
  for (int t = 1; t <= T; ++t) {
    int b;
    is >> b;
    table.schedule_[static_cast<std::size_t>(t - 1)] = b;
  }
  is >> key;
  if (key != "enabled") throw std::runtime_error("ActQuantTable: missing enabled");
  for (int l = 0; l < kNumQuantLayers; ++l) {
    int e;
    is >> e;
    table.enabled_[static_cast<std::size_t>(l)] = e != 0;
  }
  std::size_t n_rows = 0;
  is >> key >> n_rows;
  if (key != "rows") throw std::runtime_error("ActQuantTable: missing rows");
  std::string comment_line;
  std::getline(is, comment_line); // rest of rows line
  std::getline(is, comment_line); // header comment
  for (std::size_t r = 0; r < n_rows; ++r) {
    int l, t, bits, z;
    double scale;
    if (!(is >> l >> t >> bits >> scale >> z))
      throw std::runtime_error("ActQuantTable: truncated row block");
    QuantParams q;
    q.bits = bits;
    const auto [lo, hi] = qrange(bits);
    q.q_min = lo;
    q.q_max = hi;
    q.scale = scale;
    q.zero_point = z;
    table.set_entry(l, t, std::move(q));
  }
  return table;
}

void ActQuantTable::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("ActQuantTable: cannot open " + path);
  f << to_text();
  if (!f) throw std::runtime_error("ActQuantTable: write failed for " + path);
}

ActQuantTable ActQuantTable::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw NotFoundError("quantizer table not found: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

// ---------------------------------------------------------------------------
// LayerInputPool

void LayerInputPool::add_row(int layer, std::span<const double> row) {
  auto& v = values[static_cast<std::size_t>(layer)];
  auto& w = row_width[static_cast<std::size_t>(layer)];
  if (w == 0) w = row.size();
  else if (w != row.size())
    throw std::invalid_argument("LayerInputPool: inconsistent row width");
  v.insert(v.end(), row.begin(), row.end());
}

std::size_t LayerInputPool::rows(int layer) const {
  const auto& v = values[static_cast<std::size_t>(layer)];
  const auto w = row_width[static_cast<std::size_t>(layer)];
  return w == 0 ? 0 : v.size() / w;
}

bool LayerInputPool::empty() const {
  for (const auto& v : values)
    if (!v.empty()) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Taps

namespace {

class QuantizeTap final : public LayerTap {
public:
  explicit QuantizeTap(const ActQuantTable& table) : table_(table) {}

  void tap(int layer, int t, std::span<double> input) override {
    if (!table_.layer_enabled(layer)) return;
    const int eff = effective_layer_bits(layer, table_.bits_at(t));
    if (is_passthrough_bits(eff)) return;
    const QuantParams& q = table_.entry(layer, t);
    for (double& v : input)
      v = fake_quantize_value(v, q.scale, q.zero_point, q.q_min, q.q_max);
  }

private:
  const ActQuantTable& table_;
};

class RecordTap final : public LayerTap {
public:
  explicit RecordTap(LayerInputPool& pool) : pool_(pool) {}

  void tap(int layer, int, std::span<double> input) override {
    pool_.add_row(layer, input);
  }

private:
  LayerInputPool& pool_;
};

} // namespace

// ---------------------------------------------------------------------------
// QuantizedDenoiser

void QuantizedDenoiser::set_table(ActQuantTable table) {
  table_ = std::move(table);
}

const QuantParams& QuantizedDenoiser::weight_params(int layer) const {
  if (layer < 0 || layer >= kNumQuantLayers)
    throw std::invalid_argument("weight_params: bad layer id");
  return weight_params_[static_cast<std::size_t>(layer)];
}

Tensor QuantizedDenoiser::predict(const Tensor& x, int t, int label) const {
  return predict_with_table(x, t, label, table_);
}

Tensor QuantizedDenoiser::predict_with_table(const Tensor& x, int t, int label,
                                             const ActQuantTable& table) const {
  QuantizeTap tap(table);
  return base_.forward_with(theta_hat_, x, t, label, &tap);
}

Tensor QuantizedDenoiser::base_predict(const Tensor& x, int t,
                                       int label) const {
  return base_.predict(x, t, label);
}

Tensor QuantizedDenoiser::weight_only_predict(const Tensor& x, int t,
                                              int label) const {
  return base_.forward_with(theta_hat_, x, t, label, nullptr);
}

Tensor QuantizedDenoiser::record_predict(const Tensor& x, int t, int label,
                                         LayerInputPool& pool) const {
  RecordTap tap(pool);
  return base_.forward_with(theta_hat_, x, t, label, &tap);
}

// ---------------------------------------------------------------------------
// Weight quantization

namespace {

// Gram matrix X^T X / N of a layer's recorded inputs.
std::vector<double> gram_of_pool(const LayerInputPool& pool, int layer) {
  const std::size_t w = pool.row_width[static_cast<std::size_t>(layer)];
  const std::size_t n = pool.rows(layer);
  const auto& v = pool.values[static_cast<std::size_t>(layer)];
  std::vector<double> g(w * w, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = v.data() + r * w;
    for (std::size_t i = 0; i < w; ++i) {
      const double ri = row[i];
      if (ri == 0.0) continue;
      for (std::size_t j = i; j < w; ++j) g[i * w + j] += ri * row[j];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = i; j < w; ++j) {
      g[i * w + j] *= inv_n;
      g[j * w + i] = g[i * w + j];
    }
  return g;
}

// e^T G e for e = what - w.
double gram_cost(std::span<const double> g, std::span<const double> e) {
  const std::size_t n = e.size();
  double cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (e[i] == 0.0) continue;
    double s = 0.0;
    const double* gi = g.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) s += gi[j] * e[j];
    cost += e[i] * s;
  }
  return cost;
}

void quantize_row(std::span<const double> w, const QuantParams& q,
                  std::span<double> out) {
  for (std::size_t i = 0; i < w.size(); ++i)
    out[i] = fake_quantize_value(w[i], q.scale, q.zero_point, q.q_min, q.q_max);
}

// Greedy per-weight rounding flip: move each quantized weight one grid step
// toward the other rounding choice when that lowers e^T G e. Single pass in
// descending |residual| order.
void refine_rounding(std::span<const double> w, std::span<const double> g,
                     const QuantParams& q, std::span<double> what) {
  const std::size_t n = w.size();
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = what[i] - w[i];

  std::vector<double> u(n, 0.0); // G e
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* gi = g.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) s += gi[j] * e[j];
    u[i] = s;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(e[a]) > std::abs(e[b]);
  });

  const double lo = q.scale * (q.q_min - q.zero_point);
  const double hi = q.scale * (q.q_max - q.zero_point);
  for (std::size_t j : order) {
    const double d = e[j] > 0.0 ? -q.scale : q.scale;
    const double cand = what[j] + d;
    if (cand < lo - 1e-12 || cand > hi + 1e-12) continue;
    const double delta_cost = d * d * g[j * n + j] + 2.0 * d * u[j];
    if (delta_cost < 0.0) {
      what[j] = cand;
      e[j] += d;
      for (std::size_t i = 0; i < n; ++i) u[i] += d * g[i * n + j];
    }
  }
}

} // namespace

double layer_output_mse(const Denoiser& model, int layer,
                        const QuantParams& params, const LayerInputPool& pool) {
  const std::size_t in = static_cast<std::size_t>(model.layer_in_dim(layer));
  const std::size_t out = static_cast<std::size_t>(model.layer_out_dim(layer));
  if (pool.rows(layer) == 0)
    throw std::invalid_argument("layer_output_mse: empty input pool");

  std::span<const double> w = model.layer_weights(model.parameters(), layer);
  Tensor wt({out, in}, std::vector<double>(w.begin(), w.end()));
  Tensor what = fake_quantize(wt, params);

  const std::vector<double> g = gram_of_pool(pool, layer);
  double total = 0.0;
  std::vector<double> e(in);
  for (std::size_t r = 0; r < out; ++r) {
    for (std::size_t i = 0; i < in; ++i)
      e[i] = what[r * in + i] - wt[r * in + i];
    total += gram_cost(g, e);
  }
  return total / static_cast<double>(out);
}

QuantizedDenoiser quantize_weights(const Denoiser& model, int bits,
                                   const LayerInputPool& calib_inputs,
                                   const WeightQuantOptions& options) {
  QuantizedDenoiser qm(model);
  qm.theta_hat_.assign(model.parameters().begin(), model.parameters().end());
  qm.weight_bits_ = bits;
  if (is_passthrough_bits(bits)) return qm;

  qrange(bits); // validate
  if (calib_inputs.empty())
    throw std::invalid_argument("quantize_weights: empty calibration inputs");
  if (options.scale_grid_points < 2)
    throw std::invalid_argument("quantize_weights: need >= 2 grid points");

  for (int layer = 0; layer < kNumQuantLayers; ++layer) {
    const std::size_t in = static_cast<std::size_t>(model.layer_in_dim(layer));
    const std::size_t out = static_cast<std::size_t>(model.layer_out_dim(layer));
    if (calib_inputs.rows(layer) == 0)
      throw std::invalid_argument(
          std::string("quantize_weights: no calibration inputs for layer ") +
          layer_name(layer));

    const std::vector<double> g = gram_of_pool(calib_inputs, layer);
    std::span<const double> w = model.layer_weights(model.parameters(), layer);
    std::span<double> what = model.layer_weights(std::span<double>(qm.theta_hat_), layer);

    QuantParams lp;
    lp.bits = bits;
    const auto [q_lo, q_hi] = qrange(bits);
    lp.q_min = q_lo;
    lp.q_max = q_hi;
    lp.granularity = Granularity::kPerChannel;
    lp.axis = 0;
    lp.channel_scales.resize(out);
    lp.channel_zero_points.resize(out);

    std::vector<double> row_hat(in), e(in);
    for (std::size_t r = 0; r < out; ++r) {
      std::span<const double> row = w.subspan(r * in, in);
      double lo = row[0], hi = row[0];
      for (double v : row) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }

      QuantParams best;
      double best_cost = std::numeric_limits<double>::infinity();
      for (int k = 0; k < options.scale_grid_points; ++k) {
        const double alpha = 0.5 + 0.5 * static_cast<double>(k) /
                                       static_cast<double>(options.scale_grid_points - 1);
        const QuantParams cand = params_for_range(alpha * lo, alpha * hi, bits);
        quantize_row(row, cand, row_hat);
        for (std::size_t i = 0; i < in; ++i) e[i] = row_hat[i] - row[i];
        const double cost = gram_cost(g, e);
        if (cost < best_cost) {
          best_cost = cost;
          best = cand;
        }
      }

      quantize_row(row, best, row_hat);
      if (options.adaptive_rounding) refine_rounding(row, g, best, row_hat);
      std::copy(row_hat.begin(), row_hat.end(), what.begin() + static_cast<std::ptrdiff_t>(r * in));
      lp.channel_scales[r] = best.scale;
      lp.channel_zero_points[r] = best.zero_point;
    }
    qm.weight_params_[static_cast<std::size_t>(layer)] = std::move(lp);
  }
  return qm;
}

std::vector<Trajectory> sample(const QuantizedDenoiser& qm, int n,
                               std::span<const int> labels, std::uint64_t seed,
                               const NoiseSchedule& sched, SigmaMode sigma_mode,
                               bool record_noises) {
  return sample_with(
      [&qm](const Tensor& x, int t, int label) { return qm.predict(x, t, label); },
      qm.config().data_dim, n, labels, seed, sched, sigma_mode, record_noises);
}

LayerInputPool collect_fp_layer_inputs(const Denoiser& model,
                                       std::span<const int> conditions,
                                       int samples_per_condition,
                                       std::uint64_t seed,
                                       const NoiseSchedule& sched) {
  if (conditions.empty() || samples_per_condition < 1)
    throw std::invalid_argument("collect_fp_layer_inputs: empty calibration spec");

  LayerInputPool pool;
  RecordTap tap(pool);
  const int n = static_cast<int>(conditions.size()) * samples_per_condition;
  const auto predict = [&](const Tensor& x, int t, int label) {
    return model.forward_with(model.parameters(), x, t, label, &tap);
  };
  sample_with(predict, model.config().data_dim, n, conditions, seed, sched,
              SigmaMode::kZero);
  return pool;
}

} // namespace diffquant
