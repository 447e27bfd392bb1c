// SPDX-License-Identifier: Apache-2.0
#include "diffquant/denoiser.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "diffquant/errors.hpp"

namespace diffquant {

namespace {

inline double silu(double v) { return v / (1.0 + std::exp(-v)); }

inline double silu_grad(double v) {
  const double s = 1.0 / (1.0 + std::exp(-v));
  return s * (1.0 + v * (1.0 - s));
}

// y += W x, W row-major (rows x cols)
inline void affine_acc(std::span<const double> w, std::span<const double> x,
                       std::span<double> y) {
  const std::size_t rows = y.size();
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* wr = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
    y[r] += s;
  }
}

// gW += g (outer) x ; gx += W^T g
inline void affine_backward(std::span<const double> w,
                            std::span<const double> x,
                            std::span<const double> g, std::span<double> gw,
                            double* gx) {
  const std::size_t rows = g.size();
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < rows; ++r) {
    const double gr = g[r];
    const double* wr = w.data() + r * cols;
    double* gwr = gw.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      gwr[c] += gr * x[c];
      if (gx) gx[c] += wr[c] * gr;
    }
  }
}

} // namespace

const char* layer_name(int layer) {
  switch (layer) {
    case kLayerInX: return "in_x";
    case kLayerInTime: return "in_time";
    case kLayerInCond: return "in_cond";
    case kLayerHidden1: return "hidden1";
    case kLayerHidden2: return "hidden2";
    case kLayerOut: return "out";
    default: return "?";
  }
}

Denoiser::Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
  if (cfg.data_dim < 1 || cfg.hidden_width < 1 || cfg.num_labels < 1 ||
      cfg.cond_emb_dim < 1 || cfg.time_feat_dim < 2 || cfg.time_feat_dim % 2)
    throw std::invalid_argument("DenoiserConfig: invalid dimensions");

  const std::size_t d = static_cast<std::size_t>(cfg.data_dim);
  const std::size_t h = static_cast<std::size_t>(cfg.hidden_width);
  const std::size_t f = static_cast<std::size_t>(cfg.time_feat_dim);
  const std::size_t e = static_cast<std::size_t>(cfg.cond_emb_dim);
  const std::size_t l = static_cast<std::size_t>(cfg.num_labels);

  std::size_t at = 0;
  off_.w_x = at; at += h * d;
  off_.w_t = at; at += h * f;
  off_.w_c = at; at += h * e;
  off_.b0 = at; at += h;
  off_.w_h1 = at; at += h * h;
  off_.b_h1 = at; at += h;
  off_.w_h2 = at; at += h * h;
  off_.b_h2 = at; at += h;
  off_.w_out = at; at += d * h;
  off_.b_out = at; at += d;
  off_.emb = at; at += l * e;
  off_.total = at;

  theta_.assign(off_.total, 0.0);
  init_parameters();
}

void Denoiser::init_parameters() {
  Rng rng(cfg_.init_seed);
  auto fill = [&](std::size_t at, std::size_t rows, std::size_t cols) {
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(cols));
    for (std::size_t i = 0; i < rows * cols; ++i)
      theta_[at + i] = std_dev * rng.normal();
  };
  const auto d = static_cast<std::size_t>(cfg_.data_dim);
  const auto h = static_cast<std::size_t>(cfg_.hidden_width);
  const auto f = static_cast<std::size_t>(cfg_.time_feat_dim);
  const auto e = static_cast<std::size_t>(cfg_.cond_emb_dim);
  const auto l = static_cast<std::size_t>(cfg_.num_labels);
  fill(off_.w_x, h, d);
  fill(off_.w_t, h, f);
  fill(off_.w_c, h, e);
  fill(off_.w_h1, h, h);
  fill(off_.w_h2, h, h);
  // w_out and all biases stay zero: the untrained model predicts zero noise.
  for (std::size_t i = 0; i < l * e; ++i) theta_[off_.emb + i] = rng.normal();
}

int Denoiser::layer_in_dim(int layer) const {
  switch (layer) {
    case kLayerInX: return cfg_.data_dim;
    case kLayerInTime: return cfg_.time_feat_dim;
    case kLayerInCond: return cfg_.cond_emb_dim;
    case kLayerHidden1:
    case kLayerHidden2:
    case kLayerOut: return cfg_.hidden_width;
    default: throw std::invalid_argument("layer_in_dim: bad layer id");
  }
}

int Denoiser::layer_out_dim(int layer) const {
  switch (layer) {
    case kLayerInX:
    case kLayerInTime:
    case kLayerInCond:
    case kLayerHidden1:
    case kLayerHidden2: return cfg_.hidden_width;
    case kLayerOut: return cfg_.data_dim;
    default: throw std::invalid_argument("layer_out_dim: bad layer id");
  }
}

std::span<const double> Denoiser::layer_weights(std::span<const double> params,
                                                int layer) const {
  const std::size_t n = static_cast<std::size_t>(layer_in_dim(layer)) *
                        static_cast<std::size_t>(layer_out_dim(layer));
  switch (layer) {
    case kLayerInX: return params.subspan(off_.w_x, n);
    case kLayerInTime: return params.subspan(off_.w_t, n);
    case kLayerInCond: return params.subspan(off_.w_c, n);
    case kLayerHidden1: return params.subspan(off_.w_h1, n);
    case kLayerHidden2: return params.subspan(off_.w_h2, n);
    case kLayerOut: return params.subspan(off_.w_out, n);
    default: throw std::invalid_argument("layer_weights: bad layer id");
  }
}

std::span<double> Denoiser::layer_weights(std::span<double> params,
                                          int layer) const {
  auto c = layer_weights(std::span<const double>(params), layer);
  return {params.data() + (c.data() - params.data()), c.size()};
}

std::vector<double> Denoiser::time_features(int t) const {
  const int half = cfg_.time_feat_dim / 2;
  std::vector<double> phi(static_cast<std::size_t>(cfg_.time_feat_dim));
  for (int k = 0; k < half; ++k) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(k) /
                 static_cast<double>(half));
    phi[static_cast<std::size_t>(2 * k)] = std::sin(freq * static_cast<double>(t));
    phi[static_cast<std::size_t>(2 * k + 1)] = std::cos(freq * static_cast<double>(t));
  }
  return phi;
}

double Denoiser::flops_per_forward() const {
  const double d = cfg_.data_dim, h = cfg_.hidden_width;
  const double f = cfg_.time_feat_dim, e = cfg_.cond_emb_dim;
  return h * d + h * f + h * e + 2.0 * h * h + d * h;
}

Tensor Denoiser::forward_with(std::span<const double> params, const Tensor& x,
                              int t, int label, LayerTap* tap) const {
  if (static_cast<int>(x.size()) != cfg_.data_dim)
    throw std::invalid_argument("Denoiser: input dimension mismatch");
  if (label < 0 || label >= cfg_.num_labels)
    throw std::invalid_argument("Denoiser: label out of range");
  if (params.size() != off_.total)
    throw std::invalid_argument("Denoiser: parameter vector size mismatch");

  const std::size_t h = static_cast<std::size_t>(cfg_.hidden_width);
  const std::size_t e = static_cast<std::size_t>(cfg_.cond_emb_dim);

  std::vector<double> in_x(x.span().begin(), x.span().end());
  std::vector<double> in_t = time_features(t);
  std::vector<double> in_c(params.begin() + static_cast<std::ptrdiff_t>(
                                                off_.emb + static_cast<std::size_t>(label) * e),
                           params.begin() + static_cast<std::ptrdiff_t>(
                                                off_.emb + (static_cast<std::size_t>(label) + 1) * e));
  if (tap) {
    tap->tap(kLayerInX, t, in_x);
    tap->tap(kLayerInTime, t, in_t);
    tap->tap(kLayerInCond, t, in_c);
  }

  std::vector<double> pre1(params.begin() + static_cast<std::ptrdiff_t>(off_.b0),
                           params.begin() + static_cast<std::ptrdiff_t>(off_.b0 + h));
  affine_acc(layer_weights(params, kLayerInX), in_x, pre1);
  affine_acc(layer_weights(params, kLayerInTime), in_t, pre1);
  affine_acc(layer_weights(params, kLayerInCond), in_c, pre1);

  std::vector<double> h1(h);
  for (std::size_t i = 0; i < h; ++i) h1[i] = silu(pre1[i]);

  // Residual block 1. Only the affine input is tapped; the residual skip
  // stays full precision.
  std::vector<double> a1 = h1;
  if (tap) tap->tap(kLayerHidden1, t, a1);
  std::vector<double> z1(params.begin() + static_cast<std::ptrdiff_t>(off_.b_h1),
                         params.begin() + static_cast<std::ptrdiff_t>(off_.b_h1 + h));
  affine_acc(layer_weights(params, kLayerHidden1), a1, z1);
  std::vector<double> h2(h);
  for (std::size_t i = 0; i < h; ++i) h2[i] = h1[i] + silu(z1[i]);

  // Residual block 2.
  std::vector<double> a2 = h2;
  if (tap) tap->tap(kLayerHidden2, t, a2);
  std::vector<double> z2(params.begin() + static_cast<std::ptrdiff_t>(off_.b_h2),
                         params.begin() + static_cast<std::ptrdiff_t>(off_.b_h2 + h));
  affine_acc(layer_weights(params, kLayerHidden2), a2, z2);
  std::vector<double> h3(h);
  for (std::size_t i = 0; i < h; ++i) h3[i] = h2[i] + silu(z2[i]);

  std::vector<double> a3 = h3;
  if (tap) tap->tap(kLayerOut, t, a3);
  std::vector<double> out(params.begin() + static_cast<std::ptrdiff_t>(off_.b_out),
                          params.begin() + static_cast<std::ptrdiff_t>(
                                               off_.b_out + static_cast<std::size_t>(cfg_.data_dim)));
  affine_acc(layer_weights(params, kLayerOut), a3, out);

  return Tensor({static_cast<std::size_t>(cfg_.data_dim)}, std::move(out));
}

Tensor Denoiser::predict(const Tensor& x, int t, int label) const {
  return forward_with(theta_, x, t, label, nullptr);
}

double Denoiser::loss_and_gradient(std::span<const Tensor> x_t,
                                   std::span<const int> t,
                                   std::span<const int> labels,
                                   std::span<const Tensor> eps,
                                   std::span<double> grad) const {
  const std::size_t n = x_t.size();
  if (t.size() != n || labels.size() != n || eps.size() != n)
    throw std::invalid_argument("loss_and_gradient: batch size mismatch");
  if (grad.size() != off_.total)
    throw std::invalid_argument("loss_and_gradient: gradient size mismatch");

  const std::size_t d = static_cast<std::size_t>(cfg_.data_dim);
  const std::size_t h = static_cast<std::size_t>(cfg_.hidden_width);
  const std::size_t e = static_cast<std::size_t>(cfg_.cond_emb_dim);
  std::span<const double> params = theta_;

  std::fill(grad.begin(), grad.end(), 0.0);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> pre1(h), h1(h), z1(h), h2(h), z2(h), h3(h), out(d);
  std::vector<double> g_out(d), g_h3(h), g_h2(h), g_h1(h), d2(h), d1(h), d0(h);

  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> phi = time_features(t[i]);
    std::span<const double> x = x_t[i].span();
    const std::size_t emb_at = off_.emb + static_cast<std::size_t>(labels[i]) * e;
    std::span<const double> emb = params.subspan(emb_at, e);

    for (std::size_t j = 0; j < h; ++j) pre1[j] = params[off_.b0 + j];
    affine_acc(layer_weights(params, kLayerInX), x, pre1);
    affine_acc(layer_weights(params, kLayerInTime), phi, pre1);
    affine_acc(layer_weights(params, kLayerInCond), emb, pre1);
    for (std::size_t j = 0; j < h; ++j) h1[j] = silu(pre1[j]);

    for (std::size_t j = 0; j < h; ++j) z1[j] = params[off_.b_h1 + j];
    affine_acc(layer_weights(params, kLayerHidden1), h1, z1);
    for (std::size_t j = 0; j < h; ++j) h2[j] = h1[j] + silu(z1[j]);

    for (std::size_t j = 0; j < h; ++j) z2[j] = params[off_.b_h2 + j];
    affine_acc(layer_weights(params, kLayerHidden2), h2, z2);
    for (std::size_t j = 0; j < h; ++j) h3[j] = h2[j] + silu(z2[j]);

    for (std::size_t j = 0; j < d; ++j) out[j] = params[off_.b_out + j];
    affine_acc(layer_weights(params, kLayerOut), h3, out);

    double sample_loss = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double r = out[j] - eps[i][j];
      sample_loss += r * r;
      g_out[j] = 2.0 * r * inv_n;
    }
    loss += sample_loss * inv_n;

    // Backward.
    std::fill(g_h3.begin(), g_h3.end(), 0.0);
    affine_backward(layer_weights(params, kLayerOut), h3, g_out,
                    grad.subspan(off_.w_out, d * h), g_h3.data());
    for (std::size_t j = 0; j < d; ++j) grad[off_.b_out + j] += g_out[j];

    for (std::size_t j = 0; j < h; ++j) d2[j] = g_h3[j] * silu_grad(z2[j]);
    std::copy(g_h3.begin(), g_h3.end(), g_h2.begin());
    affine_backward(layer_weights(params, kLayerHidden2), h2, d2,
                    grad.subspan(off_.w_h2, h * h), g_h2.data());
    for (std::size_t j = 0; j < h; ++j) grad[off_.b_h2 + j] += d2[j];

    for (std::size_t j = 0; j < h; ++j) d1[j] = g_h2[j] * silu_grad(z1[j]);
    std::copy(g_h2.begin(), g_h2.end(), g_h1.begin());
    affine_backward(layer_weights(params, kLayerHidden1), h1, d1,
                    grad.subspan(off_.w_h1, h * h), g_h1.data());
    for (std::size_t j = 0; j < h; ++j) grad[off_.b_h1 + j] += d1[j];

    for (std::size_t j = 0; j < h; ++j) d0[j] = g_h1[j] * silu_grad(pre1[j]);
    affine_backward(layer_weights(params, kLayerInX), x, d0,
                    grad.subspan(off_.w_x, h * d), nullptr);
    affine_backward(layer_weights(params, kLayerInTime), phi, d0,
                    grad.subspan(off_.w_t, h * static_cast<std::size_t>(cfg_.time_feat_dim)),
                    nullptr);
    std::vector<double> g_emb(e, 0.0);
    affine_backward(layer_weights(params, kLayerInCond), emb, d0,
                    grad.subspan(off_.w_c, h * e), g_emb.data());
    for (std::size_t j = 0; j < h; ++j) grad[off_.b0 + j] += d0[j];
    for (std::size_t j = 0; j < e; ++j) grad[emb_at + j] += g_emb[j];
  }

  return loss;
}

Denoiser train_denoiser(const GaussianMixture& data, const NoiseSchedule& sched,
                        const DenoiserConfig& model_cfg, const TrainConfig& cfg,
                        TrainResult* result) {
  if (cfg.steps < 1 || cfg.batch_size < 1)
    throw std::invalid_argument("train_denoiser: invalid training settings");

  Denoiser model(model_cfg);
  Rng rng(cfg.seed);
  const std::size_t n_params = model.num_parameters();
  std::vector<double> grad(n_params), rms(n_params, 0.0);

  const std::size_t b = static_cast<std::size_t>(cfg.batch_size);
  std::vector<Tensor> x_t(b), eps(b);
  std::vector<int> ts(b), labels(b);

  TrainResult local;
  double running = 0.0;
  double best_running = 0.0;

  for (int step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < b; ++i) {
      LabeledSample s = data.draw(rng);
      const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.steps())));
      Tensor noise({static_cast<std::size_t>(model_cfg.data_dim)});
      rng.fill_normal(noise.span());
      x_t[i] = forward_diffuse(s.x, t, noise, sched);
      eps[i] = std::move(noise);
      ts[i] = t;
      labels[i] = s.label;
    }

    const double loss = model.loss_and_gradient(x_t, ts, labels, eps, grad);
    if (!std::isfinite(loss)) throw TrainingFailure(step);

    if (step == 0) {
      local.initial_loss = loss;
      running = loss;
      best_running = loss;
    } else {
      running = 0.99 * running + 0.01 * loss;
      best_running = std::min(best_running, running);
    }

    std::span<double> theta = model.mutable_parameters();
    for (std::size_t i = 0; i < n_params; ++i) {
      rms[i] = cfg.rms_decay * rms[i] + (1.0 - cfg.rms_decay) * grad[i] * grad[i];
      theta[i] -= cfg.learning_rate * grad[i] / (std::sqrt(rms[i]) + 1e-8);
    }

    if (result && (step % cfg.log_every == 0 || step == cfg.steps - 1))
      local.log.push_back({step, loss, running, best_running});
  }

  local.final_running_loss = running;
  if (result) *result = local;
  return model;
}

void save_checkpoint(const std::string& path, const Denoiser& model,
                     const NoiseSchedule& sched, double beta_start,
                     double beta_end, const std::string& config_hash) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  const DenoiserConfig& c = model.config();
  char buf[64];
  f << "diffquant-checkpoint v1\n";
  f << "tool diffquant-0.1.0\n";
  f << "config_hash " << config_hash << "\n";
  f << "data_dim " << c.data_dim << "\n";
  f << "hidden_width " << c.hidden_width << "\n";
  f << "time_feat_dim " << c.time_feat_dim << "\n";
  f << "cond_emb_dim " << c.cond_emb_dim << "\n";
  f << "num_labels " << c.num_labels << "\n";
  f << "init_seed " << c.init_seed << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", beta_start);
  f << "schedule " << sched.steps() << " " << buf;
  std::snprintf(buf, sizeof buf, "%.17g", beta_end);
  f << " " << buf << "\n";
  f << "params " << model.num_parameters() << "\n";
  for (double v : model.parameters()) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    f << buf << "\n";
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw NotFoundError("checkpoint not found: " + path);
  std::string magic, version;
  f >> magic >> version;
  if (magic != "diffquant-checkpoint" || version != "v1")
    throw std::runtime_error("load_checkpoint: unrecognized format in " + path);

  DenoiserConfig cfg;
  std::string key, hash, tool;
  int T = 0;
  double beta_start = 0, beta_end = 0;
  std::size_t n_params = 0;
  while (f >> key) {
    if (key == "tool") f >> tool;
    else if (key == "config_hash") f >> hash;
    else if (key == "data_dim") f >> cfg.data_dim;
    else if (key == "hidden_width") f >> cfg.hidden_width;
    else if (key == "time_feat_dim") f >> cfg.time_feat_dim;
    else if (key == "cond_emb_dim") f >> cfg.cond_emb_dim;
    else if (key == "num_labels") f >> cfg.num_labels;
    else if (key == "init_seed") f >> cfg.init_seed;
    else if (key == "schedule") f >> T >> beta_start >> beta_end;
    else if (key == "params") { f >> n_params; break; }
    else throw std::runtime_error("load_checkpoint: unknown key '" + key + "'");
  }

  Denoiser model(cfg);
  if (n_params != model.num_parameters())
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  std::span<double> theta = model.mutable_parameters();
  for (std::size_t i = 0; i < n_params; ++i)
    if (!(f >> theta[i]))
      throw std::runtime_error("load_checkpoint: truncated parameter block");

  return Checkpoint{std::move(model), make_schedule(T, beta_start, beta_end),
                    beta_start, beta_end, hash};
}

} // namespace diffquant
