// SPDX-License-Identifier: Apache-2.0
#include "diffquant/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "diffquant/rng.hpp"

namespace diffquant {

MomentSummary MomentSummary::from_samples(std::span<const Tensor> samples) {
  if (samples.empty())
    throw std::invalid_argument("MomentSummary: empty sample set");
  const std::size_t d = samples[0].size();
  MomentSummary m;
  m.count = samples.size();
  m.mean.assign(d, 0.0);
  for (const Tensor& s : samples) {
    if (s.size() != d)
      throw std::invalid_argument("MomentSummary: inconsistent dimensions");
    for (std::size_t j = 0; j < d; ++j) m.mean[j] += s[j];
  }
  for (double& v : m.mean) v /= static_cast<double>(m.count);

  m.cov = Mat(d, d);
  for (const Tensor& s : samples)
    for (std::size_t i = 0; i < d; ++i) {
      const double di = s[i] - m.mean[i];
      for (std::size_t j = i; j < d; ++j)
        m.cov(i, j) += di * (s[j] - m.mean[j]);
    }
  const double denom = m.count > 1 ? static_cast<double>(m.count - 1)
                                   : static_cast<double>(m.count);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      m.cov(i, j) /= denom;
      m.cov(j, i) = m.cov(i, j);
    }
  return m;
}

MomentSummary moments_of(std::span<const Tensor> samples, int feature_dim) {
  if (feature_dim <= 0) return MomentSummary::from_samples(samples);
  if (samples.empty())
    throw std::invalid_argument("moments_of: empty sample set");
  const std::size_t d = samples[0].size();
  const std::size_t f = static_cast<std::size_t>(feature_dim);

  // Fixed seeded projection so scores are comparable across runs.
  Rng rng(0xfea7u);
  Mat proj(f, d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : proj.a) v = scale * rng.normal();

  std::vector<Tensor> projected;
  projected.reserve(samples.size());
  for (const Tensor& s : samples)
    projected.push_back(Tensor::from_vector(matvec(proj, s.span())));
  return MomentSummary::from_samples(projected);
}

double frechet_distance(const MomentSummary& a, const MomentSummary& b) {
  const std::size_t d = a.mean.size();
  if (b.mean.size() != d || a.cov.rows != d || b.cov.rows != d)
    throw std::invalid_argument("frechet_distance: dimension mismatch");

  double mean_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double dm = a.mean[i] - b.mean[i];
    mean_term += dm * dm;
  }

  const Mat sqrt_a = sqrt_psd(a.cov);
  const Mat inner = matmul(matmul(sqrt_a, b.cov), sqrt_a);
  const Mat cross = sqrt_psd(inner);

  return mean_term + trace(a.cov) + trace(b.cov) - 2.0 * trace(cross);
}

double condition_match_score(std::span<const Tensor> samples,
                             std::span<const int> labels,
                             std::span<const Tensor> centers) {
  if (samples.empty())
    throw std::invalid_argument("condition_match_score: empty sample set");
  if (samples.size() != labels.size())
    throw std::invalid_argument("condition_match_score: label count mismatch");

  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= centers.size())
      throw std::invalid_argument("condition_match_score: label without center");
    std::size_t nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const double dist = l2_distance(samples[i].span(), centers[c].span());
      if (dist < best) {
        best = dist;
        nearest = c;
      }
    }
    if (nearest == static_cast<std::size_t>(label)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

double bops(double flops, double weight_bits, double act_bits_avg) {
  if (!(flops > 0.0) || !(weight_bits > 0.0) || !(act_bits_avg > 0.0))
    throw std::invalid_argument("bops: inputs must be positive");
  return flops * weight_bits * act_bits_avg / 1024.0;
}

std::vector<double> per_step_deltas(const QuantizedDenoiser& qm,
                                    const Trajectory& traj) {
  const int T = static_cast<int>(traj.states.size()) - 1;
  std::vector<double> out(static_cast<std::size_t>(T), 0.0);
  for (int t = T; t >= 1; --t) {
    const Tensor& x = traj.state_at(t);
    const Tensor quant = qm.predict(x, t, traj.label);
    const Tensor fp = qm.base_predict(x, t, traj.label);
    out[static_cast<std::size_t>(t - 1)] =
        l2_distance(quant.span(), fp.span());
  }
  return out;
}

std::vector<double> taylor_coefficients(const NoiseSchedule& sched,
                                        std::span<const double> jacobian_norms) {
  const int T = sched.steps();
  if (static_cast<int>(jacobian_norms.size()) != T)
    throw std::invalid_argument("taylor_coefficients: jacobian_norms length != T");

  // prefix[k] = product over s = 1..k of amplification(s); an error alive at
  // step s is multiplied by (1/sqrt(alpha_s)) (1 + eps_coeff(s) J_s) while
  // stepping s -> s-1.
  std::vector<double> prefix(static_cast<std::size_t>(T) + 1, 1.0);
  for (int s = 1; s <= T; ++s) {
    const double amp =
        sched.inv_sqrt_alpha(s) *
        (1.0 + sched.eps_coeff(s) * jacobian_norms[static_cast<std::size_t>(s - 1)]);
    prefix[static_cast<std::size_t>(s)] =
        prefix[static_cast<std::size_t>(s - 1)] * amp;
  }

  std::vector<double> c(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t)
    c[static_cast<std::size_t>(t - 1)] = sched.inv_sqrt_alpha(t) *
                                         sched.eps_coeff(t) *
                                         prefix[static_cast<std::size_t>(t - 1)];
  return c;
}

namespace {

// Finite-difference Jacobian of the FP noise predictor at x (h = 1e-4).
Mat fd_jacobian(const QuantizedDenoiser& qm, const Tensor& x, int t,
                int label) {
  const std::size_t d = x.size();
  const double h = 1e-4;
  Mat jac(d, d);
  Tensor xp = x, xm = x;
  for (std::size_t j = 0; j < d; ++j) {
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    const Tensor fp = qm.base_predict(xp, t, label);
    const Tensor fm = qm.base_predict(xm, t, label);
    for (std::size_t i = 0; i < d; ++i)
      jac(i, j) = (fp[i] - fm[i]) / (2.0 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return jac;
}

} // namespace

ErrorBoundReport error_bound_check(const QuantizedDenoiser& qm, int label,
                              std::uint64_t seed, const NoiseSchedule& sched,
                              int jacobian_power_iterations) {
  const int T = sched.steps();

  // Shared x_T: quantized and FP runs start from the same draw.
  const std::vector<int> labels{label};
  const std::vector<Trajectory> q_traj =
      sample(qm, 1, labels, seed, sched, SigmaMode::kZero);
  const std::vector<Trajectory> fp_traj =
      sample(qm.base(), 1, labels, seed, sched, SigmaMode::kZero);

  ErrorBoundReport rep;
  rep.delta_actual = l2_distance(fp_traj[0].x0().span(), q_traj[0].x0().span());
  rep.per_step_delta_norms = per_step_deltas(qm, q_traj[0]);

  std::vector<double> jac_norms(static_cast<std::size_t>(T), 0.0);
  for (int t = 1; t <= T; ++t) {
    const Mat jac = fd_jacobian(qm, q_traj[0].state_at(t), t, label);
    jac_norms[static_cast<std::size_t>(t - 1)] =
        spectral_norm(jac, jacobian_power_iterations);
  }
  rep.coefficients = taylor_coefficients(sched, jac_norms);

  rep.linear_prediction = 0.0;
  for (int t = 1; t <= T; ++t)
    rep.linear_prediction += rep.coefficients[static_cast<std::size_t>(t - 1)] *
                             rep.per_step_delta_norms[static_cast<std::size_t>(t - 1)];

  rep.exact_propagation = std::numeric_limits<double>::quiet_NaN();
  rep.residual = rep.linear_prediction - rep.delta_actual;
  return rep;
}

Tensor LinearNoiseModel::predict(const Tensor& x, int t) const {
  const std::size_t i = static_cast<std::size_t>(t - 1);
  if (i >= A.size() || i >= b.size())
    throw std::invalid_argument("LinearNoiseModel: t out of range");
  Vec y = matvec(A[i], x.span());
  for (std::size_t j = 0; j < y.size(); ++j) y[j] += b[i][j];
  return Tensor::from_vector(std::move(y));
}

ErrorBoundReport error_bound_check_linear(const LinearNoiseModel& fp,
                                     const LinearNoiseModel& quantized,
                                     const NoiseSchedule& sched,
                                     std::uint64_t seed) {
  const int T = sched.steps();
  if (static_cast<int>(fp.A.size()) != T ||
      static_cast<int>(quantized.A.size()) != T)
    throw std::invalid_argument("error_bound_check_linear: model length != T");
  const std::size_t d = fp.A[0].cols;

  Rng rng(Rng::mix(seed, 0));
  Tensor x({d});
  rng.fill_normal(x.span());

  ErrorBoundReport rep;
  rep.per_step_delta_norms.assign(static_cast<std::size_t>(T), 0.0);

  Tensor x_fp = x, x_q = x;
  Vec err(d, 0.0); // exact signed propagation of x_t - x_hat_t
  std::vector<double> jac_norms(static_cast<std::size_t>(T), 0.0);

  for (int t = T; t >= 1; --t) {
    const double a_inv = sched.inv_sqrt_alpha(t);
    const double k = sched.eps_coeff(t);
    const std::size_t ti = static_cast<std::size_t>(t - 1);

    const Tensor eps_fp_at_q = fp.predict(x_q, t);
    const Tensor eps_q = quantized.predict(x_q, t);
    Vec delta(d);
    for (std::size_t j = 0; j < d; ++j) delta[j] = eps_q[j] - eps_fp_at_q[j];
    rep.per_step_delta_norms[ti] = l2_norm(delta);

    // err <- a_inv (I - k A_t) err + a_inv k delta
    Vec a_err = matvec(fp.A[ti], err);
    for (std::size_t j = 0; j < d; ++j)
      err[j] = a_inv * (err[j] - k * a_err[j]) + a_inv * k * delta[j];

    const Tensor eps_fp = fp.predict(x_fp, t);
    x_fp = ddpm_step(x_fp, eps_fp, t, sched, nullptr, SigmaMode::kZero);
    x_q = ddpm_step(x_q, eps_q, t, sched, nullptr, SigmaMode::kZero);

    jac_norms[ti] = spectral_norm(fp.A[ti], 30);
  }

  rep.delta_actual = l2_distance(x_fp.span(), x_q.span());
  rep.exact_propagation = l2_norm(err);
  rep.coefficients = taylor_coefficients(sched, jac_norms);
  rep.linear_prediction = 0.0;
  for (std::size_t i = 0; i < rep.coefficients.size(); ++i)
    rep.linear_prediction += rep.coefficients[i] * rep.per_step_delta_norms[i];
  rep.residual = std::abs(rep.delta_actual - rep.exact_propagation);
  return rep;
}

SplitScores eval_split(const Denoiser& model, const QuantizedDenoiser& qm,
                       std::span<const int> labels, int n_samples,
                       std::uint64_t seed, const NoiseSchedule& sched,
                       const GaussianMixture& modes, int feature_dim) {
  const std::vector<Trajectory> fp_trajs =
      sample(model, n_samples, labels, seed, sched, SigmaMode::kZero);
  const std::vector<Trajectory> q_trajs =
      sample(qm, n_samples, labels, seed, sched, SigmaMode::kZero);

  const std::vector<Tensor> fp_x0 = final_states(fp_trajs);
  const std::vector<Tensor> q_x0 = final_states(q_trajs);
  const std::vector<int> fp_labels = trajectory_labels(fp_trajs);
  const std::vector<int> q_labels = trajectory_labels(q_trajs);

  SplitScores s;
  s.frechet_to_fp = frechet_distance(moments_of(fp_x0, feature_dim),
                                     moments_of(q_x0, feature_dim));
  s.condition_score = condition_match_score(q_x0, q_labels, modes.centers());
  s.fp_condition_score =
      condition_match_score(fp_x0, fp_labels, modes.centers());
  return s;
}

MetricsReport evaluate(const Denoiser& model, const QuantizedDenoiser& qm,
                       const EvalSpec& spec, const NoiseSchedule& sched,
                       double act_bits_nominal) {
  if (spec.n_samples < 2)
    throw std::invalid_argument("evaluate: n_samples must be >= 2");
  if (spec.calib_labels.empty() || spec.holdout_labels.empty())
    throw std::invalid_argument("evaluate: both splits need labels");

  const GaussianMixture modes{spec.dataset};
  const int groups = std::max(spec.n_seed_groups, 1);

  MetricsReport rep;
  for (int g = 0; g < groups; ++g) {
    const std::uint64_t gseed = Rng::mix(spec.seed, static_cast<std::uint64_t>(g));
    const SplitScores cal =
        eval_split(model, qm, spec.calib_labels, spec.n_samples, gseed, sched,
                   modes, spec.feature_dim);
    const SplitScores hold =
        eval_split(model, qm, spec.holdout_labels, spec.n_samples,
                   Rng::mix(gseed, 0x4001), sched, modes, spec.feature_dim);
    rep.calib_split.frechet_to_fp += cal.frechet_to_fp;
    rep.calib_split.condition_score += cal.condition_score;
    rep.calib_split.fp_condition_score += cal.fp_condition_score;
    rep.holdout_split.frechet_to_fp += hold.frechet_to_fp;
    rep.holdout_split.condition_score += hold.condition_score;
    rep.holdout_split.fp_condition_score += hold.fp_condition_score;
  }
  const double inv_g = 1.0 / static_cast<double>(groups);
  for (SplitScores* s : {&rep.calib_split, &rep.holdout_split}) {
    s->frechet_to_fp *= inv_g;
    s->condition_score *= inv_g;
    s->fp_condition_score *= inv_g;
  }

  // Per-step error norms and the accumulation bound on a few trajectories.
  const int T = sched.steps();
  rep.mean_per_step_delta.assign(static_cast<std::size_t>(T), 0.0);
  const int n_delta = std::max(spec.delta_trajectories, 1);
  for (int i = 0; i < n_delta; ++i) {
    const int label = spec.calib_labels[static_cast<std::size_t>(i) %
                                        spec.calib_labels.size()];
    const ErrorBoundReport th = error_bound_check(
        qm, label, Rng::mix(spec.seed, 0x7000 + static_cast<std::uint64_t>(i)),
        sched);
    for (int t = 0; t < T; ++t)
      rep.mean_per_step_delta[static_cast<std::size_t>(t)] +=
          th.per_step_delta_norms[static_cast<std::size_t>(t)];
    rep.theorem_delta_actual += th.delta_actual;
    rep.theorem_bound += th.linear_prediction;
  }
  const double inv_d = 1.0 / static_cast<double>(n_delta);
  for (double& v : rep.mean_per_step_delta) {
    v *= inv_d;
    rep.delta_sum += v;
  }
  rep.theorem_delta_actual *= inv_d;
  rep.theorem_bound *= inv_d;

  rep.flops = model.flops_per_forward() * static_cast<double>(T) *
              static_cast<double>(spec.n_samples);
  rep.weight_bits = static_cast<double>(qm.weight_bits());
  rep.act_bits_nominal = act_bits_nominal;
  rep.act_bits_schedule = qm.table().average_bits();
  rep.bops_value = bops(rep.flops, rep.weight_bits, act_bits_nominal);
  rep.n_samples = spec.n_samples;
  rep.n_seed_groups = groups;
  return rep;
}

} // namespace diffquant
