// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "diffquant/dataset.hpp"
#include "diffquant/linalg.hpp"
#include "diffquant/quantized_denoiser.hpp"
#include "diffquant/sampler.hpp"

namespace diffquant {

/// Mean and covariance of a sample set (unbiased covariance for n >= 2).
struct MomentSummary {
  Vec mean;
  Mat cov;
  std::size_t count = 0;

  static MomentSummary from_samples(std::span<const Tensor> samples);
};

/// Gaussian moments of a sample set, optionally through a fixed seeded
/// random projection to `feature_dim` dimensions (0 keeps raw coordinates).
MomentSummary moments_of(std::span<const Tensor> samples, int feature_dim = 0);

/// Squared Frechet (Wasserstein-2) distance between two Gaussians:
///   |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}).
/// The matrix square root goes through the symmetric product
/// Sa^{1/2} Sb Sa^{1/2} with eigenvalues clipped at zero.
double frechet_distance(const MomentSummary& a, const MomentSummary& b);

/// Fraction of samples whose nearest mode center matches their own label.
double condition_match_score(std::span<const Tensor> samples,
                             std::span<const int> labels,
                             std::span<const Tensor> centers);

/// Bit-operations normalized so the FP32 model's BOPs equals its FLOPs:
///   flops * weight_bits * act_bits / (32 * 32).
double bops(double flops, double weight_bits, double act_bits_avg);

/// L2 norms of the per-step quantization error
///   Delta_t = eps_quantized(x_t, t) - eps_fp_net(x_t, t)
/// evaluated on the quantized trajectory's own states. Index t-1 holds
/// |Delta_t|. The trajectory must come from `qm` with sigma = 0.
std::vector<double> per_step_deltas(const QuantizedDenoiser& qm,
                                    const Trajectory& traj);

/// Coefficients c_t of the error-accumulation bound
///   |x_0 - x_hat_0| <= sum_t c_t |Delta_t|,
/// from the first-order recursion of the reverse process: an error injected
/// at step t enters with weight (1/sqrt(alpha_t)) * eps_coeff(t) and is
/// amplified by (1/sqrt(alpha_s)) * (1 + eps_coeff(s) * J_s) at every later
/// step s < t, where J_s estimates the noise-predictor Jacobian norm.
std::vector<double> taylor_coefficients(const NoiseSchedule& sched,
                                        std::span<const double> jacobian_norms);

struct ErrorBoundReport {
  double delta_actual = 0.0;                // |x_0 - x_hat_0|
  std::vector<double> per_step_delta_norms; // |Delta_t| at index t-1
  std::vector<double> coefficients;         // c_t at index t-1
  double linear_prediction = 0.0;           // sum c_t |Delta_t|
  // Exact signed first-order propagation; exact for linear predictors,
  // NaN when not computed.
  double exact_propagation = 0.0;
  // Linear models: |delta_actual - exact_propagation|.
  // General models: linear_prediction - delta_actual (bound slack).
  double residual = 0.0;
};

/// Error-accumulation check on the wrapped toy model: one quantized and one
/// full-precision trajectory from the same x_T seed (sigma = 0), measured
/// per-step deltas, finite-difference Jacobian norms (h = 1e-4, power
/// iteration) and the resulting bound.
ErrorBoundReport error_bound_check(const QuantizedDenoiser& qm, int label,
                              std::uint64_t seed, const NoiseSchedule& sched,
                              int jacobian_power_iterations = 5);

/// Time-dependent affine noise predictor eps(x, t) = A[t-1] x + b[t-1];
/// the Taylor expansion of the bound is exact for these.
struct LinearNoiseModel {
  std::vector<Mat> A;
  std::vector<Vec> b;

  Tensor predict(const Tensor& x, int t) const;
};

/// Bound check for a linear predictor pair (full-precision vs perturbed):
/// exact_propagation reproduces delta_actual up to rounding.
ErrorBoundReport error_bound_check_linear(const LinearNoiseModel& fp,
                                     const LinearNoiseModel& quantized,
                                     const NoiseSchedule& sched,
                                     std::uint64_t seed);

struct SplitScores {
  double frechet_to_fp = 0.0;
  double condition_score = 0.0;    // quantized model
  double fp_condition_score = 0.0; // full-precision reference
};

/// Matched-seed FP-vs-quantized comparison on one condition list.
SplitScores eval_split(const Denoiser& model, const QuantizedDenoiser& qm,
                       std::span<const int> labels, int n_samples,
                       std::uint64_t seed, const NoiseSchedule& sched,
                       const GaussianMixture& modes, int feature_dim = 0);

struct EvalSpec {
  int n_samples = 2048;
  int n_seed_groups = 1;
  std::uint64_t seed = 17;
  std::vector<int> calib_labels{0, 1};
  std::vector<int> holdout_labels{2, 3};
  MixtureConfig dataset;
  int feature_dim = 0;       // 0 = raw 2-D coordinates
  int delta_trajectories = 8; // trajectories for per-step delta stats
};

struct MetricsReport {
  SplitScores calib_split;
  SplitScores holdout_split;
  double flops = 0.0; // per generated sample set (forward MACs * T * n)
  double weight_bits = 32.0;
  double act_bits_nominal = 32.0; // proportion-exact schedule average
  double act_bits_schedule = 32.0; // exact mean of the integer schedule
  double bops_value = 0.0;
  std::vector<double> mean_per_step_delta; // |Delta_t| averaged over trajs
  double delta_sum = 0.0;                  // sum over t of the mean norms
  double theorem_delta_actual = 0.0;       // mean over delta trajectories
  double theorem_bound = 0.0;              // mean linear_prediction
  int n_samples = 0;
  int n_seed_groups = 0;
};

/// Full evaluation: matched-seed Frechet-to-FP and condition scores on the
/// calibration-label split and a held-out-label split, BOPs, and per-step
/// error statistics with the error-accumulation bound.
MetricsReport evaluate(const Denoiser& model, const QuantizedDenoiser& qm,
                       const EvalSpec& spec, const NoiseSchedule& sched,
                       double act_bits_nominal);

} // namespace diffquant
