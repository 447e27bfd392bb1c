// SPDX-License-Identifier: Apache-2.0
#include "diffquant/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace diffquant {

NoiseSchedule::NoiseSchedule(std::vector<double> beta) : beta_(std::move(beta)) {
  if (beta_.empty())
    throw std::invalid_argument("NoiseSchedule: needs at least one step");
  const std::size_t T = beta_.size();
  alpha_.resize(T);
  alpha_bar_.resize(T);
  signal_.resize(T);
  noise_.resize(T);
  inv_sqrt_alpha_.resize(T);
  eps_coeff_.resize(T);

  double acc = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    const double b = beta_[i];
    if (!(b > 0.0 && b < 1.0))
      throw std::invalid_argument("NoiseSchedule: beta must lie in (0, 1)");
    alpha_[i] = 1.0 - b;
    acc *= alpha_[i];
    alpha_bar_[i] = acc;
    signal_[i] = std::sqrt(acc);
    noise_[i] = std::sqrt(1.0 - acc);
    inv_sqrt_alpha_[i] = 1.0 / std::sqrt(alpha_[i]);
    eps_coeff_[i] = b / noise_[i];
  }

  // alpha_bar strictly decreasing and SNR strictly decreasing in t.
  for (std::size_t i = 1; i < T; ++i) {
    if (!(alpha_bar_[i] < alpha_bar_[i - 1]))
      throw std::invalid_argument("NoiseSchedule: alpha_bar must strictly decrease");
    if (!(signal_[i] / noise_[i] < signal_[i - 1] / noise_[i - 1]))
      throw std::invalid_argument("NoiseSchedule: SNR must strictly decrease");
  }
}

std::size_t NoiseSchedule::idx(int t) const {
  if (t < 1 || t > steps())
    throw std::invalid_argument("NoiseSchedule: timestep " + std::to_string(t) +
                                " outside [1, " + std::to_string(steps()) + "]");
  return static_cast<std::size_t>(t - 1);
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw std::invalid_argument(
        "make_schedule: need 0 < beta_start <= beta_end < 1");
  std::vector<double> beta(static_cast<std::size_t>(T));
  if (T == 1) {
    beta[0] = beta_start;
  } else {
    for (int i = 0; i < T; ++i)
      beta[static_cast<std::size_t>(i)] =
          beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                           static_cast<double>(T - 1);
  }
  return NoiseSchedule(std::move(beta));
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps,
                       const NoiseSchedule& sched) {
  if (!x0.same_shape(eps))
    throw std::invalid_argument("forward_diffuse: x0/eps shape mismatch");
  const double sc = sched.signal_coeff(t);
  const double nc = sched.noise_coeff(t);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i)
    out[i] = sc * x0[i] + nc * eps[i];
  return out;
}

} // namespace diffquant
