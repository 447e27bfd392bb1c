// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "diffquant/tensor.hpp"

namespace diffquant {

/// Per-timestep diffusion constants. Timesteps are 1-based: t = 1 is
/// adjacent to the data end (x_0), t = T is the pure-noise end (x_T).
///   signal_coeff[t] = sqrt(alpha_bar[t]),  noise_coeff[t] = sqrt(1 - alpha_bar[t])
/// The forward process is x_t = signal_coeff[t] * x_0 + noise_coeff[t] * eps.
class NoiseSchedule {
public:
  NoiseSchedule(std::vector<double> beta);

  int steps() const noexcept { return static_cast<int>(beta_.size()); }

  double beta(int t) const { return beta_[idx(t)]; }
  double alpha(int t) const { return alpha_[idx(t)]; }
  double alpha_bar(int t) const { return alpha_bar_[idx(t)]; }
  double signal_coeff(int t) const { return signal_[idx(t)]; }
  double noise_coeff(int t) const { return noise_[idx(t)]; }

  /// 1 / sqrt(alpha_t): per-step error amplification of the reverse update.
  double inv_sqrt_alpha(int t) const { return inv_sqrt_alpha_[idx(t)]; }
  /// (1 - alpha_t) / sqrt(1 - alpha_bar_t): weight of the predicted noise
  /// in the reverse update.
  double eps_coeff(int t) const { return eps_coeff_[idx(t)]; }

private:
  std::size_t idx(int t) const;

  std::vector<double> beta_, alpha_, alpha_bar_, signal_, noise_;
  std::vector<double> inv_sqrt_alpha_, eps_coeff_;
};

/// Linear beta schedule inclusive of both endpoints.
/// Requires T >= 1 and 0 < beta_start <= beta_end < 1.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

/// x_t = signal_coeff[t] * x0 + noise_coeff[t] * eps.
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps,
                       const NoiseSchedule& sched);

} // namespace diffquant
