// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "diffquant/denoiser.hpp"
#include "diffquant/schedule.hpp"
#include "diffquant/tensor.hpp"

namespace diffquant {

enum class SigmaMode { kZero, kStandard };

/// One reverse-process run. states[0] = x_T (drawn from N(0, I) under the
/// trajectory seed), states[T] = x_0; predicted_noises[i] is the prediction
/// at t = T - i.
struct Trajectory {
  std::uint64_t seed = 0;
  int label = 0;
  std::vector<Tensor> states;
  std::vector<Tensor> predicted_noises;

  const Tensor& x0() const { return states.back(); }
  const Tensor& state_at(int t) const; // x_t, t in [0, T]
};

/// DDPM reverse update
///   x_{t-1} = (x_t - eps_coeff(t) * eps_pred) / sqrt(alpha_t) + sigma_t * z
/// with sigma_t = 0 in deterministic mode and sigma_t^2 = beta_t otherwise.
/// z is required iff sigma_mode == kStandard and t > 1.
Tensor ddpm_step(const Tensor& x_t, const Tensor& eps_pred, int t,
                 const NoiseSchedule& sched, const Tensor* z,
                 SigmaMode sigma_mode);

/// Noise prediction used for one sampler step.
using PredictFn = std::function<Tensor(const Tensor& x, int t, int label)>;

/// Runs n reverse trajectories. The i-th trajectory draws all of its
/// randomness from a stream seeded by mix(seed, i), so results do not depend
/// on batch order. labels[i % labels.size()] conditions trajectory i.
std::vector<Trajectory> sample_with(const PredictFn& predict, int data_dim,
                                    int n, std::span<const int> labels,
                                    std::uint64_t seed,
                                    const NoiseSchedule& sched,
                                    SigmaMode sigma_mode,
                                    bool record_noises = false);

std::vector<Trajectory> sample(const Denoiser& model, int n,
                               std::span<const int> labels, std::uint64_t seed,
                               const NoiseSchedule& sched, SigmaMode sigma_mode,
                               bool record_noises = false);

/// x_0 points of a trajectory batch.
std::vector<Tensor> final_states(const std::vector<Trajectory>& trajs);
std::vector<int> trajectory_labels(const std::vector<Trajectory>& trajs);

} // namespace diffquant
