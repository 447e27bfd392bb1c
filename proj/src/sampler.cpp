// SPDX-License-Identifier: Apache-2.0
#include "diffquant/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include "diffquant/rng.hpp"

namespace diffquant {

const Tensor& Trajectory::state_at(int t) const {
  const int T = static_cast<int>(states.size()) - 1;
  if (t < 0 || t > T)
    throw std::invalid_argument("Trajectory::state_at: t out of range");
  return states[static_cast<std::size_t>(T - t)];
}

Tensor ddpm_step(const Tensor& x_t, const Tensor& eps_pred, int t,
                 const NoiseSchedule& sched, const Tensor* z,
                 SigmaMode sigma_mode) {
  if (t < 1 || t > sched.steps())
    throw std::invalid_argument("ddpm_step: t outside [1, T]");
  if (!x_t.same_shape(eps_pred))
    throw std::invalid_argument("ddpm_step: x_t/eps_pred shape mismatch");

  const bool stochastic = sigma_mode == SigmaMode::kStandard && t > 1;
  if (stochastic && (!z || !z->same_shape(x_t)))
    throw std::invalid_argument("ddpm_step: z required in standard mode for t > 1");

  const double inv_sqrt_a = sched.inv_sqrt_alpha(t);
  const double k = sched.eps_coeff(t);
  const double sigma = stochastic ? std::sqrt(sched.beta(t)) : 0.0;

  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    out[i] = inv_sqrt_a * (x_t[i] - k * eps_pred[i]);
    if (stochastic) out[i] += sigma * (*z)[i];
  }
  return out;
}

std::vector<Trajectory> sample_with(const PredictFn& predict, int data_dim,
                                    int n, std::span<const int> labels,
                                    std::uint64_t seed,
                                    const NoiseSchedule& sched,
                                    SigmaMode sigma_mode, bool record_noises) {
  if (n < 1) throw std::invalid_argument("sample_with: n must be >= 1");
  if (data_dim < 1) throw std::invalid_argument("sample_with: bad data_dim");
  if (labels.empty()) throw std::invalid_argument("sample_with: no labels");

  const int T = sched.steps();
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(n));

  for (int i = 0; i < n; ++i) {
    Trajectory traj;
    traj.seed = Rng::mix(seed, static_cast<std::uint64_t>(i));
    traj.label = labels[static_cast<std::size_t>(i) % labels.size()];
    Rng rng(traj.seed);

    Tensor x({static_cast<std::size_t>(data_dim)});
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = rng.normal();

    traj.states.reserve(static_cast<std::size_t>(T) + 1);
    traj.states.push_back(x);
    if (record_noises)
      traj.predicted_noises.reserve(static_cast<std::size_t>(T));

    for (int t = T; t >= 1; --t) {
      Tensor eps = predict(x, t, traj.label);
      Tensor z;
      const Tensor* zp = nullptr;
      if (sigma_mode == SigmaMode::kStandard && t > 1) {
        z = Tensor(x.shape());
        rng.fill_normal(z.span());
        zp = &z;
      }
      x = ddpm_step(x, eps, t, sched, zp, sigma_mode);
      traj.states.push_back(x);
      if (record_noises) traj.predicted_noises.push_back(std::move(eps));
    }
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<Trajectory> sample(const Denoiser& model, int n,
                               std::span<const int> labels, std::uint64_t seed,
                               const NoiseSchedule& sched, SigmaMode sigma_mode,
                               bool record_noises) {
  return sample_with(
      [&model](const Tensor& x, int t, int label) {
        return model.predict(x, t, label);
      },
      model.config().data_dim, n, labels, seed, sched, sigma_mode,
      record_noises);
}

std::vector<Tensor> final_states(const std::vector<Trajectory>& trajs) {
  std::vector<Tensor> out;
  out.reserve(trajs.size());
  for (const Trajectory& t : trajs) out.push_back(t.x0());
  return out;
}

std::vector<int> trajectory_labels(const std::vector<Trajectory>& trajs) {
  std::vector<int> out;
  out.reserve(trajs.size());
  for (const Trajectory& t : trajs) out.push_back(t.label);
  return out;
}

} // namespace diffquant
