// SPDX-License-Identifier: Apache-2.0
#include "diffquant/relaxing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "diffquant/rng.hpp"

namespace diffquant {

const char* relax_end_name(RelaxEnd end) {
  return end == RelaxEnd::kNearX0 ? "near_x0" : "near_xT";
}

RelaxEnd parse_relax_end(const std::string& name) {
  if (name == "near_x0") return RelaxEnd::kNearX0;
  if (name == "near_xT") return RelaxEnd::kNearXT;
  throw std::invalid_argument("unknown relaxation end '" + name + "'");
}

int RelaxationPolicy::m(int T) const {
  if (tau < 0.0 || tau > 1.0)
    throw std::invalid_argument("RelaxationPolicy: tau must lie in [0, 1]");
  return static_cast<int>(std::round(tau * static_cast<double>(T)));
}

void apply_relaxation(ActQuantTable& table, const RelaxationPolicy& policy) {
  if (policy.high_bits <= policy.base_bits)
    throw std::invalid_argument("apply_relaxation: high_bits must exceed base_bits");
  const int T = table.steps();
  for (int t = 1; t <= T; ++t)
    if (table.bits_at(t) != policy.base_bits)
      throw std::invalid_argument(
          "apply_relaxation: schedule is not uniform at base_bits");

  const int m = policy.m(T);
  if (m > T) throw std::invalid_argument("apply_relaxation: m exceeds T");
  if (policy.end == RelaxEnd::kNearX0) {
    for (int t = 1; t <= m; ++t) table.set_timestep_bits(t, policy.high_bits);
  } else {
    for (int t = T - m + 1; t <= T; ++t)
      table.set_timestep_bits(t, policy.high_bits);
  }
}

double average_bits(const RelaxationPolicy& policy, int T) {
  const int m = policy.m(T);
  return (static_cast<double>(T - m) * policy.base_bits +
          static_cast<double>(m) * policy.high_bits) /
         static_cast<double>(T);
}

double average_bits(const ActQuantTable& table) { return table.average_bits(); }

double nominal_average(const RelaxationPolicy& policy) {
  return (1.0 - policy.tau) * static_cast<double>(policy.base_bits) +
         policy.tau * static_cast<double>(policy.high_bits);
}

namespace {

void check_interval(int a, int b, int T) {
  if (a < 1 || b < a || b > T)
    throw std::invalid_argument("probe interval must satisfy 1 <= a <= b <= T");
}

} // namespace

double default_probe_std(const Denoiser& model, int a, int b,
                         const ProbeSpec& spec, const NoiseSchedule& sched) {
  check_interval(a, b, sched.steps());
  const int n = std::min(32, spec.samples_per_group);
  const std::vector<Trajectory> trajs =
      sample(model, n, spec.conditions, Rng::mix(spec.seed, 0xadd5),
             sched, SigmaMode::kZero, /*record_noises=*/true);
  double acc = 0.0;
  std::size_t count = 0;
  const int T = sched.steps();
  for (const Trajectory& traj : trajs)
    for (int t = a; t <= b; ++t) {
      const Tensor& eps = traj.predicted_noises[static_cast<std::size_t>(T - t)];
      for (double v : eps.span()) {
        acc += v * v;
        ++count;
      }
    }
  return 0.1 * std::sqrt(acc / static_cast<double>(count));
}

ProbeResult sensitivity_probe(const Denoiser& model, int a, int b,
                              double noise_std, const ProbeSpec& spec,
                              const NoiseSchedule& sched, int n_seeds) {
  check_interval(a, b, sched.steps());
  if (noise_std < 0.0)
    throw std::invalid_argument("sensitivity_probe: noise_std must be >= 0");
  if (n_seeds < 1)
    throw std::invalid_argument("sensitivity_probe: n_seeds must be >= 1");

  const GaussianMixture modes{spec.dataset};
  ProbeResult out;
  out.noise_std = noise_std;
  out.seed_groups = n_seeds;

  for (int g = 0; g < n_seeds; ++g) {
    const std::uint64_t gseed = Rng::mix(spec.seed, static_cast<std::uint64_t>(g));

    const std::vector<Trajectory> clean =
        sample(model, spec.samples_per_group, spec.conditions, gseed, sched,
               SigmaMode::kZero);

    // The perturbation stream is independent of the trajectory streams, so
    // clean and perturbed runs share every x_T draw.
    Rng perturb_rng(Rng::mix(gseed, 0x9e17));
    const auto perturbed_predict = [&](const Tensor& x, int t, int label) {
      Tensor eps = model.predict(x, t, label);
      if (t >= a && t <= b)
        for (double& v : eps.values()) v += noise_std * perturb_rng.normal();
      return eps;
    };
    const std::vector<Trajectory> noisy =
        sample_with(perturbed_predict, model.config().data_dim,
                    spec.samples_per_group, spec.conditions, gseed, sched,
                    SigmaMode::kZero);

    const std::vector<Tensor> clean_x0 = final_states(clean);
    const std::vector<Tensor> noisy_x0 = final_states(noisy);
    out.fidelity_frechet += frechet_distance(
        MomentSummary::from_samples(clean_x0),
        MomentSummary::from_samples(noisy_x0));
    out.condition_score += condition_match_score(
        noisy_x0, trajectory_labels(noisy), modes.centers());
    out.baseline_condition += condition_match_score(
        clean_x0, trajectory_labels(clean), modes.centers());
  }

  const double inv = 1.0 / static_cast<double>(n_seeds);
  out.fidelity_frechet *= inv;
  out.condition_score *= inv;
  out.baseline_condition *= inv;
  return out;
}

std::vector<SweepRow> relaxation_sweep(const QuantizedDenoiser& weight_quantized,
                                       const std::vector<double>& taus,
                                       RelaxEnd end, int base_bits,
                                       int high_bits,
                                       const CalibrationSpec& calib_spec,
                                       const EvalSpec& eval_spec,
                                       const NoiseSchedule& sched) {
  if (!std::is_sorted(taus.begin(), taus.end()))
    throw std::invalid_argument("relaxation_sweep: taus must be ascending");

  const GaussianMixture modes{eval_spec.dataset};
  const int groups = std::max(eval_spec.n_seed_groups, 1);
  std::vector<SweepRow> rows;
  rows.reserve(taus.size());

  for (double tau : taus) {
    RelaxationPolicy policy;
    policy.tau = tau;
    policy.end = end;
    policy.base_bits = base_bits;
    policy.high_bits = high_bits;

    SweepRow row;
    row.tau = tau;
    row.end = end;
    row.nominal_avg_bits = nominal_average(policy);
    row.seeds = groups;

    for (int g = 0; g < groups; ++g) {
      QuantizedDenoiser qm = weight_quantized;
      ActQuantTable schedule_table(sched.steps(), base_bits);
      apply_relaxation(schedule_table, policy);
      qm.set_table(std::move(schedule_table));

      CalibrationSpec cs = calib_spec;
      cs.seed = Rng::mix(calib_spec.seed, static_cast<std::uint64_t>(g));
      qm.set_table(progressive_calibrate(qm, cs, sched));

      const SplitScores s = eval_split(
          qm.base(), qm, eval_spec.calib_labels, eval_spec.n_samples,
          Rng::mix(eval_spec.seed, static_cast<std::uint64_t>(g)), sched,
          modes, eval_spec.feature_dim);
      row.frechet_to_fp += s.frechet_to_fp;
      row.condition_score += s.condition_score;
      row.avg_bits += qm.table().average_bits();
    }
    const double inv = 1.0 / static_cast<double>(groups);
    row.frechet_to_fp *= inv;
    row.condition_score *= inv;
    row.avg_bits *= inv;

    const double flops = weight_quantized.base().flops_per_forward() *
                         static_cast<double>(sched.steps()) *
                         static_cast<double>(eval_spec.n_samples);
    row.bops_value = bops(flops, weight_quantized.weights_passthrough()
                                     ? 32.0
                                     : weight_quantized.weight_bits(),
                          row.nominal_avg_bits);
    rows.push_back(row);
  }
  return rows;
}

std::string format_sweep_rows(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "tau\tend\tavg_bits\tnominal_avg_bits\tbops\tfrechet_to_fp\t"
        "condition_score\tseeds\n";
  char buf[64];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.12g", r.tau);
    os << buf << "\t" << relax_end_name(r.end);
    std::snprintf(buf, sizeof buf, "%.12g", r.avg_bits);
    os << "\t" << buf;
    std::snprintf(buf, sizeof buf, "%.12g", r.nominal_avg_bits);
    os << "\t" << buf;
    std::snprintf(buf, sizeof buf, "%.12g", r.bops_value);
    os << "\t" << buf;
    std::snprintf(buf, sizeof buf, "%.12g", r.frechet_to_fp);
    os << "\t" << buf;
    std::snprintf(buf, sizeof buf, "%.12g", r.condition_score);
    os << "\t" << buf << "\t" << r.seeds << "\n";
  }
  return os.str();
}

} // namespace diffquant
