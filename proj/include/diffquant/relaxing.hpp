// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffquant/calibration.hpp"
#include "diffquant/metrics.hpp"

namespace diffquant {

enum class RelaxEnd { kNearX0, kNearXT };

const char* relax_end_name(RelaxEnd end);
RelaxEnd parse_relax_end(const std::string& name);

/// Time-wise bit relaxation: raise m = round(tau * T) steps at the chosen
/// end of the trajectory from base_bits to high_bits. t = 1 is adjacent to
/// x_0, so "near x_0" means the smallest timesteps.
struct RelaxationPolicy {
  double tau = 0.0; // in [0, 1]
  RelaxEnd end = RelaxEnd::kNearX0;
  int base_bits = 8;
  int high_bits = 10;

  int m(int T) const; // round(tau * T), half away from zero
};

/// Rewrites exactly m schedule entries to high_bits at the policy's end;
/// previously calibrated entries at changed timesteps are invalidated.
/// The table's schedule must currently be uniform at base_bits.
void apply_relaxation(ActQuantTable& table, const RelaxationPolicy& policy);

/// Exact mean of the integer bit schedule a policy produces at length T.
double average_bits(const RelaxationPolicy& policy, int T);
/// Exact mean of an existing schedule.
double average_bits(const ActQuantTable& table);
/// Proportion-exact average (1 - tau) * base + tau * high, used for
/// BOPs reporting.
double nominal_average(const RelaxationPolicy& policy);

struct ProbeSpec {
  std::vector<int> conditions{0, 1, 2, 3};
  int samples_per_group = 256;
  std::uint64_t seed = 23;
  MixtureConfig dataset;
};

struct ProbeResult {
  double fidelity_frechet = 0.0;     // Frechet distance to unperturbed samples
  double condition_score = 0.0;      // of the perturbed samples
  double baseline_condition = 0.0;   // of the unperturbed samples
  double noise_std = 0.0;
  int seed_groups = 0;
};

/// Runs FP sampling with i.i.d. Gaussian perturbations of std `noise_std`
/// added to the predicted noise at every step in [a, b]; compares against
/// unperturbed sampling under shared seeds, averaged over n_seeds groups.
ProbeResult sensitivity_probe(const Denoiser& model, int a, int b,
                              double noise_std, const ProbeSpec& spec,
                              const NoiseSchedule& sched, int n_seeds);

/// Default probe perturbation: 0.1 x the RMS (per coordinate) of the
/// predicted noise over the probed interval on a small unperturbed run.
double default_probe_std(const Denoiser& model, int a, int b,
                         const ProbeSpec& spec, const NoiseSchedule& sched);

struct SweepRow {
  double tau = 0.0;
  RelaxEnd end = RelaxEnd::kNearX0;
  double avg_bits = 0.0;
  double nominal_avg_bits = 0.0;
  double bops_value = 0.0;
  double frechet_to_fp = 0.0;
  double condition_score = 0.0;
  int seeds = 0;
};

/// For each tau (ascending): apply relaxation to a fresh schedule, run a
/// full progressive recalibration and a matched-seed evaluation; seed groups
/// vary both the calibration and evaluation streams.
std::vector<SweepRow> relaxation_sweep(const QuantizedDenoiser& weight_quantized,
                                       const std::vector<double>& taus,
                                       RelaxEnd end, int base_bits,
                                       int high_bits,
                                       const CalibrationSpec& calib_spec,
                                       const EvalSpec& eval_spec,
                                       const NoiseSchedule& sched);

std::string format_sweep_rows(const std::vector<SweepRow>& rows);

} // namespace diffquant
