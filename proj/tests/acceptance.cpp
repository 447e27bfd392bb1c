// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one line per criterion, nonzero exit code on failure.
// Usage: acceptance [--skip N ...] [--only N ...]
//
// Criterion 7 (sensitivity discrepancy) is registered as its own ctest entry
// because its condition-score half does not materialize in this substrate;
// see the README's "Known limitations".

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "diffquant/calibration.hpp"
#include "diffquant/config.hpp"
#include "diffquant/harness.hpp"
#include "diffquant/metrics.hpp"
#include "diffquant/relaxing.hpp"
#include "test_support.hpp"

using namespace diffquant;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// Shared full-scale fixture: the default experiment substrate.

struct Fixture {
  MixtureConfig mix;
  GaussianMixture data;
  NoiseSchedule sched;
  Denoiser model;
  std::vector<int> calib_conditions; // 2048 trajectories at 4 per condition
  LayerInputPool pool;
};

const Fixture& fixture() {
  static const Fixture fx = [] {
    MixtureConfig mix; // K = 4, radius 4, std 0.3
    GaussianMixture data(mix);
    NoiseSchedule sched = make_schedule(50, 0.002, 0.25);
    Denoiser model =
        train_denoiser(data, sched, DenoiserConfig{}, TrainConfig{}, nullptr);
    std::vector<int> conditions;
    for (int i = 0; i < 512; ++i) conditions.push_back(i % 2);
    LayerInputPool pool =
        collect_fp_layer_inputs(model, conditions, 4, 11, sched);
    return Fixture{mix, std::move(data), std::move(sched), std::move(model),
                   std::move(conditions), std::move(pool)};
  }();
  return fx;
}

CalibrationSpec fixture_spec(int wbits, int abits, std::uint64_t seed) {
  const Fixture& fx = fixture();
  CalibrationSpec spec;
  spec.conditions = fx.calib_conditions;
  spec.samples_per_condition = 4;
  spec.seed = seed;
  spec.weight_bits = wbits;
  spec.act_bits = abits;
  return spec;
}

QuantizedDenoiser calibrated_model(int wbits, int abits, std::uint64_t seed,
                                   bool progressive) {
  const Fixture& fx = fixture();
  QuantizedDenoiser qm = quantize_weights(fx.model, wbits, fx.pool);
  qm.set_table(ActQuantTable(fx.sched.steps(), abits));
  const CalibrationSpec spec = fixture_spec(wbits, abits, seed);
  qm.set_table(progressive ? progressive_calibrate(qm, spec, fx.sched)
                           : fp_trajectory_calibrate(qm, spec, fx.sched));
  return qm;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Criteria

Outcome criterion_bops() {
  struct Anchor {
    double flops, wb, ab, expect;
  };
  const Anchor anchors[] = {{693, 32, 32, 693.0}, {693, 8, 8, 43.31},
                            {693, 8, 8.1, 43.85}, {693, 8, 8.4, 45.47},
                            {693, 4, 8, 21.66},   {693, 4, 8.1, 21.93},
                            {693, 4, 8.4, 22.74}};
  for (const Anchor& a : anchors) {
    const double got = bops(a.flops, a.wb, a.ab);
    if (std::abs(got - a.expect) > 0.01)
      return {false, "bops(" + fmt(a.flops) + "," + fmt(a.wb) + "," + fmt(a.ab) +
                         ") = " + fmt(got) + ", want " + fmt(a.expect) + " +-0.01"};
  }
  return {true, "7 anchors within +-0.01"};
}

Outcome criterion_average_bits() {
  RelaxationPolicy policy;
  policy.tau = 0.05;
  policy.base_bits = 8;
  policy.high_bits = 10;
  const double nominal = nominal_average(policy);
  if (nominal != 8.1)
    return {false, "nominal_average = " + fmt(nominal) + ", want exactly 8.1"};
  return {true, "nominal_average(tau=0.05, 8->10) == 8.1"};
}

Outcome criterion_theorem_linear() {
  // T = 1 coefficient at alpha = alpha_bar = 0.8 must equal 0.5 to 12 digits.
  {
    const NoiseSchedule one = make_schedule(1, 0.2, 0.2);
    const auto c = taylor_coefficients(one, std::vector<double>{0.0});
    if (std::abs(c[0] - 0.5) > 0.5e-12)
      return {false, "T=1 coefficient " + fmt(c[0]) + " != 0.5 to 12 digits"};
  }
  for (int T : {1, 2, 10}) {
    const NoiseSchedule sched = make_schedule(T, 0.02, 0.3);
    Rng rng(40 + static_cast<std::uint64_t>(T));
    LinearNoiseModel fp, q;
    for (int t = 0; t < T; ++t) {
      Mat a(2, 2);
      for (double& v : a.a) v = 0.35 * rng.normal();
      Vec b(2);
      for (double& v : b) v = 0.5 * rng.normal();
      Mat ah = a;
      Vec bh = b;
      for (double& v : ah.a) v += 0.01 * rng.normal();
      for (double& v : bh) v += 0.01 * rng.normal();
      fp.A.push_back(a);
      fp.b.push_back(b);
      q.A.push_back(ah);
      q.b.push_back(bh);
    }
    const ErrorBoundReport rep = error_bound_check_linear(fp, q, sched, 77);
    if (!(rep.delta_actual > 0.0))
      return {false, "degenerate linear case at T=" + std::to_string(T)};
    const double rel = rep.residual / rep.delta_actual;
    if (!(rel < 1e-8))
      return {false, "T=" + std::to_string(T) + " relative residual " + fmt(rel)};
  }
  return {true, "exact propagation at T in {1,2,10}; T=1 coefficient to 12 digits"};
}

Outcome criterion_theorem_bound() {
  const Fixture& fx = fixture();
  const QuantizedDenoiser qm = calibrated_model(8, 8, 11, /*progressive=*/true);
  double mean_actual = 0.0, mean_bound = 0.0;
  for (int i = 0; i < 10; ++i) {
    const ErrorBoundReport rep =
        error_bound_check(qm, i % 2, Rng::mix(555, static_cast<std::uint64_t>(i)),
                       fx.sched);
    mean_actual += rep.delta_actual;
    mean_bound += rep.linear_prediction;
  }
  mean_actual /= 10;
  mean_bound /= 10;
  const bool pass = mean_actual <= 1.25 * mean_bound;
  return {pass, "mean delta_actual " + fmt(mean_actual) + " vs 1.25 * bound " +
                    fmt(1.25 * mean_bound) + " (10 seeds)"};
}

Outcome criterion_progressive_vs_baseline() {
  const Fixture& fx = fixture();
  const std::vector<int> labels{0, 1};
  double fd_prog = 0, fd_base = 0, d_prog = 0, d_base = 0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t cseed = Rng::mix(411, static_cast<std::uint64_t>(s));
    const QuantizedDenoiser prog = calibrated_model(4, 4, cseed, true);
    const QuantizedDenoiser base = calibrated_model(4, 4, cseed, false);

    const std::uint64_t eseed = Rng::mix(517, static_cast<std::uint64_t>(s));
    const SplitScores sp =
        eval_split(fx.model, prog, labels, 512, eseed, fx.sched, fx.data);
    const SplitScores sb =
        eval_split(fx.model, base, labels, 512, eseed, fx.sched, fx.data);
    fd_prog += sp.frechet_to_fp;
    fd_base += sb.frechet_to_fp;

    for (int i = 0; i < 16; ++i) {
      const std::uint64_t tseed = Rng::mix(1000 + s, static_cast<std::uint64_t>(i));
      const auto tp = sample_with(
          [&prog](const Tensor& x, int t, int l) { return prog.predict(x, t, l); },
          2, 1, labels, tseed, fx.sched, SigmaMode::kZero);
      const auto tb = sample_with(
          [&base](const Tensor& x, int t, int l) { return base.predict(x, t, l); },
          2, 1, labels, tseed, fx.sched, SigmaMode::kZero);
      for (double v : per_step_deltas(prog, tp[0])) d_prog += v;
      for (double v : per_step_deltas(base, tb[0])) d_base += v;
    }
  }
  fd_prog /= seeds;
  fd_base /= seeds;
  d_prog /= seeds * 16;
  d_base /= seeds * 16;
  const bool pass = fd_prog <= fd_base && d_prog < d_base;
  return {pass, "W4A4: frechet " + fmt(fd_prog) + " (prog) vs " + fmt(fd_base) +
                    " (baseline); sum|Delta| " + fmt(d_prog) + " vs " +
                    fmt(d_base) + " (5 seeds)"};
}

Outcome criterion_relaxation() {
  const Fixture& fx = fixture();
  QuantizedDenoiser qw = quantize_weights(fx.model, 4, fx.pool);
  CalibrationSpec cs = fixture_spec(4, 4, 11);
  EvalSpec es;
  es.n_samples = 512;
  es.n_seed_groups = 5;
  es.seed = 17;
  es.dataset = fx.mix;
  const auto rows = relaxation_sweep(qw, {0.0, 0.05, 0.20}, RelaxEnd::kNearXT,
                                     4, 8, cs, es, fx.sched);
  const double f0 = rows[0].frechet_to_fp;
  const double f1 = rows[1].frechet_to_fp;
  const double f2 = rows[2].frechet_to_fp;
  const bool monotone = f2 <= f1 && f1 <= f0;
  const bool diminishing = (f0 - f1) >= (f0 - f2) / 3.0;
  return {monotone && diminishing,
          "W4 A4->8 near_xT: FD " + fmt(f0) + " / " + fmt(f1) + " / " + fmt(f2) +
              "; early gain " + fmt(f0 - f1) + " vs required " +
              fmt((f0 - f2) / 3.0) + " (5 seeds)"};
}

Outcome criterion_sensitivity() {
  const Fixture& fx = fixture();
  const int T = fx.sched.steps();
  const int m = T / 10; // 10% of steps
  ProbeSpec spec;
  spec.dataset = fx.mix;
  spec.samples_per_group = 512;
  spec.seed = 23;
  const double std_used = default_probe_std(fx.model, 1, T, spec, fx.sched);

  const ProbeResult near_x0 =
      sensitivity_probe(fx.model, 1, m, std_used, spec, fx.sched, 10);
  const ProbeResult near_xt =
      sensitivity_probe(fx.model, T - m + 1, T, std_used, spec, fx.sched, 10);

  const double cond_deg_x0 = near_x0.baseline_condition - near_x0.condition_score;
  const double cond_deg_xt = near_xt.baseline_condition - near_xt.condition_score;
  const bool cond_half = cond_deg_xt > cond_deg_x0;
  const bool frechet_half = near_x0.fidelity_frechet > near_xt.fidelity_frechet;
  return {cond_half && frechet_half,
          "std " + fmt(std_used) + ": cond degradation near_xT " + fmt(cond_deg_xt) +
              " vs near_x0 " + fmt(cond_deg_x0) + " (need >), frechet near_x0 " +
              fmt(near_x0.fidelity_frechet) + " vs near_xT " +
              fmt(near_xt.fidelity_frechet) + " (need >; 10 seed groups)"};
}

Outcome criterion_quantizer_properties() {
  const auto fails = testsupport::quantizer_property_suite(1000, 20260808);
  const bool pass = fails.total() == 0;
  std::ostringstream os;
  os << "1000 cases each: idempotence " << fails.idempotence << ", bounded "
     << fails.bounded_error << ", monotone " << fails.monotonicity
     << ", mse<=minmax " << fails.mse_dominance << ", bit-monotone "
     << fails.bit_monotone << " failures";
  return {pass, os.str()};
}

Outcome criterion_frechet_suite() {
  auto gauss = [](Vec mean, double a, double b) {
    MomentSummary m;
    m.mean = std::move(mean);
    m.cov = Mat(2, 2);
    m.cov(0, 0) = a;
    m.cov(1, 1) = b;
    m.count = 1000;
    return m;
  };
  const MomentSummary i2 = gauss({0, 0}, 1, 1);
  if (std::abs(frechet_distance(i2, i2)) > 1e-9)
    return {false, "nonzero self-distance"};
  const double mean_shift = frechet_distance(gauss({1, 0}, 1, 1), i2);
  if (std::abs(mean_shift - 1.0) > 1e-9)
    return {false, "mean-shift case " + fmt(mean_shift) + " != 1"};
  const double commuting = frechet_distance(gauss({0, 0}, 4, 4), i2);
  if (std::abs(commuting - 2.0) > 1e-9)
    return {false, "4I vs I case " + fmt(commuting) + " != 2"};

  Rng rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    Mat g(3, 3);
    for (double& v : g.a) v = rng.normal();
    Mat psd_a(3, 3), psd_b(3, 3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double sa = 0, sb = 0;
        for (std::size_t k = 0; k < 3; ++k) {
          sa += g(i, k) * g(j, k);
          sb += g(k, i) * g(k, j);
        }
        psd_a(i, j) = sa + (i == j ? 0.05 : 0.0);
        psd_b(i, j) = sb + (i == j ? 0.05 : 0.0);
      }
    MomentSummary a, b;
    a.mean = {rng.normal(), rng.normal(), rng.normal()};
    b.mean = {rng.normal(), rng.normal(), rng.normal()};
    a.cov = psd_a;
    b.cov = psd_b;
    a.count = b.count = 100;
    if (std::abs(frechet_distance(a, b) - frechet_distance(b, a)) > 1e-9)
      return {false, "asymmetry beyond 1e-9"};
  }
  return {true, "zero, mean-shift, commuting 4I-vs-I and symmetry checks"};
}

Outcome criterion_determinism() {
  // Pipeline byte-reproducibility on a small but complete configuration.
  ExperimentConfig cfg;
  cfg.T = 8;
  cfg.beta_start = 0.01;
  cfg.beta_end = 0.3;
  cfg.model.hidden_width = 24;
  cfg.training.steps = 250;
  cfg.training.batch_size = 32;
  cfg.calib_conditions = 16;
  cfg.samples_per_condition = 2;
  cfg.eval_samples = 96;
  cfg.eval_seed_groups = 1;

  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "dq_acceptance_det";
  fs::remove_all(base);
  const std::string dirs[2] = {(base / "a").string(), (base / "b").string()};
  for (const std::string& dir : dirs) {
    cmd_train(cfg, dir);
    cmd_calibrate(cfg, dir, "progressive");
    cmd_evaluate(cfg, dir);
  }
  auto slurp = [](const std::string& p) {
    std::ifstream f(p);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  for (const char* name :
       {"/checkpoint.txt", "/act_table.txt", "/metrics.json", "/metrics.txt"}) {
    if (slurp(dirs[0] + name) != slurp(dirs[1] + name)) {
      fs::remove_all(base);
      return {false, std::string("output differs across identical runs: ") + name};
    }
  }
  fs::remove_all(base);

  // Gradient check against central finite differences.
  DenoiserConfig mc;
  mc.hidden_width = 6;
  mc.time_feat_dim = 4;
  mc.cond_emb_dim = 3;
  mc.num_labels = 2;
  Denoiser model(mc);
  {
    Rng wrng(5);
    for (double& v : model.layer_weights(model.mutable_parameters(), kLayerOut))
      v = 0.3 * wrng.normal();
  }
  Rng rng(31);
  std::vector<Tensor> x_t(3), eps(3);
  std::vector<int> ts(3), labels(3);
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor x({2}), e({2});
    rng.fill_normal(x.span());
    rng.fill_normal(e.span());
    x_t[i] = std::move(x);
    eps[i] = std::move(e);
    ts[i] = 1 + static_cast<int>(rng.below(5));
    labels[i] = static_cast<int>(rng.below(2));
  }
  std::vector<double> grad(model.num_parameters()), scratch(model.num_parameters());
  model.loss_and_gradient(x_t, ts, labels, eps, grad);
  double num = 0, den = 0;
  const double h = 1e-5;
  for (std::size_t p = 0; p < model.num_parameters(); ++p) {
    auto theta = model.mutable_parameters();
    const double orig = theta[p];
    theta[p] = orig + h;
    const double lp = model.loss_and_gradient(x_t, ts, labels, eps, scratch);
    theta[p] = orig - h;
    const double lm = model.loss_and_gradient(x_t, ts, labels, eps, scratch);
    theta[p] = orig;
    const double fd = (lp - lm) / (2 * h);
    num += (grad[p] - fd) * (grad[p] - fd);
    den += fd * fd;
  }
  const double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
  if (!(rel < 1e-4))
    return {false, "gradient relative error " + fmt(rel) + " >= 1e-4"};
  return {true, "byte-identical pipeline outputs; gradient rel err " + fmt(rel)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv) {
  std::set<int> skip, only;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--skip") && i + 1 < argc)
      skip.insert(std::atoi(argv[++i]));
    else if (!std::strcmp(argv[i], "--only") && i + 1 < argc)
      only.insert(std::atoi(argv[++i]));
  }

  const std::vector<Criterion> criteria = {
      {1, "BOPs arithmetic anchors", criterion_bops},
      {2, "Average-bit anchor (8.1)", criterion_average_bits},
      {3, "Error-bound exactness on linear models", criterion_theorem_linear},
      {4, "Error-bound slack at W8A8", criterion_theorem_bound},
      {5, "Progressive vs FP-trajectory baseline (W4A4)",
       criterion_progressive_vs_baseline},
      {6, "Relaxation proportion effect", criterion_relaxation},
      {7, "Sensitivity discrepancy", criterion_sensitivity},
      {8, "Quantizer property suite", criterion_quantizer_properties},
      {9, "Frechet metric suite", criterion_frechet_suite},
      {10, "Determinism suite", criterion_determinism},
  };

  int ran = 0, passed = 0;
  for (const Criterion& c : criteria) {
    if (skip.count(c.id)) continue;
    if (!only.empty() && !only.count(c.id)) continue;
    ++ran;
    const auto tick = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - tick)
            .count();
    passed += out.pass;
    std::printf("[%2d] %-46s %s (%.1fs)\n     %s\n", c.id, c.name,
                out.pass ? "PASS" : "FAIL", secs, out.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("ACCEPTANCE: %d/%d criteria passed\n", passed, ran);
  return ran - passed;
}
