// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "diffquant/metrics.hpp"
#include "test_support.hpp"

using namespace diffquant;

namespace {

MomentSummary gauss_moments(Vec mean, Mat cov) {
  MomentSummary m;
  m.mean = std::move(mean);
  m.cov = std::move(cov);
  m.count = 1000;
  return m;
}

Mat diag2(double a, double b) {
  Mat m(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

} // namespace

TEST_CASE("frechet distance on hand-computed Gaussians") {
  SUBCASE("identical moments give zero") {
    const MomentSummary a = gauss_moments({0.3, -0.7}, diag2(2.0, 0.5));
    CHECK(frechet_distance(a, a) == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("pure mean shift contributes the squared norm") {
    const MomentSummary a = gauss_moments({0, 0}, diag2(1, 1));
    const MomentSummary b = gauss_moments({1, 0}, diag2(1, 1));
    CHECK(frechet_distance(a, b) == doctest::Approx(1.0).epsilon(1e-12));
    const MomentSummary c = gauss_moments({3, 4}, diag2(1, 1));
    CHECK(frechet_distance(a, c) == doctest::Approx(25.0).epsilon(1e-12));
  }
  SUBCASE("commuting covariances: 4I vs I in 2-D gives 2") {
    const MomentSummary a = gauss_moments({0, 0}, diag2(4, 4));
    const MomentSummary b = gauss_moments({0, 0}, diag2(1, 1));
    CHECK(frechet_distance(a, b) == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("general commuting diagonal case matches the closed form") {
    const MomentSummary a = gauss_moments({0, 1}, diag2(2.5, 0.4));
    const MomentSummary b = gauss_moments({1, 1}, diag2(0.9, 1.6));
    const double expect = 1.0 +
                          (std::sqrt(2.5) - std::sqrt(0.9)) * (std::sqrt(2.5) - std::sqrt(0.9)) +
                          (std::sqrt(0.4) - std::sqrt(1.6)) * (std::sqrt(0.4) - std::sqrt(1.6));
    CHECK(frechet_distance(a, b) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("symmetry within 1e-9 on random PSD pairs") {
    Rng rng(19);
    for (int rep = 0; rep < 30; ++rep) {
      const std::size_t d = 2 + rng.below(3);
      auto random_psd = [&] {
        Mat g(d, d);
        for (double& v : g.a) v = rng.normal();
        Mat psd(d, d);
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < d; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < d; ++k) s += g(i, k) * g(j, k);
            psd(i, j) = s + (i == j ? 0.1 : 0.0);
          }
        return psd;
      };
      Vec ma(d), mb(d);
      for (double& v : ma) v = rng.normal();
      for (double& v : mb) v = rng.normal();
      const MomentSummary a = gauss_moments(ma, random_psd());
      const MomentSummary b = gauss_moments(mb, random_psd());
      const double ab = frechet_distance(a, b);
      const double ba = frechet_distance(b, a);
      CHECK(std::abs(ab - ba) < 1e-9);
      CHECK(ab >= -1e-9);
    }
  }
  SUBCASE("dimension mismatch is rejected") {
    const MomentSummary a = gauss_moments({0, 0}, diag2(1, 1));
    MomentSummary b;
    b.mean = {0, 0, 0};
    b.cov = Mat(3, 3);
    CHECK_THROWS_AS(frechet_distance(a, b), std::invalid_argument);
  }
}

TEST_CASE("moments from samples use the unbiased covariance") {
  std::vector<Tensor> samples{Tensor::of({1.0, 0.0}), Tensor::of({-1.0, 0.0}),
                              Tensor::of({0.0, 2.0}), Tensor::of({0.0, -2.0})};
  const MomentSummary m = MomentSummary::from_samples(samples);
  CHECK(m.mean[0] == 0.0);
  CHECK(m.mean[1] == 0.0);
  CHECK(m.cov(0, 0) == doctest::Approx(2.0 / 3.0));
  CHECK(m.cov(1, 1) == doctest::Approx(8.0 / 3.0));
  CHECK(m.cov(0, 1) == 0.0);
  CHECK(m.cov(0, 1) == m.cov(1, 0));
}

TEST_CASE("random-projection features keep the zero-distance property") {
  Rng rng(23);
  std::vector<Tensor> samples;
  for (int i = 0; i < 200; ++i) {
    Tensor x({2});
    rng.fill_normal(x.span());
    samples.push_back(std::move(x));
  }
  const MomentSummary a = moments_of(samples, 8);
  CHECK(a.mean.size() == 8);
  CHECK(frechet_distance(a, a) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("condition match score counts nearest-center agreement") {
  const std::vector<Tensor> centers{Tensor::of({1.0, 0.0}), Tensor::of({-1.0, 0.0})};
  SUBCASE("all samples at their labeled centers") {
    std::vector<Tensor> s{Tensor::of({1.0, 0.0}), Tensor::of({-1.0, 0.0})};
    std::vector<int> labels{0, 1};
    CHECK(condition_match_score(s, labels, centers) == 1.0);
  }
  SUBCASE("all samples at the wrong center") {
    std::vector<Tensor> s{Tensor::of({-1.0, 0.0}), Tensor::of({1.0, 0.0})};
    std::vector<int> labels{0, 1};
    CHECK(condition_match_score(s, labels, centers) == 0.0);
  }
  SUBCASE("half correct half wrong") {
    std::vector<Tensor> s{Tensor::of({1.0, 0.1}), Tensor::of({1.0, -0.1}),
                          Tensor::of({1.0, 0.0}), Tensor::of({-1.0, 0.0})};
    std::vector<int> labels{0, 0, 1, 0};
    CHECK(condition_match_score(s, labels, centers) == 0.5);
  }
  SUBCASE("errors") {
    std::vector<Tensor> empty;
    std::vector<int> no_labels;
    CHECK_THROWS_AS(condition_match_score(empty, no_labels, centers),
                    std::invalid_argument);
    std::vector<Tensor> s{Tensor::of({0.0, 0.0})};
    std::vector<int> bad{7};
    CHECK_THROWS_AS(condition_match_score(s, bad, centers), std::invalid_argument);
  }
}

TEST_CASE("bops reproduces the reported table anchors") {
  CHECK(bops(693, 32, 32) == doctest::Approx(693.0).epsilon(1e-12));
  CHECK(bops(693, 8, 8) == doctest::Approx(43.31).epsilon(0.01 / 43.31));
  CHECK(bops(693, 8, 8.1) == doctest::Approx(43.85).epsilon(0.01 / 43.85));
  CHECK(bops(693, 8, 8.4) == doctest::Approx(45.47).epsilon(0.01 / 45.47));
  CHECK(bops(693, 4, 8) == doctest::Approx(21.66).epsilon(0.01 / 21.66));
  CHECK(bops(693, 4, 8.1) == doctest::Approx(21.93).epsilon(0.01 / 21.93));
  CHECK(bops(693, 4, 8.4) == doctest::Approx(22.74).epsilon(0.01 / 22.74));
  // Exactly multiplicative.
  CHECK(bops(100, 6, 7) == 100.0 * 6.0 * 7.0 / 1024.0);
  CHECK_THROWS_AS(bops(0, 8, 8), std::invalid_argument);
}

TEST_CASE("taylor coefficients: single-step value") {
  const NoiseSchedule s = make_schedule(1, 0.2, 0.2); // alpha = abar = 0.8
  const std::vector<double> jac{0.0};
  const auto c = taylor_coefficients(s, jac);
  REQUIRE(c.size() == 1);
  // (1/sqrt(0.8)) * (0.2 / sqrt(0.2)) = 0.5 exactly.
  CHECK(c[0] == doctest::Approx(0.5).epsilon(1e-12));
  // |Delta| = 0.01 -> contribution 0.005.
  CHECK(c[0] * 0.01 == doctest::Approx(0.005).epsilon(1e-12));
}

TEST_CASE("taylor coefficients: zero Jacobians collapse to alpha products") {
  const NoiseSchedule s = make_schedule(4, 0.05, 0.3);
  const std::vector<double> jac(4, 0.0);
  const auto c = taylor_coefficients(s, jac);
  for (int t = 1; t <= 4; ++t) {
    double expect = s.inv_sqrt_alpha(t) * s.eps_coeff(t);
    for (int u = 1; u < t; ++u) expect *= s.inv_sqrt_alpha(u);
    CHECK(c[static_cast<std::size_t>(t - 1)] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("taylor coefficients: two-step expansion matches hand algebra") {
  const NoiseSchedule s = make_schedule(2, 0.1, 0.2);
  const std::vector<double> jac{0.37, 0.81}; // J_1, J_2
  const auto c = taylor_coefficients(s, jac);
  REQUIRE(c.size() == 2);

  const double a1 = 1.0 / std::sqrt(s.alpha(1));
  const double a2 = 1.0 / std::sqrt(s.alpha(2));
  const double k1 = (1.0 - s.alpha(1)) / std::sqrt(1.0 - s.alpha_bar(1));
  const double k2 = (1.0 - s.alpha(2)) / std::sqrt(1.0 - s.alpha_bar(2));

  // Delta_{T-1} coefficient: (1/sqrt(a_1)) k_1.
  CHECK(c[0] == doctest::Approx(a1 * k1).epsilon(1e-12));
  // Delta_T coefficient: (1/sqrt(a_2)) (1/sqrt(a_1)) k_2 (1 + k_1 J_1).
  CHECK(c[1] == doctest::Approx(a2 * a1 * k2 * (1.0 + k1 * jac[0])).epsilon(1e-12));
}

TEST_CASE("taylor coefficients are non-negative and the bound is monotone") {
  const NoiseSchedule s = make_schedule(12, 0.01, 0.3);
  Rng rng(7);
  std::vector<double> jac(12);
  for (double& v : jac) v = std::abs(rng.normal());
  const auto c = taylor_coefficients(s, jac);
  std::vector<double> deltas(12);
  for (double& v : deltas) v = std::abs(rng.normal());
  double bound = 0;
  for (int i = 0; i < 12; ++i) bound += c[static_cast<std::size_t>(i)] * deltas[static_cast<std::size_t>(i)];
  for (int i = 0; i < 12; ++i) {
    CHECK(c[static_cast<std::size_t>(i)] >= 0.0);
    // Increasing any per-step error never decreases the bound.
    std::vector<double> worse = deltas;
    worse[static_cast<std::size_t>(i)] += 0.5;
    double worse_bound = 0;
    for (int j = 0; j < 12; ++j)
      worse_bound += c[static_cast<std::size_t>(j)] * worse[static_cast<std::size_t>(j)];
    CHECK(worse_bound >= bound);
  }
  CHECK_THROWS_AS(taylor_coefficients(s, std::vector<double>(5, 0.0)),
                  std::invalid_argument);
}

namespace {

// Random linear noise model plus a perturbed twin.
std::pair<LinearNoiseModel, LinearNoiseModel> linear_pair(int T, std::uint64_t seed,
                                                          double perturbation) {
  Rng rng(seed);
  LinearNoiseModel fp, q;
  for (int t = 0; t < T; ++t) {
    Mat a(2, 2);
    for (double& v : a.a) v = 0.35 * rng.normal();
    Vec b(2);
    for (double& v : b) v = 0.5 * rng.normal();
    Mat ah = a;
    Vec bh = b;
    for (double& v : ah.a) v += perturbation * rng.normal();
    for (double& v : bh) v += perturbation * rng.normal();
    fp.A.push_back(a);
    fp.b.push_back(b);
    q.A.push_back(ah);
    q.b.push_back(bh);
  }
  return {std::move(fp), std::move(q)};
}

} // namespace

TEST_CASE("theorem check is exact for linear noise models") {
  for (int T : {1, 2, 10}) {
    const NoiseSchedule sched = make_schedule(T, 0.02, 0.3);
    const auto [fp, q] = linear_pair(T, 100 + static_cast<std::uint64_t>(T), 0.01);
    const ErrorBoundReport rep = error_bound_check_linear(fp, q, sched, 7);
    REQUIRE(rep.delta_actual > 0.0);
    CHECK(rep.residual / rep.delta_actual < 1e-8);
    // The norm bound also holds (triangle inequality, no Taylor error).
    CHECK(rep.delta_actual <= rep.linear_prediction * (1.0 + 1e-9));
    REQUIRE(rep.per_step_delta_norms.size() == static_cast<std::size_t>(T));
    REQUIRE(rep.coefficients.size() == static_cast<std::size_t>(T));
  }
}

TEST_CASE("theorem check on the wrapped model: disabled quantization is exact") {
  const auto& rig = diffquant::testsupport::small_rig();
  LayerInputPool empty;
  QuantizedDenoiser qm = quantize_weights(rig.model, kFpBits, empty);
  qm.set_table(ActQuantTable(rig.sched.steps(), kFpBits));
  const ErrorBoundReport rep = error_bound_check(qm, 0, 99, rig.sched);
  CHECK(rep.delta_actual == 0.0);
  for (double d : rep.per_step_delta_norms) CHECK(d == 0.0);
  CHECK(rep.linear_prediction == 0.0);
}

TEST_CASE("per-step deltas are pure functions of the trajectory") {
  const auto& rig = diffquant::testsupport::small_rig();
  QuantizedDenoiser qm = quantize_weights(rig.model, 8, rig.pool);
  qm.set_table(ActQuantTable(rig.sched.steps(), 8));
  CalibrationSpec spec = rig.calib;
  spec.weight_bits = 8;
  spec.act_bits = 8;
  qm.set_table(progressive_calibrate(qm, spec, rig.sched));

  const auto trajs =
      sample_with([&qm](const Tensor& x, int t, int l) { return qm.predict(x, t, l); },
                  2, 1, std::vector<int>{0}, 123, rig.sched, SigmaMode::kZero);
  const auto a = per_step_deltas(qm, trajs[0]);
  const auto b = per_step_deltas(qm, trajs[0]);
  CHECK(a == b);
  for (double d : a) CHECK(d >= 0.0);
}

TEST_CASE("per-step deltas: 16-bit stays below 1e-3, W4 dominates W8") {
  const auto& rig = diffquant::testsupport::medium_rig();
  auto calibrated = [&](int wbits, int abits) {
    CalibrationSpec spec = rig.calib;
    spec.weight_bits = wbits;
    spec.act_bits = abits;
    QuantizedDenoiser q = quantize_weights(rig.model, wbits, rig.pool);
    q.set_table(ActQuantTable(50, abits));
    q.set_table(progressive_calibrate(q, spec, rig.sched));
    return q;
  };

  SUBCASE("16-bit per-step error is tiny on its own trajectories") {
    const QuantizedDenoiser q16 = calibrated(16, 16);
    const auto trajs = sample_with(
        [&q16](const Tensor& x, int t, int l) { return q16.predict(x, t, l); },
        2, 8, rig.calib.conditions, rig.calib.seed, rig.sched, SigmaMode::kZero);
    for (const auto& traj : trajs)
      for (double d : per_step_deltas(q16, traj))
        CHECK(d < 1e-3); // measured max 1.1e-4
  }

  SUBCASE("W4 per-step deltas dominate W8 on >= 90% of steps") {
    const QuantizedDenoiser q4 = calibrated(4, 8);
    const QuantizedDenoiser q8 = calibrated(8, 8);
    int ge = 0, total = 0;
    for (int i = 0; i < 8; ++i) {
      const std::uint64_t seed = Rng::mix(88, static_cast<std::uint64_t>(i));
      const std::vector<int> label{i % 2};
      const auto t4 = sample_with(
          [&q4](const Tensor& x, int t, int l) { return q4.predict(x, t, l); },
          2, 1, label, seed, rig.sched, SigmaMode::kZero);
      const auto t8 = sample_with(
          [&q8](const Tensor& x, int t, int l) { return q8.predict(x, t, l); },
          2, 1, label, seed, rig.sched, SigmaMode::kZero);
      const auto d4 = per_step_deltas(q4, t4[0]);
      const auto d8 = per_step_deltas(q8, t8[0]);
      for (int t = 0; t < 50; ++t) {
        ge += d4[static_cast<std::size_t>(t)] >= d8[static_cast<std::size_t>(t)];
        ++total;
      }
    }
    CHECK(static_cast<double>(ge) / total >= 0.9);
  }
}

TEST_CASE("evaluate: disabled quantizers give zero Frechet on both splits") {
  const auto& rig = diffquant::testsupport::small_rig();
  LayerInputPool empty;
  QuantizedDenoiser qm = quantize_weights(rig.model, kFpBits, empty);
  qm.set_table(ActQuantTable(rig.sched.steps(), kFpBits));

  EvalSpec spec;
  spec.n_samples = 64;
  spec.n_seed_groups = 1;
  spec.dataset = rig.mix;
  spec.delta_trajectories = 2;
  const MetricsReport rep = evaluate(rig.model, qm, spec, rig.sched, 32.0);
  CHECK(rep.calib_split.frechet_to_fp == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(rep.holdout_split.frechet_to_fp == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(rep.delta_sum == 0.0);
  CHECK(rep.weight_bits == 32.0);
  CHECK(rep.bops_value == doctest::Approx(rep.flops).epsilon(1e-12));
  CHECK(rep.mean_per_step_delta.size() == static_cast<std::size_t>(rig.sched.steps()));
}

TEST_CASE("evaluate reports both splits with their own scores") {
  const auto& rig = diffquant::testsupport::small_rig();
  QuantizedDenoiser qm = quantize_weights(rig.model, 8, rig.pool);
  qm.set_table(ActQuantTable(rig.sched.steps(), 8));
  CalibrationSpec cs = rig.calib;
  cs.weight_bits = 8;
  cs.act_bits = 8;
  qm.set_table(progressive_calibrate(qm, cs, rig.sched));

  EvalSpec spec;
  spec.n_samples = 128;
  spec.n_seed_groups = 1;
  spec.dataset = rig.mix;
  spec.calib_labels = {0, 1};
  spec.holdout_labels = {2, 3};
  spec.delta_trajectories = 2;
  const MetricsReport rep = evaluate(rig.model, qm, spec, rig.sched, 8.0);
  CHECK(rep.calib_split.frechet_to_fp >= 0.0);
  CHECK(rep.holdout_split.frechet_to_fp >= 0.0);
  CHECK(rep.calib_split.condition_score >= 0.0);
  CHECK(rep.holdout_split.condition_score <= 1.0);
  CHECK(rep.theorem_bound >= 0.0);
  CHECK(rep.n_seed_groups == 1);
}
