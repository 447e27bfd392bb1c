// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "diffquant/quant.hpp"
#include "diffquant/rng.hpp"
#include "test_support.hpp"

using namespace diffquant;

TEST_CASE("qrange spans the unsigned asymmetric integer range") {
  CHECK(qrange(8) == std::pair{0, 255});
  CHECK(qrange(4) == std::pair{0, 15});
  CHECK(qrange(10) == std::pair{0, 1023});
  CHECK(qrange(2) == std::pair{0, 3});
  CHECK(qrange(16) == std::pair{0, 65535});
  CHECK_THROWS_AS(qrange(1), std::invalid_argument);
  CHECK_THROWS_AS(qrange(17), std::invalid_argument);
}

TEST_CASE("fake_quantize maps through round, clip, dequantize") {
  QuantParams q;
  q.scale = 0.1;
  q.zero_point = 0;
  q.bits = 8;
  q.q_min = 0;
  q.q_max = 255;

  CHECK(fake_quantize_value(1.234, 0.1, 0, 0, 255) == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(fake_quantize_value(-0.5, 0.1, 0, 0, 255) == 0.0); // clip at q_min
  CHECK(fake_quantize_value(1000.0, 0.1, 0, 0, 255) ==
        doctest::Approx(25.5).epsilon(1e-12)); // clip at q_max

  Tensor x = Tensor::of({1.234, -0.5, 1000.0});
  Tensor y = fake_quantize(x, q);
  CHECK(y.shape() == x.shape());
  CHECK(y[0] == doctest::Approx(1.2));
  CHECK(y[1] == 0.0);
  CHECK(y[2] == doctest::Approx(25.5));

  Tensor bad = Tensor::of({std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(fake_quantize(bad, q), std::invalid_argument);
}

TEST_CASE("fake_quantize per-channel applies one scale per slice") {
  QuantParams q;
  q.bits = 8;
  q.q_min = 0;
  q.q_max = 255;
  q.granularity = Granularity::kPerChannel;
  q.axis = 0;
  q.channel_scales = {0.1, 0.01};
  q.channel_zero_points = {0, 0};

  Tensor w({2, 2}, {1.234, 0.06, 1.234, 0.06});
  Tensor y = fake_quantize(w, q);
  CHECK(y[0] == doctest::Approx(1.2));
  CHECK(y[1] == doctest::Approx(0.1));
  CHECK(y[2] == doctest::Approx(1.23));
  CHECK(y[3] == doctest::Approx(0.06));

  q.channel_scales = {0.1};
  CHECK_THROWS_AS(fake_quantize(w, q), std::invalid_argument);
}

TEST_CASE("calibrate_minmax classic example {-1, 0, 3} at 8 bits") {
  const QuantParams q = calibrate_minmax(Tensor::of({-1.0, 0.0, 3.0}), 8);
  CHECK(q.scale == doctest::Approx(4.0 / 255.0).epsilon(1e-15));
  CHECK(q.zero_point == 64);
  for (double v : {-1.0, 0.0, 3.0}) {
    const double r = fake_quantize_value(v, q.scale, q.zero_point, q.q_min, q.q_max);
    CHECK(std::abs(v - r) <= q.scale / 2 + 1e-12);
  }
}

TEST_CASE("calibrate_minmax {0, 1} at 2 bits") {
  const QuantParams q = calibrate_minmax(Tensor::of({0.0, 1.0}), 2);
  CHECK(q.scale == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(q.zero_point == 0);
}

TEST_CASE("calibrate_minmax covers one-sided sample ranges") {
  // min > 0: the range must be extended to zero, not silently shifted.
  std::vector<double> pos{5.0, 7.0, 10.0};
  const QuantParams q = calibrate_minmax(pos, 8);
  for (double v : pos) {
    const double r = fake_quantize_value(v, q.scale, q.zero_point, q.q_min, q.q_max);
    CHECK(std::abs(v - r) <= q.scale / 2 + 1e-12);
  }
  std::vector<double> neg{-10.0, -2.0};
  const QuantParams qn = calibrate_minmax(neg, 8);
  for (double v : neg) {
    const double r = fake_quantize_value(v, qn.scale, qn.zero_point, qn.q_min, qn.q_max);
    CHECK(std::abs(v - r) <= qn.scale / 2 + 1e-12);
  }
}

TEST_CASE("calibrate_minmax degenerate constant samples") {
  SUBCASE("zero constant is represented exactly") {
    const QuantParams q = calibrate_minmax(Tensor::of({0.0, 0.0}), 8);
    CHECK(q.scale == doctest::Approx(std::ldexp(1.0, -8)));
    CHECK(q.zero_point == 0);
    CHECK(fake_quantize_value(0.0, q.scale, q.zero_point, q.q_min, q.q_max) == 0.0);
  }
  SUBCASE("positive constant: fallback scale, z = q_min, error <= s") {
    const QuantParams q = calibrate_minmax(Tensor::of({5.0, 5.0}), 8);
    CHECK(q.scale == doctest::Approx(5.0 * std::ldexp(1.0, -8)));
    CHECK(q.zero_point == 0);
    const double r = fake_quantize_value(5.0, q.scale, q.zero_point, q.q_min, q.q_max);
    CHECK(std::abs(5.0 - r) <= q.scale + 1e-12);
  }
  SUBCASE("negative constant stays representable") {
    const QuantParams q = calibrate_minmax(Tensor::of({-2.0, -2.0}), 8);
    const double r = fake_quantize_value(-2.0, q.scale, q.zero_point, q.q_min, q.q_max);
    CHECK(std::abs(-2.0 - r) <= q.scale + 1e-12);
  }
  SUBCASE("small constant uses the epsilon floor") {
    const QuantParams q = calibrate_minmax(Tensor::of({0.25, 0.25}), 4);
    CHECK(q.scale == doctest::Approx(std::ldexp(1.0, -4)));
  }
}

TEST_CASE("calibrate_minmax rejects empty and non-finite input") {
  CHECK_THROWS_AS(calibrate_minmax(std::span<const double>{}, 8),
                  std::invalid_argument);
  std::vector<double> nan{0.0, std::nan("")};
  CHECK_THROWS_AS(calibrate_minmax(nan, 8), std::invalid_argument);
}

TEST_CASE("calibrate_mse equals min-max when samples sit on the full grid") {
  // Samples exactly representable at 2 bits spanning the full range.
  std::vector<double> samples{0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  const QuantParams q = calibrate_mse(samples, 2, 40);
  const QuantParams mm = calibrate_minmax(samples, 2);
  CHECK(q.scale == mm.scale);
  CHECK(q.zero_point == mm.zero_point);
  CHECK(quantization_mse(samples, q) == 0.0);
}

TEST_CASE("calibrate_mse clips an outlier at low bits") {
  Rng rng(3);
  std::vector<double> samples(1000);
  for (double& v : samples) v = rng.normal();
  samples.push_back(100.0); // lone outlier

  const QuantParams q = calibrate_mse(samples, 4, 80);
  const QuantParams mm = calibrate_minmax(samples, 4);
  CHECK(q.scale < mm.scale); // alpha < 1 chosen
  CHECK(quantization_mse(samples, q) < quantization_mse(samples, mm));

  // Brute-force oracle over the same grid definition.
  double lo = samples[0], hi = samples[0];
  for (double v : samples) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 80; ++i) {
    const double alpha = 0.5 + 0.5 * i / 79.0;
    best = std::min(best,
                    quantization_mse(samples, params_for_range(alpha * lo, alpha * hi, 4)));
  }
  CHECK(quantization_mse(samples, q) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("calibrate_mse with two grid points picks the better candidate") {
  Rng rng(5);
  std::vector<double> samples(200);
  for (double& v : samples) v = rng.normal();
  double lo = samples[0], hi = samples[0];
  for (double v : samples) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const QuantParams a = params_for_range(0.5 * lo, 0.5 * hi, 6);
  const QuantParams b = params_for_range(lo, hi, 6);
  const double expect =
      std::min(quantization_mse(samples, a), quantization_mse(samples, b));
  const QuantParams q = calibrate_mse(samples, 6, 2);
  CHECK(quantization_mse(samples, q) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("calibrate_mse_ranged uses the explicit range for coverage") {
  Rng rng(9);
  std::vector<double> sub(64);
  for (double& v : sub) v = rng.normal();
  const QuantParams q = calibrate_mse_ranged(sub, -6.0, 6.0, 8, 40);
  // Representable interval covers at least the alpha = 0.5 clipping of the
  // explicit range (up to one zero-point rounding step).
  const double hi_rep = q.scale * (q.q_max - q.zero_point);
  CHECK(hi_rep >= 3.0 - q.scale);
}

TEST_CASE("quantizer randomized property suite") {
  const auto fails = testsupport::quantizer_property_suite(200, 42);
  CHECK(fails.idempotence == 0);
  CHECK(fails.bounded_error == 0);
  CHECK(fails.monotonicity == 0);
  CHECK(fails.mse_dominance == 0);
  CHECK(fails.bit_monotone == 0);
}

TEST_CASE("quant params key-value record round-trips exactly") {
  QuantParams q = calibrate_minmax(Tensor::of({-0.73, 0.11, 2.9}), 6);
  const QuantParams r = parse_quant_params(format_quant_params(q));
  CHECK(r.scale == q.scale);
  CHECK(r.zero_point == q.zero_point);
  CHECK(r.bits == q.bits);
  CHECK(r.q_min == q.q_min);
  CHECK(r.q_max == q.q_max);

  QuantParams pc;
  pc.bits = 4;
  pc.q_min = 0;
  pc.q_max = 15;
  pc.granularity = Granularity::kPerChannel;
  pc.axis = 0;
  pc.channel_scales = {0.015625, 1.0 / 3.0};
  pc.channel_zero_points = {3, 12};
  const QuantParams rc = parse_quant_params(format_quant_params(pc));
  CHECK(rc.per_channel());
  CHECK(rc.channel_scales == pc.channel_scales);
  CHECK(rc.channel_zero_points == pc.channel_zero_points);
}
