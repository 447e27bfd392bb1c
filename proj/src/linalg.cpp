// SPDX-License-Identifier: Apache-2.0
#include "diffquant/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace diffquant {

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat matmul(const Mat& x, const Mat& y) {
  if (x.cols != y.rows) throw std::invalid_argument("matmul: shape mismatch");
  Mat out(x.rows, y.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t k = 0; k < x.cols; ++k) {
      const double v = x(i, k);
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < y.cols; ++j) out(i, j) += v * y(k, j);
    }
  return out;
}

Vec matvec(const Mat& m, std::span<const double> v) {
  if (m.cols != v.size()) throw std::invalid_argument("matvec: shape mismatch");
  Vec out(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += m(i, j) * v[j];
    out[i] = s;
  }
  return out;
}

Mat transpose(const Mat& m) {
  Mat out(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

double trace(const Mat& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < std::min(m.rows, m.cols); ++i) s += m(i, i);
  return s;
}

SymEig sym_eigen(const Mat& m) {
  if (m.rows != m.cols)
    throw std::invalid_argument("sym_eigen: matrix must be square");
  const std::size_t n = m.rows;
  Mat a = m;
  // Symmetrize first; inputs are symmetric up to rounding.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = v;
      a(j, i) = v;
    }

  Mat v = Mat::identity(n);
  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  SymEig out;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = a(i, i);

  // Sort ascending, permuting eigenvector columns alongside.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return out.values[x] < out.values[y];
  });
  SymEig sorted;
  sorted.values.resize(n);
  sorted.vectors = Mat(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    sorted.values[j] = out.values[order[j]];
    for (std::size_t i = 0; i < n; ++i)
      sorted.vectors(i, j) = v(i, order[j]);
  }
  return sorted;
}

Mat sqrt_psd(const Mat& m) {
  const SymEig eig = sym_eigen(m);
  const std::size_t n = m.rows;
  // Clip negatives and the numerically-spurious tail of rank-deficient
  // spectra (sqrt turns 1e-16 jitter into 1e-8 trace pollution otherwise).
  double lam_max = 0.0;
  for (double v : eig.values) lam_max = std::max(lam_max, v);
  const double floor = 1e-12 * lam_max;
  Mat out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double lam = eig.values[k] <= floor ? 0.0 : eig.values[k];
    const double r = std::sqrt(lam);
    if (r == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double vik = eig.vectors(i, k) * r;
      if (vik == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j)
        out(i, j) += vik * eig.vectors(j, k);
    }
  }
  return out;
}

double spectral_norm(const Mat& m, int iterations) {
  if (m.rows == 0 || m.cols == 0) return 0.0;
  // Power iteration on M^T M from a fixed deterministic start vector.
  Vec v(m.cols, 1.0);
  auto normalize = [](Vec& x) {
    double s = 0.0;
    for (double e : x) s += e * e;
    s = std::sqrt(s);
    if (s > 0.0)
      for (double& e : x) e /= s;
    return s;
  };
  normalize(v);
  double sigma = 0.0;
  for (int it = 0; it < std::max(iterations, 1); ++it) {
    Vec mv = matvec(m, v);
    // v <- M^T (M v)
    Vec next(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i)
      for (std::size_t j = 0; j < m.cols; ++j) next[j] += m(i, j) * mv[i];
    const double lambda = normalize(next);
    v = std::move(next);
    sigma = std::sqrt(std::max(lambda, 0.0));
    if (lambda == 0.0) break;
  }
  return sigma;
}

} // namespace diffquant
