// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace diffquant {

using Vec = std::vector<double>;

/// Dense row-major matrix. Sized for desk scale (dims <= 64); no BLAS.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return a[r * cols + c];
  }

  static Mat identity(std::size_t n);
};

Mat matmul(const Mat& x, const Mat& y);
Vec matvec(const Mat& m, std::span<const double> v);
Mat transpose(const Mat& m);
double trace(const Mat& m);

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues ascending; `vectors` columns are the eigenvectors.
struct SymEig {
  Vec values;
  Mat vectors;
};
SymEig sym_eigen(const Mat& m);

/// Symmetric PSD square root; eigenvalues below zero are clipped to zero.
Mat sqrt_psd(const Mat& m);

/// Largest singular value via power iteration on M^T M.
double spectral_norm(const Mat& m, int iterations = 5);

} // namespace diffquant
