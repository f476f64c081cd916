#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "incline/error.hpp"

namespace incline {

class LineReader;

using DenseVector = std::vector<double>;

// Row-major dense matrix of doubles. All reduction loops in this module run
// in a fixed index order, so identical inputs give bit-identical results on
// every run; nothing here is allowed to depend on thread count.
struct DenseMatrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;  // rows * cols, row-major

  DenseMatrix() = default;
  DenseMatrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(size_t i, size_t j) { return data[i * cols + j]; }
  double at(size_t i, size_t j) const { return data[i * cols + j]; }

  static DenseMatrix identity(size_t n);
};

// ===== basic operations =====

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);
// AtA and AtB accumulate over rows in ascending order (the documented
// accumulation order for Gram matrices).
DenseMatrix gram(const DenseMatrix& a);                          // AᵀA
DenseMatrix crossprod(const DenseMatrix& a, const DenseMatrix& b);  // AᵀB
DenseVector matvec(const DenseMatrix& w, const DenseVector& h);     // W·h
double trace(const DenseMatrix& a);
double frobenius_distance(const DenseMatrix& a, const DenseMatrix& b);

// Solve A·X = B for symmetric positive definite A via Cholesky (no explicit
// inverse is ever formed). Throws NotPositiveDefinite when a pivot fails.
DenseMatrix solve_spd(const DenseMatrix& a, const DenseMatrix& b);

// ===== least-squares linear map =====

// Minimizes sum_i ||W s_i - t_i||^2 over W, where s_i / t_i are the rows of
// S and T treated as column vectors. Closed form through the normal
// equations: W = ((SᵀS + ridge·I)⁻¹ SᵀT)ᵀ. A singular Gram matrix with
// ridge 0 retries on an escalating ridge ladder scaled by trace(SᵀS)/d and
// the ridge that actually succeeded is reported back.
struct LinearMapFit {
  DenseMatrix w;
  double ridge_used = 0.0;
};

LinearMapFit fit_linear_map(const DenseMatrix& s, const DenseMatrix& t, double ridge);

// Mean squared residual sum_i ||W s_i - t_i||^2 / N of a fitted map.
double mean_sq_residual(const DenseMatrix& w, const DenseMatrix& s, const DenseMatrix& t);

// ===== text format =====
//
// Matrices serialize as a "dm <rows> <cols>" header line followed by one
// row per line, entries at 17 significant digits (lossless for doubles).
// Every file format in this project embeds matrices in this shape.

void append_matrix(std::string& out, const DenseMatrix& m);
DenseMatrix parse_matrix(LineReader& reader);

}  // namespace incline
