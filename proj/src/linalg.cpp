#include "incline/linalg.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "incline/ioutil.hpp"

namespace incline {

namespace {

void require(bool ok, ErrorCode code, const std::string& message) {
  if (!ok) throw Error(code, message);
}

void ensure_finite(const DenseMatrix& m, const char* where) {
  for (double v : m.data) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::DegenerateData, std::string(where) + ": non-finite entry");
    }
  }
}

void ensure_symmetric(const DenseMatrix& a, const char* where) {
  double scale = 1.0;
  for (double v : a.data) scale = std::max(scale, std::abs(v));
  for (size_t i = 0; i < a.rows; ++i) {
    for (size_t j = i + 1; j < a.cols; ++j) {
      if (std::abs(a.at(i, j) - a.at(j, i)) > 1e-9 * scale) {
        throw Error(ErrorCode::DimensionMismatch, std::string(where) + ": matrix not symmetric");
      }
    }
  }
}

// Cholesky factor (lower) of a; throws when a pivot is not strictly positive.
DenseMatrix cholesky(const DenseMatrix& a) {
  const size_t n = a.rows;
  DenseMatrix l(n, n);
  for (size_t j = 0; j < n; ++j) {
    double pivot = a.at(j, j);
    for (size_t k = 0; k < j; ++k) pivot -= l.at(j, k) * l.at(j, k);
    if (!(pivot > 0.0)) {
      throw Error(ErrorCode::NotPositiveDefinite,
                  "cholesky: pivot " + format_real(pivot) + " at index " + std::to_string(j));
    }
    const double diag = std::sqrt(pivot);
    l.at(j, j) = diag;
    for (size_t i = j + 1; i < n; ++i) {
      double sum = a.at(i, j);
      for (size_t k = 0; k < j; ++k) sum -= l.at(i, k) * l.at(j, k);
      l.at(i, j) = sum / diag;
    }
  }
  return l;
}

}  // namespace

DenseMatrix DenseMatrix::identity(size_t n) {
  DenseMatrix m(n, n);
  for (size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols == b.rows, ErrorCode::DimensionMismatch,
          "matmul: " + std::to_string(a.cols) + " vs " + std::to_string(b.rows));
  DenseMatrix c(a.rows, b.cols);
  for (size_t i = 0; i < a.rows; ++i) {
    for (size_t j = 0; j < b.cols; ++j) {
      double sum = 0.0;
      for (size_t k = 0; k < a.cols; ++k) sum += a.at(i, k) * b.at(k, j);
      c.at(i, j) = sum;
    }
  }
  return c;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols, a.rows);
  for (size_t i = 0; i < a.rows; ++i)
    for (size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

DenseMatrix gram(const DenseMatrix& a) {
  DenseMatrix g(a.cols, a.cols);
  for (size_t i = 0; i < a.cols; ++i) {
    for (size_t j = 0; j < a.cols; ++j) {
      double sum = 0.0;
      for (size_t n = 0; n < a.rows; ++n) sum += a.at(n, i) * a.at(n, j);
      g.at(i, j) = sum;
    }
  }
  return g;
}

DenseMatrix crossprod(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows == b.rows, ErrorCode::DimensionMismatch,
          "crossprod: row counts " + std::to_string(a.rows) + " vs " + std::to_string(b.rows));
  DenseMatrix c(a.cols, b.cols);
  for (size_t i = 0; i < a.cols; ++i) {
    for (size_t j = 0; j < b.cols; ++j) {
      double sum = 0.0;
      for (size_t n = 0; n < a.rows; ++n) sum += a.at(n, i) * b.at(n, j);
      c.at(i, j) = sum;
    }
  }
  return c;
}

DenseVector matvec(const DenseMatrix& w, const DenseVector& h) {
  require(w.cols == h.size(), ErrorCode::DimensionMismatch,
          "matvec: " + std::to_string(w.cols) + " vs " + std::to_string(h.size()));
  DenseVector out(w.rows, 0.0);
  for (size_t i = 0; i < w.rows; ++i) {
    double sum = 0.0;
    for (size_t j = 0; j < w.cols; ++j) sum += w.at(i, j) * h[j];
    out[i] = sum;
  }
  return out;
}

double trace(const DenseMatrix& a) {
  require(a.rows == a.cols, ErrorCode::DimensionMismatch, "trace: matrix not square");
  double sum = 0.0;
  for (size_t i = 0; i < a.rows; ++i) sum += a.at(i, i);
  return sum;
}

double frobenius_distance(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows == b.rows && a.cols == b.cols, ErrorCode::DimensionMismatch,
          "frobenius_distance: shape mismatch");
  double sum = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

DenseMatrix solve_spd(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows == a.cols, ErrorCode::DimensionMismatch, "solve_spd: A not square");
  require(a.rows == b.rows, ErrorCode::DimensionMismatch, "solve_spd: A/B row mismatch");
  ensure_finite(a, "solve_spd A");
  ensure_finite(b, "solve_spd B");
  ensure_symmetric(a, "solve_spd");
  const DenseMatrix l = cholesky(a);
  const size_t n = a.rows;
  DenseMatrix x(n, b.cols);
  // forward then backward substitution, one right-hand-side column at a time
  for (size_t col = 0; col < b.cols; ++col) {
    DenseVector y(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
      double sum = b.at(i, col);
      for (size_t k = 0; k < i; ++k) sum -= l.at(i, k) * y[k];
      y[i] = sum / l.at(i, i);
    }
    for (size_t ii = n; ii-- > 0;) {
      double sum = y[ii];
      for (size_t k = ii + 1; k < n; ++k) sum -= l.at(k, ii) * x.at(k, col);
      x.at(ii, col) = sum / l.at(ii, ii);
    }
  }
  ensure_finite(x, "solve_spd result");
  return x;
}

LinearMapFit fit_linear_map(const DenseMatrix& s, const DenseMatrix& t, double ridge) {
  require(s.rows == t.rows, ErrorCode::DimensionMismatch,
          "fit_linear_map: N mismatch " + std::to_string(s.rows) + " vs " + std::to_string(t.rows));
  require(s.rows >= 1, ErrorCode::DegenerateData, "fit_linear_map: no rows");
  require(ridge >= 0.0, ErrorCode::InvalidArgument, "fit_linear_map: negative ridge");
  ensure_finite(s, "fit_linear_map S");
  ensure_finite(t, "fit_linear_map T");

  const size_t d = s.cols;
  DenseMatrix g = gram(s);
  const double gram_trace = trace(g);
  if (gram_trace <= 0.0) {
    throw Error(ErrorCode::DegenerateData, "fit_linear_map: all rows of S are zero");
  }
  const DenseMatrix c = crossprod(s, t);

  // candidate ridges: the caller's value first, then the escalation ladder
  const double scale = gram_trace / static_cast<double>(d);
  const double ladder[] = {1e-10, 1e-8, 1e-6, 1e-4};
  std::vector<double> candidates{ridge};
  for (double step : ladder) {
    if (step * scale > ridge) candidates.push_back(step * scale);
  }

  for (size_t attempt = 0; attempt < candidates.size(); ++attempt) {
    DenseMatrix regularized = g;
    for (size_t i = 0; i < d; ++i) regularized.at(i, i) += candidates[attempt];
    try {
      DenseMatrix x = solve_spd(regularized, c);
      LinearMapFit fit;
      fit.w = transpose(x);
      fit.ridge_used = candidates[attempt];
      ensure_finite(fit.w, "fit_linear_map W");
      return fit;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotPositiveDefinite || attempt + 1 == candidates.size()) throw;
    }
  }
  throw Error(ErrorCode::NotPositiveDefinite, "fit_linear_map: unreachable");
}

double mean_sq_residual(const DenseMatrix& w, const DenseMatrix& s, const DenseMatrix& t) {
  require(s.rows == t.rows, ErrorCode::DimensionMismatch, "mean_sq_residual: N mismatch");
  require(w.cols == s.cols && w.rows == t.cols, ErrorCode::DimensionMismatch,
          "mean_sq_residual: W shape");
  double total = 0.0;
  for (size_t n = 0; n < s.rows; ++n) {
    for (size_t i = 0; i < w.rows; ++i) {
      double pred = 0.0;
      for (size_t j = 0; j < w.cols; ++j) pred += w.at(i, j) * s.at(n, j);
      const double diff = pred - t.at(n, i);
      total += diff * diff;
    }
  }
  return total / static_cast<double>(s.rows);
}

void append_matrix(std::string& out, const DenseMatrix& m) {
  out += "dm " + std::to_string(m.rows) + " " + std::to_string(m.cols) + "\n";
  for (size_t i = 0; i < m.rows; ++i) {
    for (size_t j = 0; j < m.cols; ++j) {
      if (j) out += ' ';
      out += format_real(m.at(i, j));
    }
    out += '\n';
  }
}

DenseMatrix parse_matrix(LineReader& reader) {
  std::string line;
  if (!reader.next(line)) reader.fail("expected matrix header, got end of input");
  std::istringstream header(line);
  std::string tag;
  long long rows = -1, cols = -1;
  header >> tag >> rows >> cols;
  if (tag != "dm" || rows < 0 || cols < 0 || header.fail()) {
    reader.fail("malformed matrix header '" + line + "'");
  }
  DenseMatrix m(static_cast<size_t>(rows), static_cast<size_t>(cols));
  for (size_t i = 0; i < m.rows; ++i) {
    if (!reader.next(line)) reader.fail("matrix truncated: expected " + std::to_string(rows) + " rows");
    const char* cursor = line.c_str();
    for (size_t j = 0; j < m.cols; ++j) {
      char* end = nullptr;
      const double v = std::strtod(cursor, &end);
      if (end == cursor) reader.fail("expected " + std::to_string(cols) + " values in matrix row");
      if (!std::isfinite(v)) reader.fail("non-finite matrix entry");
      m.at(i, j) = v;
      cursor = end;
    }
    char* end = nullptr;
    std::strtod(cursor, &end);
    if (end != cursor) reader.fail("extra values in matrix row");
  }
  return m;
}

}  // namespace incline
