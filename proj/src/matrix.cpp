#include "whitenseq/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "whitenseq/errors.hpp"

namespace whitenseq {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("matrix dimensions must be at least 1x1, got " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("matrix dimensions must be at least 1x1, got " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  check_finite("matrix data");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Matrix::check_finite(const char* what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError(std::string(what) + ": non-finite entry at flat index " +
                         std::to_string(i));
    }
  }
}

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace

void matmul_into(const Matrix& a, const Matrix& b, Matrix& c) {
  require(a.cols() == b.rows(), "matmul: inner dimensions disagree");
  require(c.rows() == a.rows() && c.cols() == b.cols(), "matmul: bad output shape");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  c.fill(0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b.row(p);
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_abt_into(const Matrix& a, const Matrix& b, Matrix& c) {
  require(a.cols() == b.cols(), "matmul_abt: inner dimensions disagree");
  require(c.rows() == a.rows() && c.cols() == b.rows(), "matmul_abt: bad output shape");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.row(j);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

void matmul_atb_into(const Matrix& a, const Matrix& b, Matrix& c) {
  require(a.rows() == b.rows(), "matmul_atb: inner dimensions disagree");
  require(c.rows() == a.cols() && c.cols() == b.cols(), "matmul_atb: bad output shape");
  const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
  c.fill(0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a.row(p);
    const double* bp = b.row(p);
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c.row(i);
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  matmul_into(a, b, c);
  return c;
}

Matrix matmul_abt(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.rows());
  matmul_abt_into(a, b, c);
  return c;
}

Matrix matmul_atb(const Matrix& a, const Matrix& b) {
  Matrix c(a.cols(), b.cols());
  matmul_atb_into(a, b, c);
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  return m;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

std::vector<double> row_means(const Matrix& x) {
  std::vector<double> mu(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xi = x.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += xi[j];
    mu[i] = s / static_cast<double>(x.cols());
  }
  return mu;
}

EigenResult sym_eigendecompose(const Matrix& input) {
  const std::size_t d = input.rows();
  if (d == 0 || input.cols() != d) {
    throw ShapeError("sym_eigendecompose: matrix must be square, got " +
                     std::to_string(input.rows()) + "x" + std::to_string(input.cols()));
  }
  constexpr double kSymTol = 1e-9;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      if (std::abs(input(i, j) - input(j, i)) > kSymTol) {
        throw ShapeError("sym_eigendecompose: input asymmetric at (" +
                         std::to_string(i) + "," + std::to_string(j) + "): |" +
                         std::to_string(input(i, j)) + " - " +
                         std::to_string(input(j, i)) + "| > 1e-9");
      }
    }
  }

  // Work on the symmetrized copy so the <=1e-9 asymmetry cannot leak through.
  Matrix a(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) a(i, j) = 0.5 * (input(i, j) + input(j, i));
  Matrix v = Matrix::identity(d);

  const double threshold = 1e-12 * frobenius_norm(a);
  constexpr int kMaxSweeps = 100;

  auto max_offdiag = [&]() {
    double m = 0.0;
    for (std::size_t p = 0; p + 1 < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) m = std::max(m, std::abs(a(p, q)));
    return m;
  };

  bool converged = max_offdiag() <= threshold;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t;
        if (std::isinf(tau * tau)) {
          t = 0.5 / tau;
        } else {
          t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        }
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        const double app = a(p, p), aqq = a(q, q);
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t r = 0; r < d; ++r) {
          if (r == p || r == q) continue;
          const double arp = a(r, p), arq = a(r, q);
          a(r, p) = c * arp - s * arq;
          a(p, r) = a(r, p);
          a(r, q) = s * arp + c * arq;
          a(q, r) = a(r, q);
        }
        for (std::size_t r = 0; r < d; ++r) {
          const double vrp = v(r, p), vrq = v(r, q);
          v(r, p) = c * vrp - s * vrq;
          v(r, q) = s * vrp + c * vrq;
        }
      }
    }
    converged = max_offdiag() <= threshold;
  }
  if (!converged) {
    throw NumericError("sym_eigendecompose: no convergence within 100 sweeps; "
                       "max off-diagonal residual " + std::to_string(max_offdiag()) +
                       " exceeds threshold " + std::to_string(threshold));
  }

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a(i, i) > a(j, j);
  });

  EigenResult result;
  result.eigenvalues.resize(d);
  result.eigenvectors = Matrix(d, d);
  for (std::size_t k = 0; k < d; ++k) {
    const std::size_t src = order[k];
    result.eigenvalues[k] = a(src, src);
    // Sign convention: largest-magnitude component positive (first on ties).
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t r = 0; r < d; ++r) {
      const double mag = std::abs(v(r, src));
      if (mag > best) {
        best = mag;
        arg = r;
      }
    }
    const double sign = v(arg, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < d; ++r) result.eigenvectors(r, k) = sign * v(r, src);
  }
  return result;
}

Matrix cholesky(const Matrix& a) {
  const std::size_t d = a.rows();
  if (d == 0 || a.cols() != d) {
    throw ShapeError("cholesky: matrix must be square, got " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
  Matrix l(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (s <= 0.0) {
          throw NumericError("cholesky: non-positive pivot " + std::to_string(s) +
                             " at index " + std::to_string(i) +
                             "; matrix is not positive-definite");
        }
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

Matrix invert_lower_triangular(const Matrix& l) {
  const std::size_t d = l.rows();
  if (d == 0 || l.cols() != d) throw ShapeError("invert_lower_triangular: not square");
  Matrix inv(d, d);
  for (std::size_t col = 0; col < d; ++col) {
    for (std::size_t i = col; i < d; ++i) {
      double s = (i == col) ? 1.0 : 0.0;
      for (std::size_t k = col; k < i; ++k) s -= l(i, k) * inv(k, col);
      if (l(i, i) == 0.0) {
        throw NumericError("invert_lower_triangular: zero diagonal at index " +
                           std::to_string(i));
      }
      inv(i, col) = s / l(i, i);
    }
  }
  return inv;
}

Matrix covariance(const Matrix& x, double epsilon) {
  const std::size_t d = x.rows(), n = x.cols();
  if (n < 2) {
    throw DegenerateInputError("covariance: need at least 2 columns, got " +
                               std::to_string(n));
  }
  const std::vector<double> mu = row_means(x);
  Matrix centered(d, n);
  for (std::size_t i = 0; i < d; ++i) {
    const double* xi = x.row(i);
    double* ci = centered.row(i);
    for (std::size_t j = 0; j < n; ++j) ci[j] = xi[j] - mu[i];
  }
  // Upper triangle then mirror: the result is exactly symmetric.
  Matrix cov(d, d);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < d; ++i) {
    const double* ri = centered.row(i);
    for (std::size_t j = i; j < d; ++j) {
      const double* rj = centered.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += ri[k] * rj[k];
      const double v = s * inv_n;
      cov(i, j) = v;
      cov(j, i) = v;
    }
  }
  for (std::size_t i = 0; i < d; ++i) cov(i, i) += epsilon;
  return cov;
}

}  // namespace whitenseq
