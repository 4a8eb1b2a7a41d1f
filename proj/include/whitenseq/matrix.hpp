#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace whitenseq {

// Dense row-major matrix of 64-bit floats. The workhorse container for
// embedding matrices, covariances, whitening transforms and model weights.
class Matrix {
 public:
  // Default-constructed matrices are empty (0x0) placeholders; every sized
  // matrix has rows >= 1 and cols >= 1.
  Matrix() = default;

  // Zero-initialized rows x cols matrix.
  Matrix(std::size_t rows, std::size_t cols);

  // Takes ownership of row-major data; validates size and finiteness.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  void fill(double v);

  // Throws NumericError naming `what` if any entry is NaN or infinite.
  void check_finite(const char* what) const;

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Symmetric eigendecomposition output. Eigenvalues sorted descending;
// eigenvector i is the i-th column of `eigenvectors`, sign-fixed so the
// largest-magnitude component of each column is positive.
struct EigenResult {
  std::vector<double> eigenvalues;
  Matrix eigenvectors;
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Deterministic:
// identical input yields identical output. Converges when the largest
// off-diagonal magnitude falls below 1e-12 * ||A||_F, capped at 100 sweeps.
// Throws ShapeError for non-square or asymmetric (beyond 1e-9) input and
// NumericError (naming the residual) if the sweep cap is hit.
EigenResult sym_eigendecompose(const Matrix& a);

// Lower-triangular Cholesky factor L with L L^T = A. Throws NumericError
// reporting the failing pivot index when A is not positive-definite.
Matrix cholesky(const Matrix& a);

// (1/n) (X - mu 1^T)(X - mu 1^T)^T + epsilon I over the columns of X.
// Exactly symmetric by construction. Requires n >= 2 columns.
Matrix covariance(const Matrix& x, double epsilon);

// Dense products. Shapes are checked; ShapeError on mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);       // A B
Matrix matmul_abt(const Matrix& a, const Matrix& b);   // A B^T
Matrix matmul_atb(const Matrix& a, const Matrix& b);   // A^T B
void matmul_into(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_abt_into(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_atb_into(const Matrix& a, const Matrix& b, Matrix& c);

Matrix transpose(const Matrix& a);

// Inverse of a lower-triangular matrix by forward substitution.
Matrix invert_lower_triangular(const Matrix& l);

double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);

// Column means of X, length rows(X).
std::vector<double> row_means(const Matrix& x);

}  // namespace whitenseq
