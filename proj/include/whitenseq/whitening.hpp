#pragma once

#include <string>
#include <vector>

#include "whitenseq/matrix.hpp"

namespace whitenseq {

// Non-parametric whitening flavors. They differ only in the choice of the
// transform matrix Phi applied to the centered data:
//   ZCA: D Lambda^{-1/2} D^T   (symmetric; stays closest to input axes)
//   PCA: Lambda^{-1/2} D^T     (rotates into the eigenbasis)
//   CD:  inverse Cholesky factor of the covariance (lower-triangular)
//   BN:  diag(covariance)^{-1/2} (per-dimension standardization only)
enum class WhiteningMethod { kZca, kPca, kCd, kBn };

const char* whitening_method_name(WhiteningMethod m);
WhiteningMethod whitening_method_from_name(const std::string& name);

struct WhiteningGroup {
  std::vector<double> mean;  // row means of this group's block at fit time
  Matrix phi;                // (d/G) x (d/G)
};

// Fitted transform. Dimensions are partitioned into `groups` contiguous
// blocks of equal size; each block is whitened independently, so cross-block
// correlation survives for groups > 1 (relaxed whitening).
struct WhiteningTransform {
  WhiteningMethod method = WhiteningMethod::kZca;
  std::size_t groups = 1;
  std::size_t dim = 0;
  double epsilon = 0.0;
  std::vector<WhiteningGroup> blocks;

  std::size_t group_dim() const { return dim / groups; }
};

struct WhitenedEmbeddings {
  Matrix matrix;
  WhiteningTransform transform;
};

// Fits per-group means and Phi from the columns of x (one column per item).
// The per-group covariance is regularized with epsilon * I before inversion.
// Throws ShapeError when dim is not divisible by groups and NumericError
// (suggesting a larger epsilon) when the regularized covariance is not
// positive-definite.
WhiteningTransform fit_whitening(const Matrix& x, WhiteningMethod method,
                                 std::size_t groups, double epsilon);

// Per group: output block = phi * (input block - mean * 1^T). x is not modified.
WhitenedEmbeddings apply_whitening(const WhiteningTransform& t, const Matrix& x);

// fit + apply in one call.
WhitenedEmbeddings whiten(const Matrix& x, WhiteningMethod method,
                          std::size_t groups, double epsilon);

// Measurement report for a whitened matrix. For each group the empirical
// covariance of the group's rows (epsilon = 0) is compared against the value
// it must take when z came from the fit data: I - epsilon * phi * phi^T.
// For BN only the diagonal of that identity is constrained, so only diagonal
// deviations are reported there. Cross-group blocks report the largest
// covariance magnitude between each pair of groups (empty for groups == 1).
struct CrossGroupBlock {
  std::size_t group_a = 0;
  std::size_t group_b = 0;
  double max_abs_covariance = 0.0;
};

struct WhitenVerification {
  std::vector<double> group_deviation;  // per group, max |cov - expected|
  std::vector<CrossGroupBlock> cross_blocks;
  double tolerance = 0.0;
  bool pass = false;  // all group deviations <= tolerance
};

WhitenVerification verify_whitening(const WhiteningTransform& t, const Matrix& z,
                                    double tolerance);

}  // namespace whitenseq
