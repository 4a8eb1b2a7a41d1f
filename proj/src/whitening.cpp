#include "whitenseq/whitening.hpp"

#include <cmath>
#include <string>

#include "whitenseq/errors.hpp"

namespace whitenseq {

const char* whitening_method_name(WhiteningMethod m) {
  switch (m) {
    case WhiteningMethod::kZca: return "zca";
    case WhiteningMethod::kPca: return "pca";
    case WhiteningMethod::kCd: return "cd";
    case WhiteningMethod::kBn: return "bn";
  }
  return "?";
}

WhiteningMethod whitening_method_from_name(const std::string& name) {
  if (name == "zca") return WhiteningMethod::kZca;
  if (name == "pca") return WhiteningMethod::kPca;
  if (name == "cd") return WhiteningMethod::kCd;
  if (name == "bn") return WhiteningMethod::kBn;
  throw ConfigError("unknown whitening method '" + name +
                    "' (expected zca, pca, cd, or bn)");
}

namespace {

Matrix extract_row_block(const Matrix& x, std::size_t row0, std::size_t count) {
  Matrix block(count, x.cols());
  for (std::size_t i = 0; i < count; ++i) {
    const double* src = x.row(row0 + i);
    double* dst = block.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) dst[j] = src[j];
  }
  return block;
}

Matrix fit_group_phi(const Matrix& sigma, WhiteningMethod method) {
  const std::size_t d = sigma.rows();
  switch (method) {
    case WhiteningMethod::kZca:
    case WhiteningMethod::kPca: {
      const EigenResult eig = sym_eigendecompose(sigma);
      for (double lambda : eig.eigenvalues) {
        if (lambda <= 0.0) {
          throw NumericError(
              "whitening fit: regularized covariance has eigenvalue " +
              std::to_string(lambda) + " <= 0; increase epsilon");
        }
      }
      // inv_sqrt_dt = Lambda^{-1/2} D^T
      Matrix inv_sqrt_dt(d, d);
      for (std::size_t i = 0; i < d; ++i) {
        const double scale = 1.0 / std::sqrt(eig.eigenvalues[i]);
        for (std::size_t j = 0; j < d; ++j)
          inv_sqrt_dt(i, j) = scale * eig.eigenvectors(j, i);
      }
      if (method == WhiteningMethod::kPca) return inv_sqrt_dt;
      return matmul(eig.eigenvectors, inv_sqrt_dt);
    }
    case WhiteningMethod::kCd: {
      try {
        return invert_lower_triangular(cholesky(sigma));
      } catch (const NumericError& e) {
        throw NumericError("whitening fit: " + std::string(e.what()) +
                           "; increase epsilon");
      }
    }
    case WhiteningMethod::kBn: {
      Matrix phi(d, d);
      for (std::size_t i = 0; i < d; ++i) {
        const double var = sigma(i, i);
        if (var <= 0.0) {
          throw NumericError("whitening fit: dimension " + std::to_string(i) +
                             " has non-positive regularized variance " +
                             std::to_string(var) + "; increase epsilon");
        }
        phi(i, i) = 1.0 / std::sqrt(var);
      }
      return phi;
    }
  }
  throw NumericError("whitening fit: unreachable method");
}

}  // namespace

WhiteningTransform fit_whitening(const Matrix& x, WhiteningMethod method,
                                 std::size_t groups, double epsilon) {
  const std::size_t d = x.rows();
  if (groups == 0 || d % groups != 0) {
    throw ShapeError("whitening fit: dimension " + std::to_string(d) +
                     " is not divisible by " + std::to_string(groups) + " groups");
  }
  if (x.cols() < 2) {
    throw DegenerateInputError("whitening fit: need at least 2 columns, got " +
                               std::to_string(x.cols()));
  }
  if (epsilon < 0.0) {
    throw ConfigError("whitening fit: epsilon must be non-negative");
  }

  WhiteningTransform t;
  t.method = method;
  t.groups = groups;
  t.dim = d;
  t.epsilon = epsilon;
  t.blocks.reserve(groups);

  const std::size_t dg = d / groups;
  for (std::size_t g = 0; g < groups; ++g) {
    const Matrix block = extract_row_block(x, g * dg, dg);
    WhiteningGroup group;
    group.mean = row_means(block);
    const Matrix sigma = covariance(block, epsilon);
    group.phi = fit_group_phi(sigma, method);
    t.blocks.push_back(std::move(group));
  }
  return t;
}

WhitenedEmbeddings apply_whitening(const WhiteningTransform& t, const Matrix& x) {
  if (x.rows() != t.dim) {
    throw ShapeError("whitening apply: input has " + std::to_string(x.rows()) +
                     " rows but transform expects " + std::to_string(t.dim));
  }
  const std::size_t dg = t.group_dim();
  const std::size_t n = x.cols();
  Matrix out(t.dim, n);
  Matrix centered(dg, n);
  for (std::size_t g = 0; g < t.groups; ++g) {
    const WhiteningGroup& group = t.blocks[g];
    for (std::size_t i = 0; i < dg; ++i) {
      const double* src = x.row(g * dg + i);
      double* dst = centered.row(i);
      const double mu = group.mean[i];
      for (std::size_t j = 0; j < n; ++j) dst[j] = src[j] - mu;
    }
    for (std::size_t i = 0; i < dg; ++i) {
      double* dst = out.row(g * dg + i);
      const double* phi_i = group.phi.row(i);
      for (std::size_t j = 0; j < n; ++j) dst[j] = 0.0;
      for (std::size_t k = 0; k < dg; ++k) {
        const double w = phi_i[k];
        if (w == 0.0) continue;
        const double* ck = centered.row(k);
        for (std::size_t j = 0; j < n; ++j) dst[j] += w * ck[j];
      }
    }
  }
  return WhitenedEmbeddings{std::move(out), t};
}

WhitenedEmbeddings whiten(const Matrix& x, WhiteningMethod method,
                          std::size_t groups, double epsilon) {
  return apply_whitening(fit_whitening(x, method, groups, epsilon), x);
}

WhitenVerification verify_whitening(const WhiteningTransform& t, const Matrix& z,
                                    double tolerance) {
  if (z.rows() != t.dim) {
    throw ShapeError("whitening verify: matrix has " + std::to_string(z.rows()) +
                     " rows but transform expects " + std::to_string(t.dim));
  }
  const Matrix cov = covariance(z, 0.0);
  const std::size_t dg = t.group_dim();

  WhitenVerification report;
  report.tolerance = tolerance;
  report.group_deviation.resize(t.groups, 0.0);

  for (std::size_t g = 0; g < t.groups; ++g) {
    const WhiteningGroup& group = t.blocks[g];
    // Expected covariance of whitened fit data: I - epsilon * phi * phi^T.
    const Matrix phi_phit = matmul_abt(group.phi, group.phi);
    double dev = 0.0;
    const bool diagonal_only = t.method == WhiteningMethod::kBn;
    for (std::size_t i = 0; i < dg; ++i) {
      for (std::size_t j = 0; j < dg; ++j) {
        if (diagonal_only && i != j) continue;
        const double expected = (i == j ? 1.0 : 0.0) - t.epsilon * phi_phit(i, j);
        dev = std::max(dev, std::abs(cov(g * dg + i, g * dg + j) - expected));
      }
    }
    report.group_deviation[g] = dev;
  }

  for (std::size_t ga = 0; ga + 1 < t.groups; ++ga) {
    for (std::size_t gb = ga + 1; gb < t.groups; ++gb) {
      double mag = 0.0;
      for (std::size_t i = 0; i < dg; ++i)
        for (std::size_t j = 0; j < dg; ++j)
          mag = std::max(mag, std::abs(cov(ga * dg + i, gb * dg + j)));
      report.cross_blocks.push_back({ga, gb, mag});
    }
  }

  report.pass = true;
  for (double dev : report.group_deviation) {
    if (dev > tolerance) report.pass = false;
  }
  return report;
}

}  // namespace whitenseq
