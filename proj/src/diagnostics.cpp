#include "whitenseq/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "whitenseq/errors.hpp"
#include "whitenseq/rng.hpp"

namespace whitenseq {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Columns scaled to unit norm, stored one vector per row for contiguous dots.
Matrix normalized_columns_as_rows(const Matrix& x, const char* who) {
  const std::size_t d = x.rows(), n = x.cols();
  Matrix rows(n, d);
  for (std::size_t j = 0; j < n; ++j) {
    double norm_sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) norm_sq += x(i, j) * x(i, j);
    if (norm_sq <= 0.0) {
      throw DegenerateInputError(std::string(who) + ": column " +
                                 std::to_string(j) + " has zero norm");
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    double* dst = rows.row(j);
    for (std::size_t i = 0; i < d; ++i) dst[i] = x(i, j) * inv;
  }
  return rows;
}

double dot(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
  return s;
}

double clamp_cosine(double c) { return std::min(1.0, std::max(-1.0, c)); }

// Visits cosines of distinct column pairs in a fixed order: exact (i < j)
// when n <= kExactPairLimit, otherwise kSampledPairCount seeded draws.
template <class Fn>
std::size_t for_each_pair_cosine(const Matrix& unit_rows, Fn&& fn) {
  const std::size_t n = unit_rows.rows(), d = unit_rows.cols();
  if (n <= kExactPairLimit) {
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double* ri = unit_rows.row(i);
      for (std::size_t j = i + 1; j < n; ++j) {
        fn(clamp_cosine(dot(ri, unit_rows.row(j), d)));
      }
    }
    return n * (n - 1) / 2;
  }
  Rng rng(kPairSampleSeed);
  for (std::size_t k = 0; k < kSampledPairCount; ++k) {
    std::size_t i = static_cast<std::size_t>(rng.below(n));
    std::size_t j = static_cast<std::size_t>(rng.below(n));
    while (j == i) j = static_cast<std::size_t>(rng.below(n));
    fn(clamp_cosine(dot(unit_rows.row(i), unit_rows.row(j), d)));
  }
  return kSampledPairCount;
}

// Same pair schedule over squared distances of pre-normalized vectors.
template <class Fn>
std::size_t for_each_pair_sqdist(const Matrix& unit_rows, Fn&& fn) {
  const std::size_t d = unit_rows.cols();
  return for_each_pair_cosine(unit_rows, [&](double cosine) {
    // For unit vectors ||a - b||^2 = 2 - 2 <a, b>.
    (void)d;
    fn(2.0 - 2.0 * cosine);
  });
}

}  // namespace

double mean_pairwise_cosine(const Matrix& x) {
  if (x.cols() < 2) {
    throw DegenerateInputError("mean_pairwise_cosine: need at least 2 columns");
  }
  const Matrix unit = normalized_columns_as_rows(x, "mean_pairwise_cosine");
  double sum = 0.0;
  const std::size_t pairs = for_each_pair_cosine(unit, [&](double c) { sum += c; });
  return sum / static_cast<double>(pairs);
}

std::vector<std::pair<double, double>> cosine_cdf(const Matrix& x,
                                                  const std::vector<double>& grid) {
  if (x.cols() < 2) {
    throw DegenerateInputError("cosine_cdf: need at least 2 columns");
  }
  if (grid.empty()) throw ConfigError("cosine_cdf: empty threshold grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < -1.0 || grid[i] > 1.0) {
      throw ConfigError("cosine_cdf: threshold " + fmt_double(grid[i]) +
                        " outside [-1, 1]");
    }
    if (i > 0 && grid[i] <= grid[i - 1]) {
      throw ConfigError("cosine_cdf: thresholds must be strictly ascending");
    }
  }
  const Matrix unit = normalized_columns_as_rows(x, "cosine_cdf");
  std::vector<double> cosines;
  for_each_pair_cosine(unit, [&](double c) { cosines.push_back(c); });
  std::sort(cosines.begin(), cosines.end());

  std::vector<std::pair<double, double>> out;
  out.reserve(grid.size());
  const double total = static_cast<double>(cosines.size());
  for (double t : grid) {
    const auto it = std::upper_bound(cosines.begin(), cosines.end(), t);
    out.emplace_back(t, static_cast<double>(it - cosines.begin()) / total);
  }
  return out;
}

SpectrumReport singular_spectrum(const Matrix& x) {
  if (x.cols() < 2) {
    throw DegenerateInputError("singular_spectrum: need at least 2 columns");
  }
  const Matrix cov = covariance(x, 0.0);
  const EigenResult eig = sym_eigendecompose(cov);
  const double n = static_cast<double>(x.cols());

  std::vector<double> sv(eig.eigenvalues.size());
  for (std::size_t i = 0; i < sv.size(); ++i) {
    sv[i] = std::sqrt(std::max(0.0, eig.eigenvalues[i]) * n);
  }
  if (sv[0] <= 0.0) {
    throw DegenerateInputError(
        "singular_spectrum: all columns identical (zero spectrum)");
  }
  SpectrumReport report;
  report.normalized_singular_values.resize(sv.size());
  for (std::size_t i = 0; i < sv.size(); ++i) {
    report.normalized_singular_values[i] = sv[i] / sv[0];
  }
  return report;
}

ConditioningReport condition_number(const Matrix& v) {
  if (v.cols() < 2) {
    throw DegenerateInputError("condition_number: need at least 2 columns");
  }
  const Matrix cov = covariance(v, 0.0);
  const EigenResult eig = sym_eigendecompose(cov);
  const double lambda_max = eig.eigenvalues.front();
  if (lambda_max <= 0.0) {
    throw DegenerateInputError("condition_number: largest eigenvalue " +
                               fmt_double(lambda_max) + " is not positive");
  }
  const double floor = 1e-12 * lambda_max;
  const double raw_min = eig.eigenvalues.back();
  ConditioningReport report;
  report.lambda_max = lambda_max;
  report.lambda_min_clamped = raw_min < floor;
  report.lambda_min = report.lambda_min_clamped ? floor : raw_min;
  report.condition_number = lambda_max / report.lambda_min;
  return report;
}

UniformityReport alignment_uniformity(
    const Matrix& user_reprs, const Matrix& item_reprs,
    const std::vector<std::pair<std::size_t, std::size_t>>& positives) {
  if (positives.empty()) {
    throw DegenerateInputError("alignment_uniformity: no positive pairs");
  }
  const Matrix users = normalized_columns_as_rows(user_reprs, "alignment_uniformity(users)");
  const Matrix items = normalized_columns_as_rows(item_reprs, "alignment_uniformity(items)");
  const std::size_t d = users.cols();
  if (items.cols() != d) {
    throw ShapeError("alignment_uniformity: user and item dimensions differ");
  }

  UniformityReport report;
  double align_sum = 0.0;
  for (const auto& [u, i] : positives) {
    if (u >= users.rows() || i >= items.rows()) {
      throw ShapeError("alignment_uniformity: positive pair index out of range");
    }
    const double* su = users.row(u);
    const double* vi = items.row(i);
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = su[k] - vi[k];
      sq += diff * diff;
    }
    align_sum += sq;
  }
  report.l_align = align_sum / static_cast<double>(positives.size());

  auto uniform_term = [](const Matrix& unit_rows, std::size_t* pairs_out) {
    if (unit_rows.rows() < 2) {
      throw DegenerateInputError(
          "alignment_uniformity: need at least 2 vectors per side");
    }
    double sum = 0.0;
    const std::size_t pairs =
        for_each_pair_sqdist(unit_rows, [&](double sq) { sum += std::exp(-2.0 * sq); });
    *pairs_out = pairs;
    return std::log(sum / static_cast<double>(pairs));
  };

  std::size_t user_pairs = 0, item_pairs = 0;
  report.l_uniform_user = uniform_term(users, &user_pairs);
  report.l_uniform_item = uniform_term(items, &item_pairs);
  report.pair_count_used = user_pairs + item_pairs;
  return report;
}

std::string to_kv(const SpectrumReport& r) {
  std::string out;
  out += "spectrum_size = " + std::to_string(r.normalized_singular_values.size()) + "\n";
  out += "spectrum_min = " + fmt_double(r.normalized_singular_values.back()) + "\n";
  return out;
}

std::string to_kv(const ConditioningReport& r) {
  std::string out;
  out += "condition_number = " + fmt_double(r.condition_number) + "\n";
  out += "lambda_max = " + fmt_double(r.lambda_max) + "\n";
  out += "lambda_min = " + fmt_double(r.lambda_min) + "\n";
  out += "lambda_min_clamped = " + std::string(r.lambda_min_clamped ? "true" : "false") + "\n";
  return out;
}

std::string to_kv(const UniformityReport& r) {
  std::string out;
  out += "l_align = " + fmt_double(r.l_align) + "\n";
  out += "l_uniform_user = " + fmt_double(r.l_uniform_user) + "\n";
  out += "l_uniform_item = " + fmt_double(r.l_uniform_item) + "\n";
  out += "pair_count_used = " + std::to_string(r.pair_count_used) + "\n";
  return out;
}

std::string spectrum_csv(const SpectrumReport& r) {
  std::string out = "index,normalized_singular_value\n";
  for (std::size_t i = 0; i < r.normalized_singular_values.size(); ++i) {
    out += std::to_string(i) + "," + fmt_double(r.normalized_singular_values[i]) + "\n";
  }
  return out;
}

std::string cdf_csv(const std::vector<std::pair<double, double>>& cdf) {
  std::string out = "threshold,fraction\n";
  for (const auto& [t, f] : cdf) {
    out += fmt_double(t) + "," + fmt_double(f) + "\n";
  }
  return out;
}

}  // namespace whitenseq
