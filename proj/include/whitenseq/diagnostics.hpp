#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "whitenseq/matrix.hpp"

namespace whitenseq {

// Pair-expectation convention used throughout: all unordered distinct pairs
// (self-pairs excluded). Exact enumeration up to kExactPairLimit vectors;
// beyond that, kSampledPairCount pairs drawn with the fixed kPairSampleSeed
// so results stay reproducible.
inline constexpr std::size_t kExactPairLimit = 4096;
inline constexpr std::size_t kSampledPairCount = 1'000'000;
inline constexpr std::uint64_t kPairSampleSeed = 0x9e3779b97f4a7c15ULL;

// Mean cosine similarity over distinct column pairs of X. High values signal
// an anisotropic embedding space. Throws DegenerateInputError naming any
// zero-norm column.
double mean_pairwise_cosine(const Matrix& x);

// For each threshold t in `grid` (ascending, within [-1, 1]): the fraction of
// distinct column pairs whose cosine similarity is <= t.
std::vector<std::pair<double, double>> cosine_cdf(const Matrix& x,
                                                  const std::vector<double>& grid);

// Singular values of the column-centered matrix, normalized by the largest.
// Descending; first entry exactly 1.
struct SpectrumReport {
  std::vector<double> normalized_singular_values;
};

SpectrumReport singular_spectrum(const Matrix& x);

// Condition number of the covariance of V's columns. lambda_min is clamped
// below at 1e-12 * lambda_max (flagged) so near-singular matrices report a
// large but finite kappa.
struct ConditioningReport {
  double condition_number = 1.0;
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  bool lambda_min_clamped = false;
};

ConditioningReport condition_number(const Matrix& v);

// Alignment and uniformity of L2-normalized user/item representations:
//   l_align        = mean over positive (user, item) pairs of squared distance
//   l_uniform_user = log mean over distinct user pairs of exp(-2 * squared distance)
//   l_uniform_item = same over item columns
// pair_count_used = user pairs + item pairs actually evaluated.
struct UniformityReport {
  double l_align = 0.0;
  double l_uniform_user = 0.0;
  double l_uniform_item = 0.0;
  std::size_t pair_count_used = 0;
};

UniformityReport alignment_uniformity(
    const Matrix& user_reprs, const Matrix& item_reprs,
    const std::vector<std::pair<std::size_t, std::size_t>>& positives);

// Key-value serializations (one "key = value" line each, %.17g floats).
std::string to_kv(const SpectrumReport& r);
std::string to_kv(const ConditioningReport& r);
std::string to_kv(const UniformityReport& r);

// CSV series with a header row.
std::string spectrum_csv(const SpectrumReport& r);                       // index,normalized_singular_value
std::string cdf_csv(const std::vector<std::pair<double, double>>& cdf);  // threshold,fraction

}  // namespace whitenseq
