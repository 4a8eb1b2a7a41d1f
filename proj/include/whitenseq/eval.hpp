#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "whitenseq/data.hpp"
#include "whitenseq/diagnostics.hpp"
#include "whitenseq/model.hpp"

namespace whitenseq {

enum class Split { kValidation, kTest };
std::string split_name(Split split);

// 1-based full-ranking position of the target: one plus the number of
// strictly greater scores plus equal scores at smaller indices.
std::size_t rank_of_target(std::span<const double> scores, std::size_t target);

double recall_at_k(std::size_t rank, std::size_t k);
double ndcg_at_k(std::size_t rank, std::size_t k);

struct EvalOptions {
  bool with_uniformity = false;
  bool with_conditioning = false;
};

struct EvalReport {
  std::string variant;
  std::string split;
  std::vector<std::size_t> ks;  // ascending
  std::vector<double> recall;
  std::vector<double> ndcg;
  std::size_t users_evaluated = 0;
  std::size_t param_count = 0;
  double wall_seconds = 0.0;  // reported to the console, never serialized
  bool has_uniformity = false;
  UniformityReport uniformity;
  bool has_conditioning = false;
  ConditioningReport conditioning;
};

// Full ranking over the entire item set; history items are not excluded
// from the candidates. Validation scores the training prefix against the
// held-out validation item; test appends the validation item to the
// prefix and scores against the test item. WHITENSEQ_THREADS (default 1)
// parallelizes over users with fixed-order aggregation, so results are
// identical at any thread count.
EvalReport evaluate(const ModelParams& params, const EncoderVariant& variant,
                    const InteractionDataset& dataset, Split split,
                    const std::vector<std::size_t>& ks,
                    const EvalOptions& options = {});

// Non-personalized baseline scoring every item by its frequency in the
// training prefixes.
EvalReport evaluate_popularity(const InteractionDataset& dataset, Split split,
                               const std::vector<std::size_t>& ks);

std::string to_kv(const EvalReport& report);
std::string report_csv_header(const std::vector<std::size_t>& ks);
std::string report_csv_row(const EvalReport& report);

}  // namespace whitenseq
