#include "whitenseq/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include "whitenseq/errors.hpp"

namespace whitenseq {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void validate_ks(const std::vector<std::size_t>& ks) {
  if (ks.empty()) throw ConfigError("evaluation needs at least one K");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == 0) throw ConfigError("K values must be positive");
    if (i > 0 && ks[i] <= ks[i - 1]) {
      throw ConfigError("K values must be strictly ascending");
    }
  }
}

std::size_t thread_count() {
  const char* env = std::getenv("WHITENSEQ_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) {
    throw ConfigError("WHITENSEQ_THREADS must be a positive integer");
  }
  return static_cast<std::size_t>(std::min<long>(v, 64));
}

const std::vector<std::size_t>& eval_users(const InteractionDataset& dataset,
                                           Split split) {
  return split == Split::kValidation ? dataset.val_users : dataset.test_users;
}

}  // namespace

std::string split_name(Split split) {
  return split == Split::kValidation ? "val" : "test";
}

std::size_t rank_of_target(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) {
    throw ShapeError("rank_of_target: target index out of range");
  }
  const double target_score = scores[target];
  if (!std::isfinite(target_score)) {
    throw NumericError("rank_of_target: non-finite target score");
  }
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) {
      throw NumericError("rank_of_target: non-finite score at index " +
                         std::to_string(i));
    }
    if (scores[i] > target_score || (scores[i] == target_score && i < target)) {
      ++rank;
    }
  }
  return rank;
}

double recall_at_k(std::size_t rank, std::size_t k) {
  if (rank == 0 || k == 0) throw ConfigError("rank and K must be positive");
  return rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank == 0 || k == 0) throw ConfigError("rank and K must be positive");
  if (rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

EvalReport evaluate(const ModelParams& params, const EncoderVariant& variant,
                    const InteractionDataset& dataset, Split split,
                    const std::vector<std::size_t>& ks, const EvalOptions& options) {
  validate_ks(ks);
  const std::vector<std::size_t>& users = eval_users(dataset, split);
  if (users.empty()) {
    throw DegenerateInputError("evaluate: empty " + split_name(split) + " split");
  }
  const auto t0 = std::chrono::steady_clock::now();

  const EncoderInputs inputs = prepare_encoder_inputs(variant, params.frozen_text);
  const ItemEncoding enc = encode_item_rows(params, variant, inputs);
  const Matrix& v_rows = enc.v_rows;
  if (v_rows.rows() != dataset.item_count) {
    throw ShapeError("evaluate: item matrix rows do not match dataset item count");
  }
  const std::size_t d = v_rows.cols();
  const std::size_t n_items = v_rows.rows();
  const std::size_t n_users = users.size();

  std::vector<std::size_t> ranks(n_users, 0);
  Matrix user_reprs = options.with_uniformity ? Matrix(d, n_users) : Matrix();

  auto eval_range = [&](std::size_t begin, std::size_t end) {
    std::vector<double> scores(n_items);
    for (std::size_t idx = begin; idx < end; ++idx) {
      const UserSplit& s = dataset.users[users[idx]];
      std::vector<std::size_t> seq = s.train;
      std::size_t target = s.val;
      if (split == Split::kTest) {
        seq.push_back(s.val);
        target = s.test;
      }
      if (seq.empty()) {
        throw DegenerateInputError("evaluate: user " + std::to_string(users[idx]) +
                                   " has an empty input sequence");
      }
      const std::vector<double> srep = encode_sequence(params, v_rows, seq);
      for (std::size_t i = 0; i < n_items; ++i) {
        scores[i] = 0.0;
        const double* vi = v_rows.row(i);
        for (std::size_t c = 0; c < d; ++c) scores[i] += vi[c] * srep[c];
      }
      ranks[idx] = rank_of_target(scores, target);
      if (options.with_uniformity) {
        for (std::size_t c = 0; c < d; ++c) user_reprs(c, idx) = srep[c];
      }
    }
  };

  const std::size_t threads = std::min(thread_count(), n_users);
  if (threads <= 1) {
    eval_range(0, n_users);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n_users + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(begin + chunk, n_users);
      if (begin >= end) break;
      pool.emplace_back(eval_range, begin, end);
    }
    for (std::thread& th : pool) th.join();
  }

  EvalReport report;
  report.variant = variant_name(variant.tag);
  report.split = split_name(split);
  report.ks = ks;
  report.recall.assign(ks.size(), 0.0);
  report.ndcg.assign(ks.size(), 0.0);
  report.users_evaluated = n_users;
  report.param_count = count_trainable_params(params);
  for (std::size_t idx = 0; idx < n_users; ++idx) {
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      report.recall[ki] += recall_at_k(ranks[idx], ks[ki]);
      report.ndcg[ki] += ndcg_at_k(ranks[idx], ks[ki]);
    }
  }
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    report.recall[ki] /= static_cast<double>(n_users);
    report.ndcg[ki] /= static_cast<double>(n_users);
  }

  if (options.with_uniformity) {
    std::vector<std::pair<std::size_t, std::size_t>> positives;
    positives.reserve(n_users);
    for (std::size_t idx = 0; idx < n_users; ++idx) {
      const UserSplit& s = dataset.users[users[idx]];
      positives.emplace_back(idx, split == Split::kTest ? s.test : s.val);
    }
    report.uniformity = alignment_uniformity(user_reprs, transpose(v_rows), positives);
    report.has_uniformity = true;
  }
  if (options.with_conditioning) {
    report.conditioning = condition_number(transpose(v_rows));
    report.has_conditioning = true;
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

EvalReport evaluate_popularity(const InteractionDataset& dataset, Split split,
                               const std::vector<std::size_t>& ks) {
  validate_ks(ks);
  const std::vector<std::size_t>& users = eval_users(dataset, split);
  if (users.empty()) {
    throw DegenerateInputError("evaluate: empty " + split_name(split) + " split");
  }
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<double> scores(dataset.item_count, 0.0);
  for (const UserSplit& s : dataset.users) {
    for (std::size_t item : s.train) scores[item] += 1.0;
  }

  EvalReport report;
  report.variant = "popularity";
  report.split = split_name(split);
  report.ks = ks;
  report.recall.assign(ks.size(), 0.0);
  report.ndcg.assign(ks.size(), 0.0);
  report.users_evaluated = users.size();
  for (std::size_t u : users) {
    const UserSplit& s = dataset.users[u];
    const std::size_t target = split == Split::kTest ? s.test : s.val;
    const std::size_t rank = rank_of_target(scores, target);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      report.recall[ki] += recall_at_k(rank, ks[ki]);
      report.ndcg[ki] += ndcg_at_k(rank, ks[ki]);
    }
  }
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    report.recall[ki] /= static_cast<double>(users.size());
    report.ndcg[ki] /= static_cast<double>(users.size());
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::string to_kv(const EvalReport& report) {
  std::string out;
  out += "variant = " + report.variant + "\n";
  out += "split = " + report.split + "\n";
  out += "users_evaluated = " + std::to_string(report.users_evaluated) + "\n";
  out += "param_count = " + std::to_string(report.param_count) + "\n";
  for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
    const std::string k = std::to_string(report.ks[ki]);
    out += "recall@" + k + " = " + fmt_double(report.recall[ki]) + "\n";
    out += "ndcg@" + k + " = " + fmt_double(report.ndcg[ki]) + "\n";
  }
  if (report.has_uniformity) out += to_kv(report.uniformity);
  if (report.has_conditioning) out += to_kv(report.conditioning);
  return out;
}

std::string report_csv_header(const std::vector<std::size_t>& ks) {
  std::string out = "variant,split,users,params";
  for (std::size_t k : ks) {
    out += ",recall@" + std::to_string(k) + ",ndcg@" + std::to_string(k);
  }
  out += "\n";
  return out;
}

std::string report_csv_row(const EvalReport& report) {
  std::string out = report.variant + "," + report.split + "," +
                    std::to_string(report.users_evaluated) + "," +
                    std::to_string(report.param_count);
  for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
    out += "," + fmt_double(report.recall[ki]) + "," + fmt_double(report.ndcg[ki]);
  }
  out += "\n";
  return out;
}

}  // namespace whitenseq
