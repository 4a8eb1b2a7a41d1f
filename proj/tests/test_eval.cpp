#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "whitenseq/data.hpp"
#include "whitenseq/errors.hpp"
#include "whitenseq/eval.hpp"
#include "whitenseq/model.hpp"
#include "whitenseq/rng.hpp"

using namespace whitenseq;

namespace {

// Independent oracle: sort indices by (score desc, index asc) and find
// the target's 1-based position.
std::size_t sorted_rank(const std::vector<double>& scores, std::size_t target) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return static_cast<std::size_t>(
             std::find(idx.begin(), idx.end(), target) - idx.begin()) +
         1;
}

struct EvalFixture {
  EncoderVariant variant;
  ModelParams params;
  InteractionDataset dataset;
};

EvalFixture make_fixture(std::size_t items = 20, std::size_t users = 25) {
  EvalFixture f;
  f.variant.tag = VariantTag::kWhiten;
  f.variant.head_depth = 1;
  Rng rng(41);
  f.params = init_params(f.variant, 8, 2, 1, 12, items, 6, rng);
  f.params.frozen_text = gen_anisotropic_embeddings(items, 6, 0.5, 13);
  SequenceGenConfig cfg;
  cfg.users = users;
  cfg.mean_len = 8.0;
  f.dataset = leave_one_out(gen_sequences(f.params.frozen_text, cfg, 14), items);
  return f;
}

}  // namespace

TEST_CASE("rank agrees with the sort-based oracle, ties included") {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> scores(n);
    // A small value alphabet forces plenty of exact ties.
    for (double& s : scores) s = static_cast<double>(rng.below(6));
    const std::size_t target = rng.below(n);
    CHECK(rank_of_target(scores, target) == sorted_rank(scores, target));
  }
}

TEST_CASE("rank is invariant under score shifts and scales") {
  const std::vector<double> scores{0.3, -0.1, 0.7, 0.3, 0.0};
  for (std::size_t t = 0; t < scores.size(); ++t) {
    const std::size_t base = rank_of_target(scores, t);
    std::vector<double> shifted = scores, scaled = scores;
    for (double& s : shifted) s += 100.0;
    for (double& s : scaled) s *= 4.0;
    CHECK(rank_of_target(shifted, t) == base);
    CHECK(rank_of_target(scaled, t) == base);
  }
}

TEST_CASE("rank rejects non-finite scores") {
  std::vector<double> scores{0.1, std::nan(""), 0.2};
  CHECK_THROWS_AS(rank_of_target(scores, 0), NumericError);
}

TEST_CASE("recall and ndcg closed forms") {
  CHECK(recall_at_k(1, 1) == 1.0);
  CHECK(recall_at_k(2, 1) == 0.0);
  CHECK(recall_at_k(5, 5) == 1.0);
  CHECK(recall_at_k(6, 5) == 0.0);

  CHECK(ndcg_at_k(1, 5) == doctest::Approx(1.0));
  CHECK(ndcg_at_k(3, 5) == doctest::Approx(1.0 / std::log2(4.0)).epsilon(1e-15));
  CHECK(ndcg_at_k(6, 5) == 0.0);
  CHECK(ndcg_at_k(20, 20) ==
        doctest::Approx(1.0 / std::log2(21.0)).epsilon(1e-15));
}

TEST_CASE("metrics derived from oracle ranks on random score vectors") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 21 + rng.below(80);
    std::vector<double> scores(n);
    for (double& s : scores) s = rng.normal();
    const std::size_t target = rng.below(n);
    const std::size_t rank = sorted_rank(scores, target);
    for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{20}}) {
      CHECK(recall_at_k(rank_of_target(scores, target), k) ==
            (rank <= k ? 1.0 : 0.0));
      CHECK(ndcg_at_k(rank_of_target(scores, target), k) ==
            (rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0));
    }
  }
}

TEST_CASE("popularity baseline matches a hand-computed report") {
  InteractionDataset ds;
  ds.item_count = 4;
  ds.users.resize(3);
  ds.users[0] = {{0, 0, 1}, 2, 0};
  ds.users[1] = {{0, 1, 1}, 3, 1};
  ds.users[2] = {{0}, 1, 2};
  ds.val_users = {0, 1, 2};
  ds.test_users = {0, 1, 2};

  // Train-prefix frequencies: item0 -> 4, item1 -> 3, items 2,3 -> 0.
  // Validation targets 2, 3, 1 rank 3, 4 (tie on zero, larger index), 2.
  const EvalReport val = evaluate_popularity(ds, Split::kValidation, {1, 2, 3});
  CHECK(val.variant == "popularity");
  CHECK(val.users_evaluated == 3);
  CHECK(val.recall[0] == doctest::Approx(0.0));                // nobody at rank 1
  CHECK(val.recall[1] == doctest::Approx(1.0 / 3.0));          // target 1 at rank 2
  CHECK(val.recall[2] == doctest::Approx(2.0 / 3.0));          // ranks 2 and 3
  const double ndcg2 = 1.0 / std::log2(3.0);
  CHECK(val.ndcg[1] == doctest::Approx(ndcg2 / 3.0).epsilon(1e-12));

  // Test targets 0, 1, 2 rank 1, 2, 3.
  const EvalReport test = evaluate_popularity(ds, Split::kTest, {1, 2, 3});
  CHECK(test.recall[0] == doctest::Approx(1.0 / 3.0));
  CHECK(test.recall[1] == doctest::Approx(2.0 / 3.0));
  CHECK(test.recall[2] == doctest::Approx(1.0));
  CHECK(test.ndcg[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("evaluate reports the protocol's shapes and bounds") {
  EvalFixture f = make_fixture();
  const EvalReport report =
      evaluate(f.params, f.variant, f.dataset, Split::kTest, {5, 10, 20});
  CHECK(report.split == "test");
  CHECK(report.users_evaluated == f.dataset.test_users.size());
  CHECK(report.param_count == count_trainable_params(f.params));
  REQUIRE(report.recall.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(report.recall[i] >= 0.0);
    CHECK(report.recall[i] <= 1.0);
    CHECK(report.ndcg[i] >= 0.0);
    CHECK(report.ndcg[i] <= report.recall[i] + 1e-15);  // per-user ndcg <= recall
  }
  // Cutoff monotonicity.
  CHECK(report.recall[0] <= report.recall[1]);
  CHECK(report.recall[1] <= report.recall[2]);

  CHECK_THROWS_AS(evaluate(f.params, f.variant, f.dataset, Split::kTest, {}),
                  ConfigError);
  CHECK_THROWS_AS(evaluate(f.params, f.variant, f.dataset, Split::kTest, {10, 5}),
                  ConfigError);
  CHECK_THROWS_AS(evaluate(f.params, f.variant, f.dataset, Split::kTest, {5, 5}),
                  ConfigError);
  CHECK_THROWS_AS(evaluate(f.params, f.variant, f.dataset, Split::kTest, {0}),
                  ConfigError);
}

TEST_CASE("test-time input is the training prefix plus the validation item") {
  EvalFixture f = make_fixture();

  // Dataset A: the model sees train + val as input and must hit `test`.
  InteractionDataset a;
  a.item_count = f.dataset.item_count;
  a.users.push_back({{0, 1}, 2, 3});
  a.val_users = {0};
  a.test_users = {0};

  // Dataset B folds the validation item into the prefix; its val target is
  // A's test target. Scoring B on validation must equal scoring A on test.
  InteractionDataset b;
  b.item_count = f.dataset.item_count;
  b.users.push_back({{0, 1, 2}, 3, 5});
  b.val_users = {0};
  b.test_users = {0};

  const EvalReport ra = evaluate(f.params, f.variant, a, Split::kTest, {1, 5, 20});
  const EvalReport rb =
      evaluate(f.params, f.variant, b, Split::kValidation, {1, 5, 20});
  CHECK(ra.recall == rb.recall);
  CHECK(ra.ndcg == rb.ndcg);
}

TEST_CASE("evaluation is deterministic and thread-count invariant") {
  EvalFixture f = make_fixture(24, 40);
  const EvalReport base =
      evaluate(f.params, f.variant, f.dataset, Split::kTest, {5, 20});

  setenv("WHITENSEQ_THREADS", "3", 1);
  const EvalReport threaded =
      evaluate(f.params, f.variant, f.dataset, Split::kTest, {5, 20});
  unsetenv("WHITENSEQ_THREADS");

  CHECK(base.recall == threaded.recall);
  CHECK(base.ndcg == threaded.ndcg);
  CHECK(base.users_evaluated == threaded.users_evaluated);

  setenv("WHITENSEQ_THREADS", "zero", 1);
  CHECK_THROWS_AS(evaluate(f.params, f.variant, f.dataset, Split::kTest, {5}),
                  ConfigError);
  setenv("WHITENSEQ_THREADS", "0", 1);
  CHECK_THROWS_AS(evaluate(f.params, f.variant, f.dataset, Split::kTest, {5}),
                  ConfigError);
  unsetenv("WHITENSEQ_THREADS");
}

TEST_CASE("optional diagnostics attach on request") {
  EvalFixture f = make_fixture();
  EvalOptions options;
  options.with_uniformity = true;
  options.with_conditioning = true;
  const EvalReport r =
      evaluate(f.params, f.variant, f.dataset, Split::kValidation, {10}, options);
  CHECK(r.has_uniformity);
  CHECK(r.has_conditioning);
  CHECK(std::isfinite(r.uniformity.l_align));
  CHECK(r.uniformity.pair_count_used > 0);
  CHECK(r.conditioning.condition_number >= 1.0);

  const EvalReport plain =
      evaluate(f.params, f.variant, f.dataset, Split::kValidation, {10});
  CHECK_FALSE(plain.has_uniformity);
  CHECK_FALSE(plain.has_conditioning);
}

TEST_CASE("report serialization") {
  EvalFixture f = make_fixture();
  const EvalReport r = evaluate(f.params, f.variant, f.dataset, Split::kTest, {5, 20});

  const std::string kv = to_kv(r);
  CHECK(kv.find("variant = whitenrec\n") != std::string::npos);
  CHECK(kv.find("split = test\n") != std::string::npos);
  CHECK(kv.find("recall@5 = ") != std::string::npos);
  CHECK(kv.find("ndcg@20 = ") != std::string::npos);
  CHECK(kv.find("wall_seconds") == std::string::npos);  // console-only field

  const std::string header = report_csv_header({5, 20});
  CHECK(header == "variant,split,users,params,recall@5,ndcg@5,recall@20,ndcg@20\n");
  const std::string row = report_csv_row(r);
  CHECK(std::count(row.begin(), row.end(), ',') ==
        std::count(header.begin(), header.end(), ','));
  CHECK(row.rfind("whitenrec,test,", 0) == 0);
}

TEST_CASE("split names") {
  CHECK(split_name(Split::kValidation) == "val");
  CHECK(split_name(Split::kTest) == "test");
}
