#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "whitenseq/data.hpp"
#include "whitenseq/diagnostics.hpp"
#include "whitenseq/errors.hpp"
#include "whitenseq/rng.hpp"

using namespace whitenseq;

namespace {

std::string tmp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "whitenseq_data_test";
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string tmp_file(const std::string& name) {
  return (std::filesystem::path(tmp_dir()) / name).string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

EmbeddingTable small_table() {
  EmbeddingTable t;
  t.tokens = {"apple", "pear", "plum"};
  t.matrix = Matrix(2, 3, {1.5, -2.25, 0.125, 1e-17, 3.0, -0.75});
  return t;
}

}  // namespace

TEST_CASE("embedding save/load round-trips exactly") {
  EmbeddingTable t = small_table();
  t.matrix(0, 0) = 0.1;  // not representable exactly; %.17g must still round-trip
  const std::string path = tmp_file("emb_roundtrip.tsv");
  save_embeddings(path, t);
  const EmbeddingTable back = load_embeddings(path);
  CHECK(back.tokens == t.tokens);
  CHECK(max_abs_diff(back.matrix, t.matrix) == 0.0);
}

TEST_CASE("embedding loader rejects malformed files") {
  CHECK_THROWS_AS(load_embeddings(tmp_file("missing.tsv")), IoError);

  const std::string bad_header = tmp_file("bad_header.tsv");
  write_file(bad_header, "#vectors v1 1 2\na\t1\t2\n");
  CHECK_THROWS_WITH_AS(load_embeddings(bad_header), doctest::Contains("line 1"),
                       ParseError);

  const std::string bad_float = tmp_file("bad_float.tsv");
  write_file(bad_float, "#embeddings v1 1 2\na\t1.0\tpotato\n");
  CHECK_THROWS_WITH_AS(load_embeddings(bad_float), doctest::Contains("line 2"),
                       ParseError);

  const std::string wrong_dim = tmp_file("wrong_dim.tsv");
  write_file(wrong_dim, "#embeddings v1 1 3\na\t1.0\t2.0\n");
  CHECK_THROWS_AS(load_embeddings(wrong_dim), ParseError);

  const std::string wrong_count = tmp_file("wrong_count.tsv");
  write_file(wrong_count, "#embeddings v1 2 2\na\t1.0\t2.0\n");
  CHECK_THROWS_AS(load_embeddings(wrong_count), ParseError);

  const std::string inf_value = tmp_file("inf_value.tsv");
  write_file(inf_value, "#embeddings v1 1 2\na\t1.0\tinf\n");
  CHECK_THROWS_AS(load_embeddings(inf_value), ParseError);
}

TEST_CASE("embedding loader tolerates CRLF line endings") {
  const std::string path = tmp_file("crlf.tsv");
  write_file(path, "#embeddings v1 1 2\r\na\t1.0\t2.0\r\n");
  const EmbeddingTable t = load_embeddings(path);
  CHECK(t.tokens == std::vector<std::string>{"a"});
  CHECK(t.matrix(1, 0) == 2.0);
}

TEST_CASE("sequence loading applies iterative core filtering") {
  // Occurrence counts: a 6, b 6, c 5, d 2, e 1. Items d and e drop first;
  // that shortens u4 to two interactions, so u4 drops too. The remaining
  // rows keep a, b, c at five or more occurrences each: a fixed point.
  const std::vector<std::string> known{"a", "b", "c", "d", "e"};
  const std::string path = tmp_file("core.tsv");
  write_file(path,
             "u1\ta,b,c,a,b\n"
             "u2\tb,c,a,c,b\n"
             "u3\ta,b,c,a,c\n"
             "u4\td,e,a,b,d\n");

  SequenceCorpus corpus = load_sequences(path, known, 5);
  REQUIRE(corpus.users.size() == 3);
  CHECK(corpus.user_tokens == std::vector<std::string>{"u1", "u2", "u3"});
  CHECK(corpus.item_tokens == std::vector<std::string>{"a", "b", "c"});
  CHECK(corpus.item_count == 3);
  // Dense ids map back into the caller's token list.
  CHECK(corpus.source_index == std::vector<std::size_t>{0, 1, 2});
  CHECK(corpus.users[0] == std::vector<std::size_t>{0, 1, 2, 0, 1});
  CHECK(corpus.users[1] == std::vector<std::size_t>{1, 2, 0, 2, 1});
  CHECK(corpus.users[2] == std::vector<std::size_t>{0, 1, 2, 0, 2});
}

TEST_CASE("core filtering reaches a fixed point through cascades") {
  // Every item starts under five occurrences (a 3, b 3, c 4, x 1), so the
  // first pass clears the item set and the users cascade away with it.
  const std::vector<std::string> known{"a", "b", "c", "x"};
  const std::string path = tmp_file("cascade.tsv");
  write_file(path,
             "u1\ta,b,c,c,a,b\n"
             "u2\tc,c,x,a,b\n");
  SequenceCorpus corpus = load_sequences(path, known, 5);
  CHECK(corpus.users.empty());
  CHECK(corpus.item_count == 0);
}

TEST_CASE("sequence loader rejects unknown tokens and bad shapes") {
  const std::vector<std::string> known{"a", "b"};
  const std::string unknown = tmp_file("unknown.tsv");
  write_file(unknown, "u1\ta,b,zzz,a,b\n");
  CHECK_THROWS_WITH_AS(load_sequences(unknown, known, 2),
                       doctest::Contains("zzz"), ParseError);

  const std::string no_tab = tmp_file("no_tab.tsv");
  write_file(no_tab, "u1 a,b\n");
  CHECK_THROWS_AS(load_sequences(no_tab, known, 2), ParseError);
}

TEST_CASE("sequence save/load round-trips") {
  const std::vector<std::string> known{"a", "b", "c"};
  const std::string path = tmp_file("seq_roundtrip.tsv");
  write_file(path, "u1\ta,b,c,a,b,c\nu2\tc,b,a,c,b,a\n");
  const SequenceCorpus corpus = load_sequences(path, known, 5);

  const std::string out = tmp_file("seq_saved.tsv");
  save_sequences(out, corpus);
  const SequenceCorpus back = load_sequences(out, corpus.item_tokens, 5);
  CHECK(back.users == corpus.users);
  CHECK(back.user_tokens == corpus.user_tokens);
}

TEST_CASE("id map format") {
  const std::string path = tmp_file("id_map.tsv");
  save_id_map(path, {"pear", "apple"});
  std::ifstream in(path);
  std::string line1, line2;
  std::getline(in, line1);
  std::getline(in, line2);
  CHECK(line1 == "pear\t0");
  CHECK(line2 == "apple\t1");
}

TEST_CASE("leave-one-out holds out the last two items") {
  const std::vector<std::vector<std::size_t>> seqs{{0, 1, 2, 3, 4}, {4, 3, 2}};
  const InteractionDataset ds = leave_one_out(seqs, 5);
  CHECK(ds.item_count == 5);
  REQUIRE(ds.users.size() == 2);
  CHECK(ds.users[0].train == std::vector<std::size_t>{0, 1, 2});
  CHECK(ds.users[0].val == 3);
  CHECK(ds.users[0].test == 4);
  CHECK(ds.users[1].train == std::vector<std::size_t>{4});
  CHECK(ds.users[1].val == 3);
  CHECK(ds.users[1].test == 2);
  CHECK(ds.val_users == std::vector<std::size_t>{0, 1});
  CHECK(ds.test_users == std::vector<std::size_t>{0, 1});
  CHECK(ds.cold_items.empty());

  CHECK_THROWS_AS(leave_one_out({{0, 1}}, 2), DegenerateInputError);
  CHECK_THROWS_AS(leave_one_out({{0, 9, 1}}, 5), ShapeError);  // index out of range
}

TEST_CASE("cold split structural guarantees") {
  // 40 users over 10 items, every item used as a target somewhere.
  std::vector<std::vector<std::size_t>> seqs;
  Rng rng(3);
  for (std::size_t u = 0; u < 40; ++u) {
    std::vector<std::size_t> s;
    for (std::size_t t = 0; t < 8; ++t) s.push_back(rng.below(10));
    seqs.push_back(s);
  }
  const double fraction = 0.25;
  const InteractionDataset ds = cold_start_split(seqs, 10, fraction, 17);

  CHECK(ds.cold_items.size() == 2);  // floor(0.25 * 10)
  CHECK(std::is_sorted(ds.cold_items.begin(), ds.cold_items.end()));
  const std::set<std::size_t> cold(ds.cold_items.begin(), ds.cold_items.end());

  for (const UserSplit& u : ds.users)
    for (std::size_t item : u.train) CHECK_FALSE(cold.count(item));

  REQUIRE_FALSE(ds.val_users.empty());
  REQUIRE_FALSE(ds.test_users.empty());
  for (std::size_t u : ds.val_users) {
    CHECK(cold.count(ds.users[u].val));
    CHECK_FALSE(ds.users[u].train.empty());
  }
  for (std::size_t u : ds.test_users) CHECK(cold.count(ds.users[u].test));

  // Held-out items are untouched relative to the raw sequences.
  for (std::size_t u = 0; u < seqs.size(); ++u) {
    CHECK(ds.users[u].val == seqs[u][seqs[u].size() - 2]);
    CHECK(ds.users[u].test == seqs[u].back());
  }

  // Same seed, same split; different seed, different cold set somewhere.
  const InteractionDataset again = cold_start_split(seqs, 10, fraction, 17);
  CHECK(again.cold_items == ds.cold_items);
  CHECK(again.val_users == ds.val_users);
  bool any_diff = false;
  for (std::uint64_t seed = 0; seed < 20 && !any_diff; ++seed)
    any_diff = cold_start_split(seqs, 10, fraction, seed).cold_items != ds.cold_items;
  CHECK(any_diff);
}

TEST_CASE("cold split input validation") {
  const std::vector<std::vector<std::size_t>> seqs{{0, 1, 2, 3, 0, 1, 2, 3}};
  CHECK_THROWS_AS(cold_start_split(seqs, 4, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(cold_start_split(seqs, 4, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(cold_start_split(seqs, 4, 0.1, 1), ConfigError);  // floor = 0
}

TEST_CASE("cold split rejects splits with no usable eval users") {
  // Item 1 is never a val or test target, so a seed whose single cold
  // item is 1 leaves nobody to evaluate.
  const std::vector<std::vector<std::size_t>> seqs{
      {1, 1, 1, 0, 0}, {1, 1, 1, 0, 0}, {1, 1, 1, 0, 0}};
  bool saw_throw = false, saw_ok = false;
  for (std::uint64_t seed = 0; seed < 64 && !(saw_throw && saw_ok); ++seed) {
    try {
      const InteractionDataset ds = cold_start_split(seqs, 2, 0.5, seed);
      CHECK(ds.cold_items == std::vector<std::size_t>{0});
      saw_ok = true;
    } catch (const DegenerateInputError&) {
      saw_throw = true;
    }
  }
  CHECK(saw_throw);
  CHECK(saw_ok);
}

TEST_CASE("anisotropic generator hits its cosine target") {
  for (double target : {0.5, 0.7, 0.8, 0.9}) {
    const Matrix x = gen_anisotropic_embeddings(300, 32, target, 5);
    CHECK(x.rows() == 32);
    CHECK(x.cols() == 300);
    CHECK(std::abs(mean_pairwise_cosine(x) - target) <= 0.01);
  }
  // Target zero: pure noise already satisfies the tolerance band.
  const Matrix iso = gen_anisotropic_embeddings(300, 32, 0.0, 5);
  CHECK(std::abs(mean_pairwise_cosine(iso)) <= 0.02);
}

TEST_CASE("anisotropic generator is deterministic and validates input") {
  const Matrix a = gen_anisotropic_embeddings(100, 16, 0.8, 9);
  const Matrix b = gen_anisotropic_embeddings(100, 16, 0.8, 9);
  CHECK(max_abs_diff(a, b) == 0.0);

  CHECK_THROWS_AS(gen_anisotropic_embeddings(100, 3, 0.5, 1), ConfigError);
  CHECK_THROWS_AS(gen_anisotropic_embeddings(8, 16, 0.5, 1), ConfigError);
  CHECK_THROWS_AS(gen_anisotropic_embeddings(100, 16, 0.99, 1), ConfigError);
  CHECK_THROWS_AS(gen_anisotropic_embeddings(100, 16, -0.1, 1), ConfigError);
}

TEST_CASE("sequence generator produces valid, seeded draws") {
  const Matrix emb = gen_anisotropic_embeddings(50, 8, 0.6, 2);
  SequenceGenConfig cfg;
  cfg.users = 30;
  cfg.mean_len = 12.0;
  const auto seqs = gen_sequences(emb, cfg, 4);
  REQUIRE(seqs.size() == 30);
  for (const auto& s : seqs) {
    CHECK(s.size() >= 5);
    CHECK(s.size() <= 50);
    for (std::size_t item : s) CHECK(item < 50);
  }
  CHECK(gen_sequences(emb, cfg, 4) == seqs);
  CHECK(gen_sequences(emb, cfg, 5) != seqs);

  SequenceGenConfig bad = cfg;
  bad.mean_len = 2.0;
  CHECK_THROWS_AS(gen_sequences(emb, bad, 1), ConfigError);
  bad = cfg;
  bad.users = 0;
  CHECK_THROWS_AS(gen_sequences(emb, bad, 1), ConfigError);
}

TEST_CASE("generated sequences carry learnable preference signal") {
  // With a sharp choice distribution, a user's items should concentrate
  // on a small subset rather than spread uniformly.
  const Matrix emb = gen_anisotropic_embeddings(100, 16, 0.8, 6);
  SequenceGenConfig cfg;
  cfg.users = 20;
  cfg.mean_len = 30.0;
  cfg.beta = 8.0;
  const auto seqs = gen_sequences(emb, cfg, 8);
  double mean_distinct_share = 0.0;
  for (const auto& s : seqs) {
    const std::set<std::size_t> distinct(s.begin(), s.end());
    mean_distinct_share +=
        static_cast<double>(distinct.size()) / static_cast<double>(s.size());
  }
  mean_distinct_share /= static_cast<double>(seqs.size());
  // Uniform sampling of ~30 out of 100 items would give a share near 0.86.
  CHECK(mean_distinct_share < 0.8);
}
