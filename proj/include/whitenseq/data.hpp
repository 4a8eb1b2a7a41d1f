#pragma once

#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

#include "whitenseq/matrix.hpp"

namespace whitenseq {

// Text embedding table: column j of `matrix` is the vector for tokens[j].
struct EmbeddingTable {
  std::vector<std::string> tokens;
  Matrix matrix;  // d x n
};

// File format: "#embeddings v1 <count> <dim>" header, then one
// tab-separated line per item: token, dim floats. Floats are written
// with %.17g so save/load round-trips are exact.
EmbeddingTable load_embeddings(const std::string& path);
void save_embeddings(const std::string& path, const EmbeddingTable& table);

// User sequences after 5-core filtering, with items re-compacted to
// dense indices. source_index maps a dense index back into the token
// list the loader was given (use it to subset the embedding matrix).
struct SequenceCorpus {
  std::vector<std::vector<std::size_t>> users;
  std::vector<std::string> user_tokens;
  std::vector<std::string> item_tokens;
  std::vector<std::size_t> source_index;
  std::size_t item_count = 0;
};

// One user per line: "<user_token>\t<item_token>,<item_token>,...".
// Tokens must come from known_item_tokens. Users and items with fewer
// than min_length interactions are dropped iteratively to a fixed point.
SequenceCorpus load_sequences(const std::string& path,
                              const std::vector<std::string>& known_item_tokens,
                              std::size_t min_length = 5);
void save_sequences(const std::string& path, const SequenceCorpus& corpus);
void save_id_map(const std::string& path, const std::vector<std::string>& item_tokens);

struct UserSplit {
  std::vector<std::size_t> train;  // chronological prefix
  std::size_t val = 0;             // second-to-last item
  std::size_t test = 0;            // last item
};

struct InteractionDataset {
  std::size_t item_count = 0;
  std::vector<UserSplit> users;
  std::vector<std::size_t> val_users;   // users eligible for validation eval
  std::vector<std::size_t> test_users;  // users eligible for test eval
  std::vector<std::size_t> cold_items;  // sorted; empty in the warm setting
};

// Warm split: last item held out for test, second-to-last for validation.
// Every sequence must have length >= 3.
InteractionDataset leave_one_out(const std::vector<std::vector<std::size_t>>& sequences,
                                 std::size_t item_count);

// Cold split: floor(fraction * item_count) items are drawn uniformly with
// the given seed, their occurrences are deleted from every training
// prefix, and only users whose held-out target is cold stay in the eval
// lists. Validation additionally requires a non-empty training prefix;
// test-time input is prefix + validation item, which is never empty.
InteractionDataset cold_start_split(const std::vector<std::vector<std::size_t>>& sequences,
                                    std::size_t item_count, double fraction,
                                    std::uint64_t seed);

// Columns x_i = c*u + w_i for a fixed unit direction u and standard
// normal w_i; c is calibrated by bisection until the measured mean
// pairwise cosine lands within 0.01 of target_cosine.
Matrix gen_anisotropic_embeddings(std::size_t n, std::size_t d,
                                  double target_cosine, std::uint64_t seed);

struct SequenceGenConfig {
  std::size_t users = 0;
  double mean_len = 10.0;
  double beta = 4.0;   // inverse temperature of the item choice
  double gamma = 0.5;  // weight of the previous item's residual
};

// Autoregressive sampler whose signal lives in the residual space
// orthogonal to the embeddings' mean direction: each user draws a latent
// there and picks the next item with probability proportional to
// exp(beta * <latent + gamma * residual(prev), residual(item)>).
// Lengths are Poisson around mean_len, clamped to [5, 50].
std::vector<std::vector<std::size_t>> gen_sequences(const Matrix& embeddings,
                                                    const SequenceGenConfig& config,
                                                    std::uint64_t seed);

}  // namespace whitenseq
