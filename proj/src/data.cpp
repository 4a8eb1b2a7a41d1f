#include "whitenseq/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "whitenseq/diagnostics.hpp"
#include "whitenseq/errors.hpp"
#include "whitenseq/rng.hpp"

namespace whitenseq {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t line_no,
                             const std::string& what) {
  throw ParseError(path + ": line " + std::to_string(line_no) + ": " + what);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path + " for reading");
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return out;
}

// Reads a line with the trailing \r of CRLF files stripped.
bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

}  // namespace

EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in = open_input(path);
  std::string line;
  if (!read_line(in, line)) parse_fail(path, 1, "missing header");

  std::istringstream header(line);
  std::string tag, version;
  std::size_t count = 0, dim = 0;
  header >> tag >> version >> count >> dim;
  if (tag != "#embeddings" || version != "v1" || header.fail()) {
    parse_fail(path, 1, "expected '#embeddings v1 <count> <dim>'");
  }
  if (count == 0 || dim == 0) parse_fail(path, 1, "count and dim must be positive");

  EmbeddingTable table;
  table.tokens.reserve(count);
  table.matrix = Matrix(dim, count);

  std::size_t line_no = 1;
  std::size_t row = 0;
  while (read_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (row >= count) parse_fail(path, line_no, "more rows than header declared");
    const std::vector<std::string> fields = split(line, '\t');
    if (fields.size() != dim + 1) {
      parse_fail(path, line_no,
                 "expected token + " + std::to_string(dim) + " values, got " +
                     std::to_string(fields.size() ? fields.size() - 1 : 0));
    }
    if (fields[0].empty()) parse_fail(path, line_no, "empty item token");
    table.tokens.push_back(fields[0]);
    for (std::size_t i = 0; i < dim; ++i) {
      char* end = nullptr;
      const double v = std::strtod(fields[i + 1].c_str(), &end);
      if (end == fields[i + 1].c_str() || *end != '\0') {
        parse_fail(path, line_no, "bad float '" + fields[i + 1] + "'");
      }
      if (!std::isfinite(v)) {
        parse_fail(path, line_no, "non-finite value '" + fields[i + 1] + "'");
      }
      table.matrix(i, row) = v;
    }
    ++row;
  }
  if (row == 0) parse_fail(path, line_no, "no embedding rows");
  if (row != count) {
    parse_fail(path, line_no,
               "header declared " + std::to_string(count) + " rows, found " +
                   std::to_string(row));
  }
  return table;
}

void save_embeddings(const std::string& path, const EmbeddingTable& table) {
  const std::size_t n = table.tokens.size();
  if (table.matrix.cols() != n) {
    throw ShapeError("save_embeddings: token count does not match matrix columns");
  }
  std::ofstream out = open_output(path);
  out << "#embeddings v1 " << n << ' ' << table.matrix.rows() << '\n';
  for (std::size_t j = 0; j < n; ++j) {
    out << table.tokens[j];
    for (std::size_t i = 0; i < table.matrix.rows(); ++i) {
      out << '\t' << fmt_double(table.matrix(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

SequenceCorpus load_sequences(const std::string& path,
                              const std::vector<std::string>& known_item_tokens,
                              std::size_t min_length) {
  std::unordered_map<std::string, std::size_t> token_to_source;
  token_to_source.reserve(known_item_tokens.size());
  for (std::size_t i = 0; i < known_item_tokens.size(); ++i) {
    token_to_source.emplace(known_item_tokens[i], i);
  }

  std::ifstream in = open_input(path);
  std::vector<std::string> user_tokens;
  std::vector<std::vector<std::size_t>> raw;  // source indices
  std::string line;
  std::size_t line_no = 0;
  while (read_line(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) parse_fail(path, line_no, "missing tab separator");
    const std::string user = line.substr(0, tab);
    if (user.empty()) parse_fail(path, line_no, "empty user token");
    std::vector<std::size_t> items;
    for (const std::string& tok : split(line.substr(tab + 1), ',')) {
      if (tok.empty()) parse_fail(path, line_no, "empty item token");
      const auto it = token_to_source.find(tok);
      if (it == token_to_source.end()) {
        parse_fail(path, line_no, "unknown item token '" + tok + "'");
      }
      items.push_back(it->second);
    }
    if (items.empty()) parse_fail(path, line_no, "user with no items");
    user_tokens.push_back(user);
    raw.push_back(std::move(items));
  }

  // Iterated 5-core: drop under-threshold items, then under-threshold
  // users, until nothing changes.
  std::vector<std::size_t> item_freq(known_item_tokens.size(), 0);
  bool changed = true;
  while (changed) {
    changed = false;
    std::fill(item_freq.begin(), item_freq.end(), 0);
    for (const auto& seq : raw) {
      for (std::size_t item : seq) ++item_freq[item];
    }
    for (auto& seq : raw) {
      const std::size_t before = seq.size();
      std::erase_if(seq, [&](std::size_t item) { return item_freq[item] < min_length; });
      if (seq.size() != before) changed = true;
    }
    for (std::size_t u = raw.size(); u-- > 0;) {
      if (raw[u].size() < min_length) {
        raw.erase(raw.begin() + static_cast<std::ptrdiff_t>(u));
        user_tokens.erase(user_tokens.begin() + static_cast<std::ptrdiff_t>(u));
        changed = true;
      }
    }
  }

  // Re-compact surviving items densely, ordered by source index.
  std::vector<std::size_t> survivors;
  {
    std::vector<bool> seen(known_item_tokens.size(), false);
    for (const auto& seq : raw) {
      for (std::size_t item : seq) seen[item] = true;
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
      if (seen[i]) survivors.push_back(i);
    }
  }
  std::vector<std::size_t> dense_of_source(known_item_tokens.size(), 0);
  for (std::size_t k = 0; k < survivors.size(); ++k) dense_of_source[survivors[k]] = k;

  SequenceCorpus corpus;
  corpus.user_tokens = std::move(user_tokens);
  corpus.item_count = survivors.size();
  corpus.source_index = survivors;
  corpus.item_tokens.reserve(survivors.size());
  for (std::size_t src : survivors) corpus.item_tokens.push_back(known_item_tokens[src]);
  corpus.users.reserve(raw.size());
  for (auto& seq : raw) {
    for (std::size_t& item : seq) item = dense_of_source[item];
    corpus.users.push_back(std::move(seq));
  }
  return corpus;
}

void save_sequences(const std::string& path, const SequenceCorpus& corpus) {
  if (corpus.users.size() != corpus.user_tokens.size()) {
    throw ShapeError("save_sequences: user token count mismatch");
  }
  std::ofstream out = open_output(path);
  for (std::size_t u = 0; u < corpus.users.size(); ++u) {
    out << corpus.user_tokens[u] << '\t';
    const auto& seq = corpus.users[u];
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) out << ',';
      out << corpus.item_tokens.at(seq[i]);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

void save_id_map(const std::string& path, const std::vector<std::string>& item_tokens) {
  std::ofstream out = open_output(path);
  for (std::size_t i = 0; i < item_tokens.size(); ++i) {
    out << item_tokens[i] << '\t' << i << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

namespace {

void check_indices(const std::vector<std::vector<std::size_t>>& sequences,
                   std::size_t item_count) {
  for (const auto& seq : sequences) {
    for (std::size_t item : seq) {
      if (item >= item_count) {
        throw ShapeError("item index " + std::to_string(item) +
                         " out of range for item_count " + std::to_string(item_count));
      }
    }
  }
}

}  // namespace

InteractionDataset leave_one_out(const std::vector<std::vector<std::size_t>>& sequences,
                                 std::size_t item_count) {
  check_indices(sequences, item_count);
  InteractionDataset ds;
  ds.item_count = item_count;
  ds.users.reserve(sequences.size());
  for (std::size_t u = 0; u < sequences.size(); ++u) {
    const auto& seq = sequences[u];
    if (seq.size() < 3) {
      throw DegenerateInputError("leave_one_out: user " + std::to_string(u) +
                                 " has only " + std::to_string(seq.size()) +
                                 " interactions (need 3)");
    }
    UserSplit split;
    split.train.assign(seq.begin(), seq.end() - 2);
    split.val = seq[seq.size() - 2];
    split.test = seq.back();
    ds.users.push_back(std::move(split));
    ds.val_users.push_back(u);
    ds.test_users.push_back(u);
  }
  return ds;
}

InteractionDataset cold_start_split(const std::vector<std::vector<std::size_t>>& sequences,
                                    std::size_t item_count, double fraction,
                                    std::uint64_t seed) {
  check_indices(sequences, item_count);
  if (fraction <= 0.0 || fraction >= 1.0) {
    throw ConfigError("cold_start_split: fraction must be in (0, 1)");
  }
  const std::size_t cold_count =
      static_cast<std::size_t>(fraction * static_cast<double>(item_count));
  if (cold_count == 0) {
    throw ConfigError("cold_start_split: floor(fraction * item_count) is zero");
  }

  std::vector<std::size_t> perm(item_count);
  for (std::size_t i = 0; i < item_count; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  std::vector<std::size_t> cold(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(cold_count));
  std::sort(cold.begin(), cold.end());
  std::vector<bool> is_cold(item_count, false);
  for (std::size_t item : cold) is_cold[item] = true;

  InteractionDataset ds;
  ds.item_count = item_count;
  ds.cold_items = std::move(cold);
  ds.users.reserve(sequences.size());
  for (std::size_t u = 0; u < sequences.size(); ++u) {
    const auto& seq = sequences[u];
    if (seq.size() < 3) {
      throw DegenerateInputError("cold_start_split: user " + std::to_string(u) +
                                 " has only " + std::to_string(seq.size()) +
                                 " interactions (need 3)");
    }
    UserSplit split;
    for (std::size_t i = 0; i + 2 < seq.size(); ++i) {
      if (!is_cold[seq[i]]) split.train.push_back(seq[i]);
    }
    split.val = seq[seq.size() - 2];
    split.test = seq.back();
    if (is_cold[split.val] && !split.train.empty()) ds.val_users.push_back(u);
    if (is_cold[split.test]) ds.test_users.push_back(u);
    ds.users.push_back(std::move(split));
  }
  if (ds.val_users.empty() || ds.test_users.empty()) {
    throw DegenerateInputError("cold_start_split: no user retains a cold target");
  }
  return ds;
}

Matrix gen_anisotropic_embeddings(std::size_t n, std::size_t d,
                                  double target_cosine, std::uint64_t seed) {
  if (d < 4) throw ConfigError("gen_anisotropic_embeddings: need d >= 4");
  if (n < d) throw ConfigError("gen_anisotropic_embeddings: need n >= d");
  if (target_cosine < 0.0 || target_cosine > 0.98) {
    throw ConfigError("gen_anisotropic_embeddings: target_cosine outside [0, 0.98]");
  }

  Rng rng(seed);
  std::vector<double> u(d);
  double u_norm_sq = 0.0;
  for (double& v : u) {
    v = rng.normal();
    u_norm_sq += v * v;
  }
  const double inv_u = 1.0 / std::sqrt(u_norm_sq);
  for (double& v : u) v *= inv_u;

  Matrix noise(d, n);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < n; ++j) noise(i, j) = rng.normal();
  }

  auto assemble = [&](double c) {
    Matrix x = noise;
    for (std::size_t i = 0; i < d; ++i) {
      const double offset = c * u[i];
      for (std::size_t j = 0; j < n; ++j) x(i, j) += offset;
    }
    return x;
  };

  constexpr double kTolerance = 0.01;
  // The offset scale behaves like cos ~ c^2 / (c^2 + d); bracket, then bisect.
  double lo = 0.0;
  {
    Matrix x = assemble(lo);
    const double measured = mean_pairwise_cosine(x);
    if (std::abs(measured - target_cosine) <= kTolerance) return x;
    if (measured > target_cosine) {
      throw NumericError("gen_anisotropic_embeddings: noise alone already above target");
    }
  }
  double hi = std::sqrt(static_cast<double>(d));
  int expansions = 0;
  while (true) {
    Matrix x = assemble(hi);
    const double measured = mean_pairwise_cosine(x);
    if (std::abs(measured - target_cosine) <= kTolerance) return x;
    if (measured > target_cosine) break;
    hi *= 2.0;
    if (++expansions > 50) {
      throw NumericError("gen_anisotropic_embeddings: failed to bracket target");
    }
  }
  for (int step = 0; step < 50; ++step) {
    const double mid = 0.5 * (lo + hi);
    Matrix x = assemble(mid);
    const double measured = mean_pairwise_cosine(x);
    if (std::abs(measured - target_cosine) <= kTolerance) return x;
    (measured < target_cosine ? lo : hi) = mid;
  }
  throw NumericError("gen_anisotropic_embeddings: calibration failed after 50 bisection steps");
}

std::vector<std::vector<std::size_t>> gen_sequences(const Matrix& embeddings,
                                                    const SequenceGenConfig& config,
                                                    std::uint64_t seed) {
  if (config.mean_len < 5.0) throw ConfigError("gen_sequences: mean_len must be >= 5");
  if (config.users == 0) throw ConfigError("gen_sequences: users must be positive");
  const std::size_t d = embeddings.rows();
  const std::size_t n = embeddings.cols();
  if (n < 2) throw DegenerateInputError("gen_sequences: need at least 2 items");

  // Mean direction of the corpus; the signal lives in its orthogonal
  // complement, where raw anisotropic features are weakest.
  std::vector<double> u_hat = row_means(embeddings);
  double norm_sq = 0.0;
  for (double v : u_hat) norm_sq += v * v;
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& v : u_hat) v *= inv;
  }

  // Unit residuals, one item per row for contiguous dot products.
  Matrix residual(n, d);
  for (std::size_t j = 0; j < n; ++j) {
    double proj = 0.0;
    for (std::size_t i = 0; i < d; ++i) proj += u_hat[i] * embeddings(i, j);
    double* row = residual.row(j);
    double r_norm_sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      row[i] = embeddings(i, j) - proj * u_hat[i];
      r_norm_sq += row[i] * row[i];
    }
    if (r_norm_sq > 1e-24) {
      const double inv = 1.0 / std::sqrt(r_norm_sq);
      for (std::size_t i = 0; i < d; ++i) row[i] *= inv;
    }
  }

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> sequences;
  sequences.reserve(config.users);
  std::vector<double> query(d), probs(n);
  for (std::size_t user = 0; user < config.users; ++user) {
    std::vector<double> latent(d);
    double proj = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      latent[i] = rng.normal();
      proj += latent[i] * u_hat[i];
    }
    double latent_norm_sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      latent[i] -= proj * u_hat[i];
      latent_norm_sq += latent[i] * latent[i];
    }
    const double inv = latent_norm_sq > 0.0 ? 1.0 / std::sqrt(latent_norm_sq) : 0.0;
    for (double& v : latent) v *= inv;

    const int len = std::clamp(rng.poisson(config.mean_len), 5, 50);
    std::vector<std::size_t> seq;
    seq.reserve(static_cast<std::size_t>(len));
    for (int t = 0; t < len; ++t) {
      for (std::size_t i = 0; i < d; ++i) {
        query[i] = latent[i];
        if (!seq.empty()) query[i] += config.gamma * residual(seq.back(), i);
      }
      double max_logit = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double logit = 0.0;
        const double* row = residual.row(j);
        for (std::size_t i = 0; i < d; ++i) logit += query[i] * row[i];
        probs[j] = config.beta * logit;
        max_logit = std::max(max_logit, probs[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        probs[j] = std::exp(probs[j] - max_logit);
        total += probs[j];
      }
      const double draw = rng.uniform() * total;
      double cumulative = 0.0;
      std::size_t pick = n - 1;
      for (std::size_t j = 0; j < n; ++j) {
        cumulative += probs[j];
        if (draw < cumulative) {
          pick = j;
          break;
        }
      }
      seq.push_back(pick);
    }
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

}  // namespace whitenseq
