#include "cli/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cli/runconfig.hpp"
#include "cli/svg.hpp"
#include "whitenseq/checkpoint.hpp"
#include "whitenseq/data.hpp"
#include "whitenseq/diagnostics.hpp"
#include "whitenseq/errors.hpp"
#include "whitenseq/eval.hpp"
#include "whitenseq/train.hpp"
#include "whitenseq/whitening.hpp"

namespace whitenseq::cli {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void make_out_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--out-dir must not be empty");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << content;
  if (!out) throw IoError("write failed for " + path);
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

std::string token(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%05zu", prefix, i);
  return buf;
}

struct LoadedData {
  EmbeddingTable table;
  SequenceCorpus corpus;
  Matrix text;  // d x |I|, aligned with the dense item ids
  InteractionDataset dataset;
};

LoadedData load_dataset(const std::string& embeddings_path,
                        const std::string& sequences_path, const std::string& mode,
                        double cold_fraction, std::uint64_t cold_seed,
                        std::size_t min_interactions) {
  LoadedData data;
  data.table = load_embeddings(embeddings_path);
  data.corpus = load_sequences(sequences_path, data.table.tokens, min_interactions);
  if (data.corpus.users.empty()) {
    throw DegenerateInputError("no users survive " +
                               std::to_string(min_interactions) + "-core filtering");
  }
  const std::size_t d = data.table.matrix.rows();
  data.text = Matrix(d, data.corpus.item_count);
  for (std::size_t k = 0; k < data.corpus.item_count; ++k) {
    const std::size_t src = data.corpus.source_index[k];
    for (std::size_t i = 0; i < d; ++i) data.text(i, k) = data.table.matrix(i, src);
  }
  if (mode == "warm") {
    data.dataset = leave_one_out(data.corpus.users, data.corpus.item_count);
  } else if (mode == "cold") {
    data.dataset = cold_start_split(data.corpus.users, data.corpus.item_count,
                                    cold_fraction, cold_seed);
  } else {
    throw ConfigError("dataset must be 'warm' or 'cold', got '" + mode + "'");
  }
  return data;
}

EncoderVariant variant_from_config(const RunConfig& cfg) {
  EncoderVariant variant;
  variant.tag = variant_from_name(cfg.get_string("variant"));
  variant.method = whitening_method_from_name(cfg.get_string("method", "zca"));
  variant.relaxed_groups = static_cast<std::size_t>(cfg.get_int("groups", 2));
  variant.epsilon = cfg.get_double("epsilon", 1e-5);
  variant.head_depth = static_cast<std::size_t>(cfg.get_int("head_depth", 2));
  const std::string combine = cfg.get_string("combine", "sum");
  if (combine == "sum") {
    variant.combine = Combine::kSum;
  } else if (combine == "concat") {
    variant.combine = Combine::kConcat;
  } else {
    throw ConfigError("combine must be 'sum' or 'concat', got '" + combine + "'");
  }
  validate(variant);
  return variant;
}

TargetStyle target_style_from_name(const std::string& name) {
  if (name == "all") return TargetStyle::kAllPositions;
  if (name == "last") return TargetStyle::kLastOnly;
  throw ConfigError("target_style must be 'all' or 'last', got '" + name + "'");
}

}  // namespace

void cmd_synth(const SynthOptions& opt) {
  make_out_dir(opt.out_dir);
  const Matrix embeddings =
      gen_anisotropic_embeddings(opt.items, opt.dim, opt.target_cosine, opt.seed);

  EmbeddingTable table;
  table.matrix = embeddings;
  for (std::size_t i = 0; i < opt.items; ++i) table.tokens.push_back(token("i", i));

  SequenceGenConfig gen;
  gen.users = opt.users;
  gen.mean_len = opt.mean_len;
  gen.beta = opt.beta;
  gen.gamma = opt.gamma;
  SequenceCorpus corpus;
  corpus.users = gen_sequences(embeddings, gen, opt.seed + 1);
  corpus.item_tokens = table.tokens;
  corpus.item_count = opt.items;
  for (std::size_t u = 0; u < opt.users; ++u) {
    corpus.user_tokens.push_back(token("u", u));
    corpus.source_index.push_back(u);
  }

  const double measured = mean_pairwise_cosine(embeddings);
  save_embeddings(join_path(opt.out_dir, "embeddings.tsv"), table);
  save_sequences(join_path(opt.out_dir, "sequences.tsv"), corpus);
  save_id_map(join_path(opt.out_dir, "id_map.tsv"), table.tokens);

  RunConfig resolved;
  resolved.set("command", "synth");
  resolved.set("items", std::to_string(opt.items));
  resolved.set("users", std::to_string(opt.users));
  resolved.set("dim", std::to_string(opt.dim));
  resolved.set("target_cosine", fmt_double(opt.target_cosine));
  resolved.set("mean_len", fmt_double(opt.mean_len));
  resolved.set("beta", fmt_double(opt.beta));
  resolved.set("gamma", fmt_double(opt.gamma));
  resolved.set("seed", std::to_string(opt.seed));
  resolved.set("out_dir", opt.out_dir);
  write_text(join_path(opt.out_dir, "resolved_config.txt"), resolved.resolved_text());

  std::string manifest;
  manifest += "items = " + std::to_string(opt.items) + "\n";
  manifest += "users = " + std::to_string(opt.users) + "\n";
  manifest += "dim = " + std::to_string(opt.dim) + "\n";
  manifest += "target_cosine = " + fmt_double(opt.target_cosine) + "\n";
  manifest += "mean_cosine = " + fmt_double(measured) + "\n";
  manifest += "mean_len = " + fmt_double(opt.mean_len) + "\n";
  manifest += "seed = " + std::to_string(opt.seed) + "\n";
  write_text(join_path(opt.out_dir, "manifest.txt"), manifest);

  std::cout << "synth: " << opt.items << " items, " << opt.users
            << " users, mean cosine " << fmt_double(measured) << "\n";
}

void cmd_diagnose(const DiagnoseOptions& opt) {
  make_out_dir(opt.out_dir);
  const EmbeddingTable table = load_embeddings(opt.embeddings);

  const double mean_cos = mean_pairwise_cosine(table.matrix);
  const SpectrumReport spectrum = singular_spectrum(table.matrix);
  const ConditioningReport conditioning = condition_number(table.matrix);
  std::vector<double> grid;
  for (int i = 0; i <= 40; ++i) grid.push_back(static_cast<double>(i) / 20.0 - 1.0);
  const auto cdf = cosine_cdf(table.matrix, grid);

  std::string kv;
  kv += "mean_cosine = " + fmt_double(mean_cos) + "\n";
  kv += to_kv(conditioning);
  kv += to_kv(spectrum);
  write_text(join_path(opt.out_dir, "diagnostics.txt"), kv);
  write_text(join_path(opt.out_dir, "spectrum.csv"), spectrum_csv(spectrum));
  write_text(join_path(opt.out_dir, "cdf.csv"), cdf_csv(cdf));

  if (opt.svg) {
    std::vector<double> idx, vals, thresholds, fractions;
    for (std::size_t i = 0; i < spectrum.normalized_singular_values.size(); ++i) {
      idx.push_back(static_cast<double>(i));
      vals.push_back(spectrum.normalized_singular_values[i]);
    }
    for (const auto& [t, f] : cdf) {
      thresholds.push_back(t);
      fractions.push_back(f);
    }
    write_text(join_path(opt.out_dir, "spectrum.svg"),
               line_chart("Normalized singular values", "index", "value", idx, vals));
    write_text(join_path(opt.out_dir, "cdf.svg"),
               line_chart("Pairwise cosine CDF", "cosine threshold", "fraction",
                          thresholds, fractions));
  }

  RunConfig resolved;
  resolved.set("command", "diagnose");
  resolved.set("embeddings", opt.embeddings);
  resolved.set("svg", opt.svg ? "true" : "false");
  resolved.set("out_dir", opt.out_dir);
  write_text(join_path(opt.out_dir, "resolved_config.txt"), resolved.resolved_text());

  std::cout << "diagnose: mean cosine " << fmt_double(mean_cos) << ", condition number "
            << fmt_double(conditioning.condition_number) << "\n";
}

void cmd_whiten(const WhitenOptions& opt) {
  make_out_dir(opt.out_dir);
  const WhiteningMethod method = whitening_method_from_name(opt.method);
  const EmbeddingTable table = load_embeddings(opt.embeddings);
  const std::size_t d = table.matrix.rows();
  if (opt.groups == 0 || d % opt.groups != 0) {
    std::string divisors;
    for (std::size_t g = 1; g <= d; ++g) {
      if (d % g == 0) {
        if (!divisors.empty()) divisors += ", ";
        divisors += std::to_string(g);
      }
    }
    throw ConfigError("groups " + std::to_string(opt.groups) + " does not divide dim " +
                      std::to_string(d) + " (valid: " + divisors + ")");
  }

  const WhitenedEmbeddings result = whiten(table.matrix, method, opt.groups, opt.epsilon);
  EmbeddingTable out_table;
  out_table.tokens = table.tokens;
  out_table.matrix = result.matrix;
  save_embeddings(join_path(opt.out_dir, "whitened.tsv"), out_table);

  const WhitenVerification verification =
      verify_whitening(result.transform, result.matrix, 1e-8);
  std::string stats;
  stats += "method = " + std::string(whitening_method_name(method)) + "\n";
  stats += "groups = " + std::to_string(opt.groups) + "\n";
  stats += "epsilon = " + fmt_double(opt.epsilon) + "\n";
  for (std::size_t g = 0; g < verification.group_deviation.size(); ++g) {
    stats += "group" + std::to_string(g) +
             "_max_deviation = " + fmt_double(verification.group_deviation[g]) + "\n";
  }
  for (const CrossGroupBlock& block : verification.cross_blocks) {
    stats += "cross_" + std::to_string(block.group_a) + "_" +
             std::to_string(block.group_b) +
             "_max_abs_cov = " + fmt_double(block.max_abs_covariance) + "\n";
  }
  stats += "tolerance = " + fmt_double(verification.tolerance) + "\n";
  stats += "pass = " + std::string(verification.pass ? "true" : "false") + "\n";
  write_text(join_path(opt.out_dir, "stats.txt"), stats);

  RunConfig resolved;
  resolved.set("command", "whiten");
  resolved.set("embeddings", opt.embeddings);
  resolved.set("method", whitening_method_name(method));
  resolved.set("groups", std::to_string(opt.groups));
  resolved.set("epsilon", fmt_double(opt.epsilon));
  resolved.set("out_dir", opt.out_dir);
  write_text(join_path(opt.out_dir, "resolved_config.txt"), resolved.resolved_text());

  std::cout << "whiten: wrote " << join_path(opt.out_dir, "whitened.tsv") << "\n";
}

void cmd_train(const TrainOptions& opt) {
  RunConfig cfg = RunConfig::from_file(opt.config_path);
  cfg.merge_overrides(opt.overrides);
  cfg.reject_unknown({"embeddings", "sequences", "dataset", "cold_fraction",
                      "cold_seed", "min_interactions", "variant", "method", "groups",
                      "epsilon", "head_depth", "combine", "learning_rate",
                      "weight_decay", "dropout_rate", "batch_size", "max_seq_len",
                      "d_model", "blocks", "heads", "max_epochs", "patience", "seed",
                      "target_style"});
  make_out_dir(opt.out_dir);

  const EncoderVariant variant = variant_from_config(cfg);
  TrainConfig config;
  config.learning_rate = cfg.get_double("learning_rate", config.learning_rate);
  config.weight_decay = cfg.get_double("weight_decay", config.weight_decay);
  config.dropout_rate = cfg.get_double("dropout_rate", config.dropout_rate);
  config.batch_size = static_cast<std::size_t>(cfg.get_int("batch_size", 256));
  config.max_seq_len = static_cast<std::size_t>(cfg.get_int("max_seq_len", 50));
  config.d_model = static_cast<std::size_t>(cfg.get_int("d_model", 64));
  config.blocks = static_cast<std::size_t>(cfg.get_int("blocks", 2));
  config.heads = static_cast<std::size_t>(cfg.get_int("heads", 2));
  config.max_epochs = static_cast<std::size_t>(cfg.get_int("max_epochs", 200));
  config.patience = static_cast<std::size_t>(cfg.get_int("patience", 10));
  config.seed = cfg.get_seed("seed");  // stochastic command: seed is mandatory
  config.target_style = target_style_from_name(cfg.get_string("target_style", "all"));
  validate(config);

  const std::string mode = cfg.get_string("dataset", "warm");
  const double cold_fraction = cfg.get_double("cold_fraction", 0.15);
  const std::uint64_t cold_seed = mode == "cold" ? cfg.get_seed("cold_seed") : 0;
  const std::size_t min_interactions =
      static_cast<std::size_t>(cfg.get_int("min_interactions", 5));
  LoadedData data = load_dataset(cfg.get_string("embeddings"),
                                 cfg.get_string("sequences"), mode, cold_fraction,
                                 cold_seed, min_interactions);

  const Matrix* frozen_text = uses_text(variant.tag) ? &data.text : nullptr;
  const TrainResult result = train(data.dataset, variant, config, frozen_text);

  save_checkpoint(join_path(opt.out_dir, "checkpoint.bin"), variant, result.params);
  write_text(join_path(opt.out_dir, "history.csv"), history_csv(result.history));
  save_id_map(join_path(opt.out_dir, "id_map.tsv"), data.corpus.item_tokens);

  RunConfig resolved = cfg;
  resolved.set("command", "train");
  resolved.set("dataset", mode);
  resolved.set("out_dir", opt.out_dir);
  write_text(join_path(opt.out_dir, "resolved_config.txt"), resolved.resolved_text());

  std::cout << "train: " << result.history.stopped_epoch << " epochs, best epoch "
            << result.history.best_epoch << ", best val ndcg@20 "
            << fmt_double(result.history.val_ndcg20[result.history.best_epoch - 1])
            << "\n";
}

void cmd_eval(const EvalCmdOptions& opt) {
  make_out_dir(opt.out_dir);
  const Checkpoint ckpt = load_checkpoint(opt.checkpoint);
  if (opt.dataset == "cold" && opt.cold_seed < 0) {
    throw ConfigError("--cold-seed is required for the cold dataset");
  }
  LoadedData data = load_dataset(opt.embeddings, opt.sequences, opt.dataset,
                                 opt.cold_fraction,
                                 opt.cold_seed < 0
                                     ? 0
                                     : static_cast<std::uint64_t>(opt.cold_seed),
                                 5);
  if (ckpt.params.dims.item_count != data.dataset.item_count) {
    throw ConfigError("checkpoint was trained on " +
                      std::to_string(ckpt.params.dims.item_count) +
                      " items but the dataset has " +
                      std::to_string(data.dataset.item_count));
  }
  if (uses_text(ckpt.variant.tag) &&
      max_abs_diff(ckpt.params.frozen_text, data.text) != 0.0) {
    throw ConfigError("text embeddings do not match the ones in the checkpoint");
  }

  Split split = Split::kValidation;
  if (opt.split == "test") {
    split = Split::kTest;
  } else if (opt.split != "val") {
    throw ConfigError("--split must be 'val' or 'test', got '" + opt.split + "'");
  }
  whitenseq::EvalOptions options;
  options.with_uniformity = opt.with_uniformity;
  options.with_conditioning = opt.with_conditioning;
  const std::vector<std::size_t> ks = parse_k_list(opt.ks);
  const EvalReport report =
      evaluate(ckpt.params, ckpt.variant, data.dataset, split, ks, options);

  write_text(join_path(opt.out_dir, "eval_report.txt"), to_kv(report));
  write_text(join_path(opt.out_dir, "eval_row.csv"),
             report_csv_header(ks) + report_csv_row(report));

  RunConfig resolved;
  resolved.set("command", "eval");
  resolved.set("checkpoint", opt.checkpoint);
  resolved.set("embeddings", opt.embeddings);
  resolved.set("sequences", opt.sequences);
  resolved.set("dataset", opt.dataset);
  if (opt.dataset == "cold") {
    resolved.set("cold_fraction", fmt_double(opt.cold_fraction));
    resolved.set("cold_seed", std::to_string(opt.cold_seed));
  }
  resolved.set("split", opt.split);
  resolved.set("k", opt.ks);
  resolved.set("out_dir", opt.out_dir);
  write_text(join_path(opt.out_dir, "resolved_config.txt"), resolved.resolved_text());

  std::cout << "eval: " << report.users_evaluated << " users in "
            << fmt_double(report.wall_seconds) << " s\n";
}

void cmd_report(const ReportOptions& opt) {
  make_out_dir(opt.out_dir);
  std::string header;
  std::vector<std::vector<std::string>> rows;
  for (const std::string& dir : opt.run_dirs) {
    const std::string path = join_path(dir, "eval_row.csv");
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string head, row;
    if (!std::getline(in, head) || !std::getline(in, row)) {
      throw ParseError(path + ": expected a header line and a data line");
    }
    if (header.empty()) {
      header = head;
    } else if (header != head) {
      throw ConfigError(path + ": metric columns differ from the first run");
    }
    std::vector<std::string> fields;
    std::stringstream ss(row);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    rows.push_back(std::move(fields));
  }

  std::string comparison = header + "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) comparison += ',';
      comparison += row[i];
    }
    comparison += "\n";
  }
  write_text(join_path(opt.out_dir, "comparison.csv"), comparison);

  std::vector<std::string> columns;
  {
    std::stringstream ss(header);
    std::string field;
    while (std::getline(ss, field, ',')) columns.push_back(field);
  }
  std::string best;
  for (std::size_t c = 4; c < columns.size(); ++c) {
    double best_value = 0.0;
    std::string best_variant;
    for (const auto& row : rows) {
      if (c >= row.size()) throw ParseError("short row in merged report");
      const double value = std::strtod(row[c].c_str(), nullptr);
      if (best_variant.empty() || value > best_value) {
        best_value = value;
        best_variant = row[0];
      }
    }
    best += "best_" + columns[c] + " = " + best_variant + " " + fmt_double(best_value) +
            "\n";
  }
  write_text(join_path(opt.out_dir, "best.txt"), best);

  RunConfig resolved;
  resolved.set("command", "report");
  resolved.set("out_dir", opt.out_dir);
  for (std::size_t i = 0; i < opt.run_dirs.size(); ++i) {
    resolved.set("run" + std::to_string(i), opt.run_dirs[i]);
  }
  write_text(join_path(opt.out_dir, "resolved_config.txt"), resolved.resolved_text());

  std::cout << "report: merged " << rows.size() << " runs\n";
}

}  // namespace whitenseq::cli
