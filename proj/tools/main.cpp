// whitenseq: whitening and diagnostics for pre-trained item embeddings, plus a
// self-attentive sequential recommender trained on top of them.
#include <iostream>

#include "CLI11.hpp"
#include "cli/commands.hpp"
#include "whitenseq/errors.hpp"

namespace cli = whitenseq::cli;

int main(int argc, char** argv) {
  CLI::App app{"embedding whitening + sequential recommendation toolkit"};
  app.require_subcommand(1);

  cli::SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--items", synth.items, "number of items");
  synth_cmd->add_option("--users", synth.users, "number of users");
  synth_cmd->add_option("--dim", synth.dim, "embedding dimension");
  synth_cmd->add_option("--target-cosine", synth.target_cosine,
                        "desired mean pairwise cosine of the item embeddings");
  synth_cmd->add_option("--mean-len", synth.mean_len, "mean sequence length");
  synth_cmd->add_option("--beta", synth.beta, "preference sharpness");
  synth_cmd->add_option("--gamma", synth.gamma, "sequential dependence strength");
  synth_cmd->add_option("--seed", synth.seed, "rng seed")->required();
  synth_cmd->add_option("--out-dir", synth.out_dir, "output directory")->required();

  cli::DiagnoseOptions diagnose;
  auto* diagnose_cmd =
      app.add_subcommand("diagnose", "geometry diagnostics for an embedding file");
  diagnose_cmd->add_option("--embeddings", diagnose.embeddings, "embedding tsv")
      ->required();
  diagnose_cmd->add_flag("--svg", diagnose.svg, "also write svg charts");
  diagnose_cmd->add_option("--out-dir", diagnose.out_dir, "output directory")
      ->required();

  cli::WhitenOptions whiten;
  auto* whiten_cmd = app.add_subcommand("whiten", "whiten an embedding file");
  whiten_cmd->add_option("--embeddings", whiten.embeddings, "embedding tsv")
      ->required();
  whiten_cmd->add_option("--method", whiten.method, "zca | pca | cholesky | bn");
  whiten_cmd->add_option("--groups", whiten.groups,
                         "number of contiguous dimension groups");
  whiten_cmd->add_option("--epsilon", whiten.epsilon, "covariance ridge");
  whiten_cmd->add_option("--out-dir", whiten.out_dir, "output directory")->required();

  cli::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "train a recommender");
  train_cmd->add_option("--config", train.config_path, "key = value config file")
      ->required();
  train_cmd->add_option("--set", train.overrides,
                        "override a config key, e.g. --set seed=7");
  train_cmd->add_option("--out-dir", train.out_dir, "output directory")->required();

  cli::EvalCmdOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained checkpoint");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--embeddings", eval.embeddings, "embedding tsv")->required();
  eval_cmd->add_option("--sequences", eval.sequences, "sequence tsv")->required();
  eval_cmd->add_option("--dataset", eval.dataset, "warm | cold");
  eval_cmd->add_option("--cold-fraction", eval.cold_fraction,
                       "fraction of items held out as cold");
  eval_cmd->add_option("--cold-seed", eval.cold_seed,
                       "seed for the cold item draw (required for --dataset cold)");
  eval_cmd->add_option("--split", eval.split, "val | test");
  eval_cmd->add_option("--k", eval.ks, "comma-separated cutoffs, e.g. 5,10,20");
  eval_cmd->add_flag("--with-uniformity", eval.with_uniformity,
                     "report alignment/uniformity of user and item vectors");
  eval_cmd->add_flag("--with-conditioning", eval.with_conditioning,
                     "report the condition number of the encoded item matrix");
  eval_cmd->add_option("--out-dir", eval.out_dir, "output directory")->required();

  cli::ReportOptions report;
  auto* report_cmd =
      app.add_subcommand("report", "merge eval rows from several runs");
  report_cmd->add_option("--run", report.run_dirs, "eval output directory (repeat)")
      ->required();
  report_cmd->add_option("--out-dir", report.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the error message
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth_cmd) cli::cmd_synth(synth);
    if (*diagnose_cmd) cli::cmd_diagnose(diagnose);
    if (*whiten_cmd) cli::cmd_whiten(whiten);
    if (*train_cmd) cli::cmd_train(train);
    if (*eval_cmd) cli::cmd_eval(eval);
    if (*report_cmd) cli::cmd_report(report);
  } catch (const whitenseq::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
