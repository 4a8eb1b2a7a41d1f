#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace whitenseq::cli {

struct SynthOptions {
  std::size_t items = 500;
  std::size_t users = 2000;
  std::size_t dim = 64;
  double target_cosine = 0.8;
  double mean_len = 10.0;
  double beta = 4.0;
  double gamma = 0.5;
  std::uint64_t seed = 0;
  std::string out_dir;
};
void cmd_synth(const SynthOptions& opt);

struct DiagnoseOptions {
  std::string embeddings;
  std::string out_dir;
  bool svg = false;
};
void cmd_diagnose(const DiagnoseOptions& opt);

struct WhitenOptions {
  std::string embeddings;
  std::string method = "zca";
  std::size_t groups = 1;
  double epsilon = 1e-5;
  std::string out_dir;
};
void cmd_whiten(const WhitenOptions& opt);

struct TrainOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};
void cmd_train(const TrainOptions& opt);

struct EvalCmdOptions {
  std::string checkpoint;
  std::string embeddings;
  std::string sequences;
  std::string dataset = "warm";
  double cold_fraction = 0.15;
  long long cold_seed = -1;
  std::string split = "test";
  std::string ks = "5,10,20";
  std::string out_dir;
  bool with_uniformity = false;
  bool with_conditioning = false;
};
void cmd_eval(const EvalCmdOptions& opt);

struct ReportOptions {
  std::vector<std::string> run_dirs;
  std::string out_dir;
};
void cmd_report(const ReportOptions& opt);

}  // namespace whitenseq::cli
