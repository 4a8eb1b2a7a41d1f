// End-to-end tests that drive the compiled binary. The binary path arrives
// as the first program argument (wired up by ctest).
#define DOCTEST_CONFIG_IMPLEMENT
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace {

std::string g_cli;
std::filesystem::path g_work;

int run(const std::string& args) {
  const std::string cmd = g_cli + " " + args + " > " + (g_work / "stdout.txt").string() +
                          " 2> " + (g_work / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string out_path(const std::string& name) { return (g_work / name).string(); }

bool exists(const std::string& dir, const std::string& file) {
  return std::filesystem::exists(g_work / dir / file);
}

}  // namespace

TEST_CASE("usage and help exit codes") {
  CHECK(run("--help") == 0);
  CHECK(run("synth --help") == 0);
  CHECK(run("") == 2);                       // a subcommand is required
  CHECK(run("frobnicate") == 2);             // unknown subcommand
  CHECK(run("synth --out-dir " + out_path("x")) == 2);  // missing --seed
  CHECK(run("diagnose --embeddings nope.tsv --out-dir " + out_path("x")) == 1);
}

TEST_CASE("synth writes a complete dataset") {
  const int code = run("synth --items 60 --users 50 --dim 8 --target-cosine 0.6"
                       " --mean-len 8 --seed 31 --out-dir " + out_path("synth"));
  CHECK(code == 0);
  CHECK(exists("synth", "embeddings.tsv"));
  CHECK(exists("synth", "sequences.tsv"));
  CHECK(exists("synth", "id_map.tsv"));
  CHECK(exists("synth", "resolved_config.txt"));
  const std::string manifest = slurp(g_work / "synth" / "manifest.txt");
  const auto pos = manifest.find("mean_cosine = ");
  REQUIRE(pos != std::string::npos);
  const double measured = std::strtod(manifest.c_str() + pos + 14, nullptr);
  CHECK(measured > 0.58);
  CHECK(measured < 0.62);
  CHECK(manifest.find("items = 60") != std::string::npos);

  // Same seed, same bytes.
  REQUIRE(run("synth --items 60 --users 50 --dim 8 --target-cosine 0.6"
              " --mean-len 8 --seed 31 --out-dir " + out_path("synth_again")) == 0);
  CHECK(slurp(g_work / "synth" / "embeddings.tsv") ==
        slurp(g_work / "synth_again" / "embeddings.tsv"));
  CHECK(slurp(g_work / "synth" / "sequences.tsv") ==
        slurp(g_work / "synth_again" / "sequences.tsv"));
}

TEST_CASE("diagnose reports geometry") {
  const std::string emb = out_path("synth") + "/embeddings.tsv";
  CHECK(run("diagnose --embeddings " + emb + " --svg --out-dir " +
            out_path("diag")) == 0);
  const std::string kv = slurp(g_work / "diag" / "diagnostics.txt");
  CHECK(kv.find("mean_cosine = ") != std::string::npos);
  CHECK(kv.find("condition_number = ") != std::string::npos);
  CHECK(exists("diag", "spectrum.csv"));
  CHECK(exists("diag", "cdf.csv"));
  CHECK(exists("diag", "spectrum.svg"));
  CHECK(exists("diag", "cdf.svg"));
  CHECK(slurp(g_work / "diag" / "spectrum.svg").find("<svg") != std::string::npos);
}

TEST_CASE("whiten validates groups and writes stats") {
  const std::string emb = out_path("synth") + "/embeddings.tsv";
  CHECK(run("whiten --embeddings " + emb + " --groups 3 --out-dir " +
            out_path("w_bad")) == 2);
  const std::string err = slurp(g_work / "stderr.txt");
  CHECK(err.find("does not divide") != std::string::npos);

  CHECK(run("whiten --embeddings " + emb + " --method zca --groups 2"
            " --epsilon 1e-6 --out-dir " + out_path("w_ok")) == 0);
  CHECK(exists("w_ok", "whitened.tsv"));
  const std::string stats = slurp(g_work / "w_ok" / "stats.txt");
  CHECK(stats.find("pass = true") != std::string::npos);
  CHECK(stats.find("cross_0_1_max_abs_cov = ") != std::string::npos);

  CHECK(run("whiten --embeddings " + emb + " --method ica --out-dir " +
            out_path("w_bad2")) == 2);
}

TEST_CASE("train, eval and report round-trip") {
  const std::string dir = out_path("synth");
  {
    std::ofstream cfg(g_work / "train.cfg");
    cfg << "embeddings = " << dir << "/embeddings.tsv\n"
        << "sequences = " << dir << "/sequences.tsv\n"
        << "variant = whitenrec\n"
        << "# small model so the test stays fast\n"
        << "d_model = 8\n"
        << "blocks = 1\n"
        << "heads = 1\n"
        << "head_depth = 1\n"
        << "max_seq_len = 10\n"
        << "batch_size = 32\n"
        << "max_epochs = 2\n"
        << "patience = 5\n"
        << "seed = 7\n";
  }
  const std::string cfg = (g_work / "train.cfg").string();
  REQUIRE(run("train --config " + cfg + " --out-dir " + out_path("run1")) == 0);
  CHECK(exists("run1", "checkpoint.bin"));
  CHECK(exists("run1", "history.csv"));
  CHECK(exists("run1", "id_map.tsv"));
  const std::string resolved = slurp(g_work / "run1" / "resolved_config.txt");
  CHECK(resolved.find("variant = whitenrec") != std::string::npos);
  CHECK(resolved.find("seed = 7") != std::string::npos);

  // Identical seed and config give byte-identical history.
  REQUIRE(run("train --config " + cfg + " --out-dir " + out_path("run2")) == 0);
  CHECK(slurp(g_work / "run1" / "history.csv") ==
        slurp(g_work / "run2" / "history.csv"));

  // Overrides change the run; unknown keys are rejected.
  CHECK(run("train --config " + cfg + " --set seed=8 --out-dir " +
            out_path("run3")) == 0);
  CHECK(slurp(g_work / "run1" / "history.csv") !=
        slurp(g_work / "run3" / "history.csv"));
  CHECK(run("train --config " + cfg + " --set learning_rte=0.1 --out-dir " +
            out_path("run4")) == 2);
  CHECK(slurp(g_work / "stderr.txt").find("learning_rte") != std::string::npos);

  // Evaluate both runs and merge them into a comparison table.
  const std::string eval_common = " --embeddings " + dir + "/embeddings.tsv" +
                                  " --sequences " + dir + "/sequences.tsv" +
                                  " --split test --k 5,10,20";
  REQUIRE(run("eval --checkpoint " + out_path("run1") + "/checkpoint.bin" +
              eval_common + " --with-uniformity --out-dir " + out_path("eval1")) == 0);
  const std::string row = slurp(g_work / "eval1" / "eval_row.csv");
  CHECK(row.rfind("variant,split,users,params,recall@5,ndcg@5,recall@10,ndcg@10,"
                  "recall@20,ndcg@20\n", 0) == 0);
  CHECK(slurp(g_work / "eval1" / "eval_report.txt").find("l_uniform_item = ") !=
        std::string::npos);

  REQUIRE(run("eval --checkpoint " + out_path("run3") + "/checkpoint.bin" +
              eval_common + " --out-dir " + out_path("eval3")) == 0);
  REQUIRE(run("report --run " + out_path("eval1") + " --run " + out_path("eval3") +
              " --out-dir " + out_path("summary")) == 0);
  const std::string comparison = slurp(g_work / "summary" / "comparison.csv");
  CHECK(std::count(comparison.begin(), comparison.end(), '\n') == 3);
  CHECK(slurp(g_work / "summary" / "best.txt").find("best_ndcg@10 = ") !=
        std::string::npos);
}

TEST_CASE("eval rejects mismatched inputs") {
  // Embeddings from a different seed than the checkpoint was trained on.
  REQUIRE(run("synth --items 60 --users 50 --dim 8 --target-cosine 0.6"
              " --mean-len 8 --seed 99 --out-dir " + out_path("other")) == 0);
  const int code = run("eval --checkpoint " + out_path("run1") + "/checkpoint.bin" +
                       " --embeddings " + out_path("other") + "/embeddings.tsv" +
                       " --sequences " + out_path("other") + "/sequences.tsv" +
                       " --split test --out-dir " + out_path("eval_bad"));
  CHECK(code == 2);

  CHECK(run("eval --checkpoint " + out_path("run1") + "/checkpoint.bin" +
            " --embeddings " + out_path("synth") + "/embeddings.tsv" +
            " --sequences " + out_path("synth") + "/sequences.tsv" +
            " --dataset cold --split test --out-dir " + out_path("eval_bad2")) == 2);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: test_cli <path-to-binary>\n";
    return 1;
  }
  g_cli = argv[1];
  g_work = std::filesystem::temp_directory_path() / "whitenseq_cli_test";
  std::filesystem::remove_all(g_work);
  std::filesystem::create_directories(g_work);

  doctest::Context context;
  context.applyCommandLine(1, argv);
  return context.run();
}
