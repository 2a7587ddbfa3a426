#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "scribda/grid.hpp"
#include "scribda/tensor_io.hpp"
#include "test_util.hpp"

using namespace scribda;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args, const fs::path& workdir) {
  const fs::path log = workdir / "out.log";
  const std::string cmd = "cd " + workdir.string() + " && " + SCRIBDA_CLI_PATH + " " + args +
                          " > out.log 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(status);
  std::ifstream is(log);
  r.output.assign((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  testutil::TempDir dir("cli_usage");
  const RunResult bad = run_cli("frobnicate", dir.path());
  CHECK(bad.exit_code == 2);
  CHECK(bad.output.find("Usage") != std::string::npos);

  const RunResult none = run_cli("", dir.path());
  CHECK(none.exit_code == 2);

  const RunResult badflag = run_cli("gen-data --no-such-flag 1", dir.path());
  CHECK(badflag.exit_code == 2);

  const RunResult version = run_cli("--version", dir.path());
  CHECK(version.exit_code == 0);
  CHECK(version.output.find("scribda") != std::string::npos);
}

TEST_CASE("full pipeline: gen-data, train, eval, infer, refine") {
  testutil::TempDir dir("cli_pipe");
  const RunResult gen = run_cli(
      "gen-data --seed 7 --out-dir data --n-source 3 --n-target 4 --n-val 2 --n-test 2 --size 32",
      dir.path());
  REQUIRE(gen.exit_code == 0);
  REQUIRE(fs::exists(dir.path() / "data" / "manifest.json"));

  {
    std::ofstream os(dir.path() / "train.json");
    os << R"({
      "mode": "scrib+ireg", "max_epochs": 2, "h1": 6, "feature_channels": 4, "seed": 5,
      "kernel": {"sigma_alpha": 0.2, "sigma_beta": 3.0, "lambda_i": 0.05}
    })";
  }
  const RunResult tr = run_cli(
      "train --config train.json --data-manifest data/manifest.json --out-dir run1", dir.path());
  REQUIRE(tr.exit_code == 0);
  CHECK(fs::exists(dir.path() / "run1" / "history.csv"));
  CHECK(fs::exists(dir.path() / "run1" / "metrics.json"));
  CHECK(fs::exists(dir.path() / "run1" / "checkpoint" / "index.json"));

  const std::string history = read_file(dir.path() / "run1" / "history.csv");
  CHECK(history.rfind("epoch,loss,data,ri,rda,val,lr\n", 0) == 0);
  CHECK(count_lines(history) == 3);  // header + 2 epochs

  const RunResult ev = run_cli(
      "eval --checkpoint run1/checkpoint --manifest data/manifest.json --split test_target "
      "--out metrics.csv",
      dir.path());
  REQUIRE(ev.exit_code == 0);
  const std::string metrics = read_file(dir.path() / "metrics.csv");
  CHECK(metrics.rfind("id,domain,dice,assd,assd_defined\n", 0) == 0);
  CHECK(count_lines(metrics) == 3);  // header + 2 test rows

  const RunResult inf = run_cli(
      "infer --checkpoint run1/checkpoint --manifest data/manifest.json --split val "
      "--out-dir preds --crf-postprocess --iters 3 --sigma-alpha 0.2 --sigma-beta 3",
      dir.path());
  REQUIRE(inf.exit_code == 0);
  CHECK(fs::exists(dir.path() / "preds" / "val_000_prob.tg"));
  CHECK(fs::exists(dir.path() / "preds" / "val_000_pred.tg"));
  const SoftLabeling prob = load_soft((dir.path() / "preds" / "val_000_prob.tg").string());
  prob.check_simplex(1e-6);

  // Refinement driven by a hand-made unary.
  {
    TensorGrid image(8, 8, 1, 0.0);
    for (int x = 4; x < 8; ++x) {
      for (int y = 0; y < 8; ++y) image.at(y, x, 0) = 1.0;
    }
    TensorGrid unary(8, 8, 2, 0.0);
    for (int k = 0; k < 64; ++k) {
      unary.data[k * 2 + 0] = (k % 8 >= 4) ? 1.0 : 0.0;
      unary.data[k * 2 + 1] = (k % 8 >= 4) ? 0.0 : 1.0;
    }
    save_grid((dir.path() / "img.tg").string(), image);
    save_grid((dir.path() / "unary.tg").string(), unary);
  }
  const RunResult ref = run_cli(
      "refine --image img.tg --unary unary.tg --sigma-alpha 0.5 --sigma-beta 2 --iters 5 "
      "--out refined",
      dir.path());
  REQUIRE(ref.exit_code == 0);
  const LabelMap crisp = load_labels((dir.path() / "refined_crisp.tg").string());
  CHECK(crisp.at(0, 0) == 0);
  CHECK(crisp.at(0, 7) == 1);

  const RunResult missing = run_cli("eval --checkpoint nowhere --manifest data/manifest.json",
                                    dir.path());
  CHECK(missing.exit_code == 1);
}

TEST_CASE("filter-bench reports the oracle comparison") {
  testutil::TempDir dir("cli_bench");
  const RunResult r = run_cli("filter-bench --n 400 --dim 3 --seed 2 --oracle", dir.path());
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("n,dim,lattice_ms,oracle_ms,rel_l2_err") != std::string::npos);
  CHECK(r.output.find("400,3,") != std::string::npos);
}

TEST_CASE("deterministic reruns produce byte-identical artifacts") {
  testutil::TempDir dir("cli_det");
  for (const char* tag : {"a", "b"}) {
    const RunResult gen = run_cli(
        std::string("gen-data --seed 11 --out-dir data_") + tag +
            " --n-source 2 --n-target 4 --n-val 2 --n-test 2 --size 32",
        dir.path());
    REQUIRE(gen.exit_code == 0);
    const RunResult tr = run_cli(
        std::string("train --data-manifest data_") + tag + "/manifest.json --out-dir run_" + tag +
            " --deterministic --seed 3 --mode scrib --max-epochs 2 --sigma-alpha 0.2 "
            "--lambda-i 0",
        dir.path());
    REQUIRE(tr.exit_code == 0);
  }
  CHECK(read_file(dir.path() / "data_a" / "tgt_000_img.tg") ==
        read_file(dir.path() / "data_b" / "tgt_000_img.tg"));
  CHECK(read_file(dir.path() / "run_a" / "history.csv") ==
        read_file(dir.path() / "run_b" / "history.csv"));
  for (const char* f : {"conv1_w.tg", "conv2_w.tg", "head_w.tg"}) {
    CHECK(read_file(dir.path() / "run_a" / "checkpoint" / f) ==
          read_file(dir.path() / "run_b" / "checkpoint" / f));
  }
}
