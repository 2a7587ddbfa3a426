// scribda: scribble-driven two-domain segmentation pipeline.
//
// Subcommands: gen-data, train, infer, refine, eval, filter-bench.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "scribda/crf.hpp"
#include "scribda/features.hpp"
#include "scribda/lattice.hpp"
#include "scribda/metrics.hpp"
#include "scribda/run_config.hpp"
#include "scribda/synthdata.hpp"
#include "scribda/tensor_io.hpp"
#include "scribda/trainer.hpp"

namespace fs = std::filesystem;
using namespace scribda;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string default_run_dir(std::uint64_t seed) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::tm tm_buf{};
#if defined(_WIN32)
  localtime_s(&tm_buf, &t);
#else
  localtime_r(&t, &tm_buf);
#endif
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm_buf);
  return std::string("runs/") + buf + "-seed" + std::to_string(seed);
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "epoch,loss,data,ri,rda,val,lr\n";
  char line[256];
  for (const EpochRecord& r : history.epochs) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                  r.train_total, r.train_data, r.train_ri, r.train_rda, r.val_data, r.lr);
    os << line;
  }
}

void write_metrics_csv(const std::string& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "id,domain,dice,assd,assd_defined\n";
  char line[256];
  for (const EvalRow& r : report.rows) {
    std::snprintf(line, sizeof(line), "%s,%s,%.17g,%.17g,%d\n", r.id.c_str(), r.domain.c_str(),
                  r.dice, r.assd.value_or(0.0), r.assd ? 1 : 0);
    os << line;
  }
}

struct GenDataArgs {
  std::uint64_t seed = 7;
  std::string out_dir;
  int n_source = 30;
  int n_target = 10;
  int n_val = 4;
  int n_test = 20;
  int size = 64;
};

int run_gen_data(const GenDataArgs& a) {
  const std::string out = a.out_dir.empty() ? default_run_dir(a.seed) : a.out_dir;
  generate(a.seed, a.n_source, a.n_target, a.n_val, a.n_test, a.size, out);
  std::cout << "wrote benchmark to " << out << " (manifest.json)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scribble-driven two-domain segmentation"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_version_flag("--version", std::string("scribda ") + kVersion + " (" + __VERSION__ + ")");

  // gen-data
  GenDataArgs gen;
  CLI::App* cmd_gen = app.add_subcommand("gen-data", "generate the synthetic two-domain benchmark");
  cmd_gen->add_option("--seed", gen.seed, "generator seed");
  cmd_gen->add_option("--out-dir", gen.out_dir, "output directory");
  cmd_gen->add_option("--n-source", gen.n_source, "fully annotated source images");
  cmd_gen->add_option("--n-target", gen.n_target, "scribble-annotated target training images");
  cmd_gen->add_option("--n-val", gen.n_val, "validation images");
  cmd_gen->add_option("--n-test", gen.n_test, "target test images");
  cmd_gen->add_option("--size", gen.size, "image side length (>= 32)");

  // train
  std::string train_config_path, train_manifest_path, train_out_dir;
  std::vector<std::string> train_overrides;
  bool train_deterministic = false;
  int train_threads = 0;
  CLI::App* cmd_train = app.add_subcommand("train", "optimize a segmenter on a benchmark");
  cmd_train->add_option("--config", train_config_path, "JSON training config");
  cmd_train->add_option("--data-manifest", train_manifest_path, "manifest.json of the benchmark")
      ->required();
  cmd_train->add_option("--out-dir", train_out_dir, "run directory");
  cmd_train->add_option("--set", train_overrides, "flat config override key=value (repeatable)");
  cmd_train->add_flag("--deterministic", train_deterministic,
                      "single-threaded deterministic execution");
  cmd_train->add_option("--threads", train_threads, "worker threads for per-item passes");
  std::map<std::string, std::string> train_flat;
  for (const char* key : {"lr", "seed", "mode", "max-epochs", "da-warmup-epochs", "data-loss",
                          "lambda-i", "lambda-da", "sigma-alpha", "sigma-beta", "sigma-gamma",
                          "da-channels", "batch-source", "batch-target"}) {
    std::string k = key;
    cmd_train->add_option_function<std::string>(
        "--" + k, [&train_flat, k](const std::string& v) { train_flat[k] = v; },
        "override config key " + k);
  }

  // infer
  std::string infer_ckpt, infer_manifest, infer_split = "test_target", infer_out;
  bool infer_crf = false;
  double infer_sa = 15.0, infer_sb = 3.0, infer_wp = 1.0, infer_damping = 0.5;
  int infer_iters = 20;
  CLI::App* cmd_infer = app.add_subcommand("infer", "run a checkpoint over a split");
  cmd_infer->add_option("--checkpoint", infer_ckpt, "checkpoint dir or index.json")->required();
  cmd_infer->add_option("--manifest", infer_manifest, "manifest.json")->required();
  cmd_infer->add_option("--split", infer_split, "split name");
  cmd_infer->add_option("--out-dir", infer_out, "output directory");
  cmd_infer->add_flag("--crf-postprocess", infer_crf, "refine probabilities with mean field");
  cmd_infer->add_option("--sigma-alpha", infer_sa, "bilateral intensity bandwidth");
  cmd_infer->add_option("--sigma-beta", infer_sb, "bilateral spatial bandwidth");
  cmd_infer->add_option("--pairwise-weight", infer_wp, "Potts weight");
  cmd_infer->add_option("--iters", infer_iters, "mean-field iterations");
  cmd_infer->add_option("--damping", infer_damping, "mean-field damping");

  // refine
  std::string refine_image, refine_unary, refine_scribbles, refine_out = "refined";
  double refine_sa = 15.0, refine_sb = 3.0, refine_wp = 1.0, refine_damping = 0.5;
  int refine_iters = 20;
  CLI::App* cmd_refine = app.add_subcommand("refine", "constrained mean-field refinement");
  cmd_refine->add_option("--image", refine_image, "image .tg")->required();
  cmd_refine->add_option("--unary", refine_unary, "per-pixel class costs .tg")->required();
  cmd_refine->add_option("--scribbles", refine_scribbles, "scribble .tg (optional constraints)");
  cmd_refine->add_option("--sigma-alpha", refine_sa, "bilateral intensity bandwidth");
  cmd_refine->add_option("--sigma-beta", refine_sb, "bilateral spatial bandwidth");
  cmd_refine->add_option("--pairwise-weight", refine_wp, "Potts weight");
  cmd_refine->add_option("--iters", refine_iters, "mean-field iterations");
  cmd_refine->add_option("--damping", refine_damping, "damping in (0, 1]");
  cmd_refine->add_option("--out", refine_out, "output prefix");

  // eval
  std::string eval_ckpt, eval_manifest, eval_split = "test_target", eval_out = "metrics.csv";
  double eval_dy = 1.0, eval_dx = 1.0;
  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint against ground truth");
  cmd_eval->add_option("--checkpoint", eval_ckpt, "checkpoint dir or index.json")->required();
  cmd_eval->add_option("--manifest", eval_manifest, "manifest.json")->required();
  cmd_eval->add_option("--split", eval_split, "split name");
  cmd_eval->add_option("--out", eval_out, "metrics csv path");
  cmd_eval->add_option("--spacing-y", eval_dy, "mm per pixel, rows");
  cmd_eval->add_option("--spacing-x", eval_dx, "mm per pixel, columns");

  // filter-bench
  int bench_n = 2000, bench_dim = 5, bench_channels = 1;
  std::uint64_t bench_seed = 1;
  bool bench_oracle = false;
  CLI::App* cmd_bench = app.add_subcommand("filter-bench", "lattice filter benchmark");
  cmd_bench->add_option("--n", bench_n, "point count");
  cmd_bench->add_option("--dim", bench_dim, "feature dimension");
  cmd_bench->add_option("--seed", bench_seed, "rng seed");
  cmd_bench->add_option("--channels", bench_channels, "value channels");
  cmd_bench->add_flag("--oracle", bench_oracle, "also run the brute-force comparison");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (cmd_gen->parsed()) return run_gen_data(gen);

    if (cmd_train->parsed()) {
      std::map<std::string, std::string> overrides;
      for (const std::string& ov : train_overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + ov);
        overrides[ov.substr(0, eq)] = ov.substr(eq + 1);
      }
      for (const auto& [k, v] : train_flat) {
        std::string key = k;
        std::replace(key.begin(), key.end(), '-', '_');
        overrides[key] = v;
      }
      if (train_threads > 0) overrides["threads"] = std::to_string(train_threads);
      if (train_deterministic) overrides["threads"] = "1";

      TrainConfig config = train_config_path.empty()
                               ? parse_train_config("", overrides)
                               : load_train_config(train_config_path, overrides);

      const fs::path manifest_path = fs::absolute(train_manifest_path);
      const DatasetManifest manifest = load_manifest(manifest_path.string());
      const std::string mdir = manifest_path.parent_path().string();
      const auto source = load_split(manifest, mdir, "train_source");
      const auto target = load_split(manifest, mdir, "train_target");
      const auto val = load_split(manifest, mdir, "val");
      const auto test = load_split(manifest, mdir, "test_target");

      const std::string out = train_out_dir.empty() ? default_run_dir(config.seed) : train_out_dir;
      fs::create_directories(out);
      {
        std::ofstream os(fs::path(out) / "config.json");
        os << train_config_to_json(config) << "\n";
      }

      const TrainResult result = train(source, target, val, config);
      save_checkpoint((fs::path(out) / "checkpoint").string(), result.params);
      write_history_csv((fs::path(out) / "history.csv").string(), result.history);

      nlohmann::json metrics;
      for (const auto& [split_name, set] : {std::pair{std::string("val"), &val},
                                            std::pair{std::string("test_target"), &test}}) {
        const EvalReport report = evaluate(result.params, *set, Spacing{});
        for (const auto& [domain, s] : report.per_domain) {
          metrics[split_name][domain] = {{"count", s.count},
                                         {"dice_mean", s.dice_mean},
                                         {"dice_std", s.dice_std},
                                         {"assd_mean", s.assd_mean},
                                         {"assd_std", s.assd_std},
                                         {"assd_undefined", s.assd_undefined}};
        }
      }
      {
        std::ofstream os(fs::path(out) / "metrics.json");
        os << metrics.dump(2) << "\n";
      }
      std::cout << "run complete: " << out << " (" << result.history.epochs.size()
                << " epochs)\n";
      return 0;
    }

    if (cmd_infer->parsed()) {
      const SegmenterParams params = load_checkpoint(infer_ckpt);
      const fs::path manifest_path = fs::absolute(infer_manifest);
      const DatasetManifest manifest = load_manifest(manifest_path.string());
      const auto set = load_split(manifest, manifest_path.parent_path().string(), infer_split);
      const std::string out = infer_out.empty() ? default_run_dir(0) : infer_out;
      fs::create_directories(out);
      for (const LoadedSample& s : set) {
        ForwardResult f = forward(params, s.image);
        SoftLabeling probs = f.probs;
        if (infer_crf) {
          DenseCrf crf;
          crf.image = s.image;
          crf.sigma_alpha = infer_sa;
          crf.sigma_beta = infer_sb;
          crf.pairwise_weight = infer_wp;
          crf.unary = TensorGrid(s.image.height, s.image.width, probs.classes, 0.0);
          for (std::size_t t = 0; t < probs.probs.size(); ++t) {
            crf.unary.data[t] = -std::log(std::max(probs.probs[t], 1e-12));
          }
          probs = mean_field(crf, nullptr, infer_iters, infer_damping);
        }
        save_soft((fs::path(out) / (s.id + "_prob.tg")).string(), probs);
        save_labels((fs::path(out) / (s.id + "_pred.tg")).string(), argmax_labeling(probs));
      }
      std::cout << "wrote " << set.size() << " predictions to " << out << "\n";
      return 0;
    }

    if (cmd_refine->parsed()) {
      DenseCrf crf;
      crf.image = load_grid(refine_image);
      crf.unary = load_grid(refine_unary);
      crf.sigma_alpha = refine_sa;
      crf.sigma_beta = refine_sb;
      crf.pairwise_weight = refine_wp;
      ScribbleMask constraints;
      const bool has_constraints = !refine_scribbles.empty();
      if (has_constraints) constraints = load_scribbles(refine_scribbles);
      const SoftLabeling q =
          mean_field(crf, has_constraints ? &constraints : nullptr, refine_iters, refine_damping);
      save_soft(refine_out + "_soft.tg", q);
      save_labels(refine_out + "_crisp.tg", argmax_labeling(q));
      std::cout << "wrote " << refine_out << "_soft.tg and " << refine_out << "_crisp.tg\n";
      return 0;
    }

    if (cmd_eval->parsed()) {
      const SegmenterParams params = load_checkpoint(eval_ckpt);
      const fs::path manifest_path = fs::absolute(eval_manifest);
      const DatasetManifest manifest = load_manifest(manifest_path.string());
      const auto set = load_split(manifest, manifest_path.parent_path().string(), eval_split);
      const EvalReport report = evaluate(params, set, Spacing{eval_dy, eval_dx});
      write_metrics_csv(eval_out, report);
      for (const auto& [domain, s] : report.per_domain) {
        std::printf("%s: dice %.2f (%.2f), assd %.3f (%.3f), %d undefined, n=%d\n",
                    domain.c_str(), s.dice_mean, s.dice_std, s.assd_mean, s.assd_std,
                    s.assd_undefined, s.count);
      }
      return 0;
    }

    if (cmd_bench->parsed()) {
      std::mt19937_64 rng(bench_seed);
      std::uniform_real_distribution<double> feat(0.0, 5.0);
      std::uniform_real_distribution<double> val(-1.0, 1.0);
      std::vector<double> features(static_cast<std::size_t>(bench_n) * bench_dim);
      for (double& v : features) v = feat(rng);
      std::vector<double> values(static_cast<std::size_t>(bench_n) * bench_channels);
      for (double& v : values) v = val(rng);
      const FeaturePointSet points(bench_n, bench_dim, std::move(features));

      const auto t0 = std::chrono::steady_clock::now();
      const LatticeFilter filter(points);
      const std::vector<double> fast = filter.apply(values, bench_channels);
      const double lattice_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

      double oracle_ms = 0.0, rel_err = 0.0;
      if (bench_oracle) {
        const auto t1 = std::chrono::steady_clock::now();
        const std::vector<double> exact = filter_bruteforce(points, values, bench_channels);
        oracle_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t1)
                        .count();
        double num = 0.0, den = 0.0;
        for (std::size_t t = 0; t < exact.size(); ++t) {
          num += (fast[t] - exact[t]) * (fast[t] - exact[t]);
          den += exact[t] * exact[t];
        }
        rel_err = std::sqrt(num / std::max(den, 1e-300));
      }
      std::printf("n,dim,lattice_ms,oracle_ms,rel_l2_err\n");
      std::printf("%d,%d,%.3f,%.3f,%.6g\n", bench_n, bench_dim, lattice_ms, oracle_ms, rel_err);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
