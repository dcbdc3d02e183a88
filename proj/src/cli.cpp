#include "lip2us/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "lip2us/config.hpp"
#include "lip2us/error.hpp"
#include "lip2us/parallel.hpp"
#include "lip2us/synth.hpp"
#include "lip2us/training.hpp"

namespace lip2us {

namespace fs = std::filesystem;

namespace {

std::optional<RoiSpec> parse_roi(const std::string& text) {
  if (text.empty()) return std::nullopt;
  RoiSpec r;
  char c1 = 0, c2 = 0, c3 = 0;
  long long x, y, w, h;
  std::istringstream is(text);
  if (!(is >> x >> c1 >> y >> c2 >> w >> c3 >> h) || c1 != ',' || c2 != ',' || c3 != ',' || x < 0 || y < 0 ||
      w <= 0 || h <= 0)
    throw UsageError("--roi expects x,y,w,h with non-negative x,y and positive w,h, got '" + text + "'");
  r = {static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(w),
       static_cast<std::size_t>(h)};
  return r;
}

void print_epoch(const EpochLog& e) {
  std::printf("epoch %3zu  train %.6f  val %.6f\n", e.epoch, e.train_loss, e.val_loss);
  std::fflush(stdout);
}

int exit_code_for(const Error& e) {
  const auto& k = e.kind();
  return (k == "config_error" || k == "usage_error") ? 2 : 1;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"lip2us: ultrasound tongue image reconstruction from lip video"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand help for every subcommand");
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: LIP2US_THREADS or 1)");

  std::string config_path = "default";
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "TOML run config, or 'default'");
    sub->add_option("--set", overrides, "Override a config key: section.key=value (repeatable)");
  };

  CLI::App* synth = app.add_subcommand("synth", "Generate the synthetic paired dataset");
  common(synth);
  synth->add_option("--out", out, "Dataset directory (default: data.dir)");

  std::string in_dir, roi_text;
  bool png = false;
  CLI::App* flow = app.add_subcommand("flow", "Dense optical flow between adjacent lip frames");
  common(flow);
  flow->add_option("--in", in_dir, "Lip frame directory")->required();
  flow->add_option("--roi", roi_text, "Mouth region x,y,w,h (default: whole frame)");
  flow->add_option("--out", out, "Output directory")->required();
  flow->add_flag("--png", png, "Also write color-wheel PNGs");

  CLI::App* train = app.add_subcommand("train", "Train a model and report test metrics");
  common(train);
  train->add_option("--seed", seed, "Override train.seed");
  train->add_option("--out", out, "Run directory (default: output.dir)");

  std::string ckpt, split = "test";
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval->add_option("--ckpt", ckpt, "Checkpoint written by train")->required();
  eval->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--set", overrides, "Override a key of the saved config");
  eval->add_option("--out", out, "Report directory (default: <ckpt dir>/eval_<split>)");

  CLI::App* predict = app.add_subcommand("predict", "Predict one ultrasound frame per clip position");
  predict->add_option("--ckpt", ckpt, "Checkpoint written by train")->required();
  predict->add_option("--in", in_dir, "Lip frame directory")->required();
  predict->add_option("--roi", roi_text, "Mouth region x,y,w,h (default: whole frame)");
  predict->add_option("--out", out, "Output directory")->required();

  std::string pred_dir, target_dir;
  CLI::App* metrics = app.add_subcommand("metrics", "SSIM / CW-SSIM / MSD between two frame directories");
  common(metrics);
  metrics->add_option("--pred", pred_dir, "Predicted frames")->required();
  metrics->add_option("--target", target_dir, "Reference frames")->required();
  metrics->add_option("--out", out, "Report directory")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "Train and compare raw-only, w/o OF, w/o AT and full models");
  common(ablate);
  ablate->add_option("--seed", seed, "Override train.seed");
  ablate->add_option("--out", out, "Report directory (default: output.dir/ablation)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage_error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (threads > 0) set_thread_count(threads);
    if (seed) overrides.push_back("train.seed=" + std::to_string(*seed));

    if (synth->parsed()) {
      RunConfig c = load_config(config_path, overrides);
      const fs::path dir = out.empty() ? c.data_dir : fs::path(out);
      gen_dataset(c.synth, dir);
      std::printf("wrote %zu sequences x %zu frames to %s\n", c.synth.n_sequences, c.synth.frames_per_sequence,
                  dir.string().c_str());
    } else if (flow->parsed()) {
      const RunConfig c = load_config(config_path, overrides);
      const std::size_t n = run_flow(in_dir, parse_roi(roi_text), c, out, png);
      std::printf("wrote %zu flow fields to %s\n", n, out.c_str());
    } else if (train->parsed()) {
      const RunConfig c = load_config(config_path, overrides);
      const fs::path dir = out.empty() ? c.out_dir : fs::path(out);
      const TrainReport r = run_train(c, dir, print_epoch);
      std::printf("%s", format_train_report(r).c_str());
      std::printf("checkpoint: %s\n", (dir / "checkpoint.bin").string().c_str());
    } else if (eval->parsed()) {
      const fs::path ck(ckpt);
      const fs::path dir = out.empty() ? ck.parent_path() / ("eval_" + split) : fs::path(out);
      const MetricsReport m = run_eval(ck, split, dir, overrides);
      std::printf("%s", format_metrics_table(m).c_str());
    } else if (predict->parsed()) {
      const std::size_t n = run_predict(ckpt, in_dir, parse_roi(roi_text), out);
      std::printf("wrote %zu predicted frames to %s\n", n, out.c_str());
    } else if (metrics->parsed()) {
      const RunConfig c = load_config(config_path, overrides);
      const MetricsReport m = run_metrics(pred_dir, target_dir, c.contour, out);
      std::printf("%s", format_metrics_table(m).c_str());
    } else if (ablate->parsed()) {
      const RunConfig c = load_config(config_path, overrides);
      const fs::path dir = out.empty() ? c.out_dir / "ablation" : fs::path(out);
      const auto rows = run_ablate(c, dir, print_epoch);
      std::printf("%s", format_ablation_table(rows).c_str());
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: runtime_error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace lip2us
