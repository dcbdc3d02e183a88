#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "lip2us/cli.hpp"
#include "lip2us/config.hpp"
#include "lip2us/dataset.hpp"
#include "lip2us/synth.hpp"
#include "lip2us/training.hpp"

using namespace lip2us;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lip2us_test_" + name);
  fs::remove_all(p);
  return p;
}

// A configuration small enough to train in about a second.
std::string tiny_toml(const fs::path& data) {
  return "[data]\ndir = \"" + data.string() +
         "\"\n"
         "[synth]\nn_sequences = 8\nframes_per_sequence = 10\nlip_size = 32\nus_size = 32\n"
         "aperture_min = 2.0\naperture_max = 12.0\napex_min = 8.0\napex_max = 20.0\n"
         "[split]\ntrain = 0.5\nval = 0.25\ntest = 0.25\n"
         "[train]\nbatch_size = 4\nmax_epochs = 2\nlr = 1e-3\nseed = 3\n"
         "[flow]\niterations = 10\n"
         "[model]\nin_h = 32\nin_w = 32\nclip_len = 3\nseq_len = 2\n"
         "tower = [{filters = 2, kernel = 3, stride = 2, pool = 2}]\n"
         "embed_dim = 8\nlstm_hidden = 8\ndecoder_hidden = 8\nout_h = 32\nout_w = 32\n";
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new fs::path(scratch("pipeline_data"));
    gen_dataset(config().synth, *data_);
  }
  static void TearDownTestSuite() {
    fs::remove_all(*data_);
    delete data_;
  }
  static RunConfig config(const std::vector<std::string>& overrides = {}) {
    return parse_config(tiny_toml(data_ ? *data_ : fs::path("unused")), overrides, "tiny");
  }
  static fs::path* data_;
};

fs::path* Pipeline::data_ = nullptr;

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "lip2us");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST(Config, DefaultsRoundTripThroughToml) {
  const RunConfig d = parse_config("");
  EXPECT_EQ(d.train.batch_size, 32u);
  EXPECT_EQ(d.model.tower.size(), 3u);
  const std::string text = to_toml(d);
  EXPECT_EQ(to_toml(parse_config(text)), text);
  RunConfig c = parse_config(text, {"train.lr=0.01", "model.tower=[{filters=4,kernel=5,stride=2,pool=1}]",
                                    "data.dir=some/where", "ablation.raw_only=true"});
  EXPECT_EQ(c.train.lr, 0.01);
  ASSERT_EQ(c.model.tower.size(), 1u);
  EXPECT_EQ(c.model.tower[0].kernel, 5u);
  EXPECT_EQ(c.data_dir, fs::path("some/where"));
  EXPECT_TRUE(c.model.variant.raw_only);
  EXPECT_EQ(to_toml(parse_config(to_toml(c))), to_toml(c));
}

TEST(Config, RejectsUnknownOrInvalidEntries) {
  EXPECT_THROW(parse_config("[train]\nlearning_rate = 0.1\n"), ConfigError);
  EXPECT_THROW(parse_config("[nonsense]\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nlr = \"fast\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nbatch_size = -4\n"), ConfigError);
  EXPECT_THROW(parse_config("[train\n"), ConfigError);
  EXPECT_THROW(parse_config("", {"train.nothing=1"}), ConfigError);
  EXPECT_THROW(parse_config("", {"no_equals_sign"}), ConfigError);
  EXPECT_THROW(parse_config("", {"split.train=0.9"}), ConfigError);
  EXPECT_THROW(parse_config("", {"model.tower=[{filters=4,kernel=4,stride=1,pool=1}]"}), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/lip2us.toml"), ConfigError);
}

TEST(Split, DisjointCoverWithFloorSizes) {
  const Split s = split_dataset(23, {0.6, 0.2, 0.2}, 5);
  EXPECT_EQ(s.val.size(), 4u);
  EXPECT_EQ(s.test.size(), 4u);
  EXPECT_EQ(s.train.size(), 15u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 23u);
  EXPECT_EQ(*all.rbegin(), 22u);
  const Split again = split_dataset(23, {0.6, 0.2, 0.2}, 5);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.test, s.test);
  EXPECT_NE(split_dataset(23, {0.6, 0.2, 0.2}, 6).train, s.train);
  EXPECT_EQ(split_dataset(10, {0.7, 0.2, 0.1}, 0).test.size(), 1u);
  EXPECT_THROW(split_dataset(10, {0.5, 0.2, 0.2}, 0), ConfigError);
  EXPECT_THROW(split_dataset(0, {0.6, 0.2, 0.2}, 0), ConfigError);
}

TEST(Dataset, ValidCentersAndSampleWindows) {
  EXPECT_EQ(valid_centers(16, 7), (std::vector<std::size_t>{3, 4, 5, 6, 7, 8, 9, 10, 11, 12}));
  EXPECT_TRUE(valid_centers(5, 7).empty());
  EXPECT_EQ(valid_centers(4, 4), (std::vector<std::size_t>{2}));
}

TEST(Dataset, DefaultBatchShapesAndTimeMajorLayout) {
  SynthSpec spec;
  std::vector<std::vector<Frame>> lips, targets;
  for (std::size_t i = 0; i < 3; ++i) {
    Recording r = generate_recording(spec, i);
    lips.push_back(r.lips);
    targets.push_back(r.ultrasound);
  }
  DatasetOptions o;
  o.flow.iterations = 5;
  const Dataset d = Dataset::build(lips, targets, o);
  const auto samples = d.samples();
  ASSERT_EQ(samples.size(), 6u);
  EXPECT_EQ(samples[0].first_center, 3u);
  EXPECT_EQ(samples[1].first_center, 8u);
  EXPECT_EQ(samples[2].recording, 1u);

  const std::vector<Sample> pick = {samples[1], samples[4]};
  const Batch b = d.make_batch(pick);
  EXPECT_EQ(b.gray.shape(), (Shape{10, 7, 96, 96}));
  EXPECT_EQ(b.flow.shape(), (Shape{10, 12, 96, 96}));
  EXPECT_EQ(b.target.shape(), (Shape{10, 64 * 64}));
  const std::size_t P = 96 * 96, t = 2, s = 1, row = t * 2 + s;
  const std::size_t center = pick[s].first_center + t;
  for (std::size_t k : {0u, 3u, 6u}) {
    const Frame f = d.lip_frame(pick[s].recording, center - 3 + k);
    for (std::size_t i = 0; i < P; i += 97) ASSERT_EQ(b.gray.value((row * 7 + k) * P + i), f.pixels[i]);
  }
  const FlowField fl = d.flow_field(pick[s].recording, center - 3 + 4);
  for (std::size_t i = 0; i < P; i += 89) {
    ASSERT_EQ(b.flow.value((row * 12 + 8) * P + i), fl.u.value(i));
    ASSERT_EQ(b.flow.value((row * 12 + 9) * P + i), fl.v.value(i));
  }
  const Frame tgt = d.target_frame(pick[s].recording, center);
  for (std::size_t i = 0; i < 64 * 64; i += 31) ASSERT_EQ(b.target.value(row * 4096 + i), tgt.pixels[i]);
  EXPECT_EQ(tgt.pixels, prepare_target(targets[pick[s].recording][center], 64, 64).pixels);
}

TEST(Dataset, ManifestParsing) {
  const fs::path dir = scratch("manifest");
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "m.txt");
    os << "# comment line\n\nrec/lip rec/us 1 2 30 40  # trailing comment\n/abs/lip /abs/us 0 0 5 5\n";
  }
  const auto e = read_manifest(dir / "m.txt");
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].lip_dir, dir / "rec/lip");
  EXPECT_EQ(e[0].roi.w, 30u);
  EXPECT_EQ(e[1].us_dir, fs::path("/abs/us"));
  {
    std::ofstream os(dir / "bad.txt");
    os << "rec/lip rec/us 1 2\n";
  }
  EXPECT_THROW(read_manifest(dir / "bad.txt"), ConfigError);
  EXPECT_THROW(read_manifest(dir / "missing.txt"), IoError);
  fs::remove_all(dir);
}

TEST_F(Pipeline, TrainWritesReproducibleArtifacts) {
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  const TrainReport r = run_train(config(), a);
  run_train(config(), b);
  EXPECT_EQ(r.epochs.size(), 2u);
  EXPECT_GT(r.baseline_val_mse, 0.0);
  ASSERT_TRUE(r.test.has_value());
  EXPECT_EQ(r.test->n_frames, 2u * 4 * 2);
  for (const char* f : {"checkpoint.bin", "report.txt", "report.kv", "config.toml"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_TRUE(fs::exists(a / "timing.kv"));

  const MetricsReport ev = run_eval(a / "checkpoint.bin", "test", a / "eval");
  EXPECT_EQ(ev.ssim.mean, r.test->ssim.mean);
  EXPECT_EQ(ev.msd.mean, r.test->msd.mean);
  EXPECT_THROW(run_eval(a / "checkpoint.bin", "holdout", a / "eval2"), UsageError);

  const fs::path pred = a / "pred";
  EXPECT_EQ(run_predict(a / "checkpoint.bin", *data_ / "seq_000000" / "lip", std::nullopt, pred), 8u);
  EXPECT_TRUE(fs::exists(pred / "frame_000001.png"));
  EXPECT_TRUE(fs::exists(pred / "frame_000008.png"));
  EXPECT_FALSE(fs::exists(pred / "frame_000000.png"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_F(Pipeline, ZeroLearningRateKeepsInitialWeights) {
  const RunConfig c = config({"train.lr=0.0"});
  const Dataset data = Dataset::load(c.manifest_path(), c.dataset_options());
  const Split split = split_dataset(8, c.split, c.train.seed);
  TrainResult r = train_model(c, data, split);
  const ModelParams init = init_params(c.model, c.train.seed);
  const auto got = r.params.parameters(), want = init.parameters();
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t k = 0; k < got.size(); ++k) EXPECT_EQ(got[k].second.to_vector(), want[k].second.to_vector());
  const auto& e = r.report.epochs;
  EXPECT_NEAR(e[0].val_loss, e[1].val_loss, 1e-3 * e[0].val_loss);
}

TEST_F(Pipeline, NondeterministicRunRecordsItsSeed) {
  const fs::path a = scratch("run_nd");
  run_train(config({"train.deterministic=false", "train.max_epochs=1"}), a);
  const RunConfig saved = load_config((a / "config.toml").string());
  EXPECT_TRUE(saved.train.deterministic);
  const fs::path b = scratch("run_nd_replay");
  run_train(saved, b);
  EXPECT_EQ(slurp(a / "checkpoint.bin"), slurp(b / "checkpoint.bin"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_F(Pipeline, AblationHasFourRowsAndAttentionTraces) {
  const fs::path out = scratch("ablate");
  const auto rows = run_ablate(config({"train.max_epochs=1"}), out);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].variant, "raw-only");
  EXPECT_EQ(rows[1].variant, "w/o OF");
  EXPECT_EQ(rows[2].variant, "w/o AT");
  EXPECT_EQ(rows[3].variant, "full");
  for (std::size_t i : {0u, 2u}) {
    EXPECT_EQ(rows[i].attention_min, 1.0);
    EXPECT_EQ(rows[i].attention_max, 1.0);
  }
  for (std::size_t i : {1u, 3u}) {
    EXPECT_GT(rows[i].attention_min, 0.0);
    EXPECT_LT(rows[i].attention_max, 1.0);
  }
  const std::string kv = slurp(out / "report.kv");
  EXPECT_NE(kv.find("rows=4"), std::string::npos);
  EXPECT_NE(kv.find("ablation.w_o_AT.ssim.mean="), std::string::npos);
  fs::remove_all(out);
}

TEST_F(Pipeline, CliExitCodes) {
  const fs::path cfg = scratch("cli_cfg.toml");
  {
    std::ofstream os(cfg);
    os << tiny_toml(*data_);
  }
  const fs::path out = scratch("cli_run");
  EXPECT_EQ(cli({"train", "--config", cfg.string(), "--set", "train.max_epochs=1", "--out", out.string()}), 0);
  EXPECT_TRUE(fs::exists(out / "checkpoint.bin"));
  EXPECT_EQ(cli({"eval", "--ckpt", (out / "checkpoint.bin").string(), "--split", "val"}), 0);
  EXPECT_TRUE(fs::exists(out / "eval_val" / "report.kv"));
  const fs::path pred = out / "pred";
  EXPECT_EQ(cli({"predict", "--ckpt", (out / "checkpoint.bin").string(), "--in",
                 (*data_ / "seq_000001" / "lip").string(), "--out", pred.string()}),
            0);
  EXPECT_EQ(cli({"metrics", "--pred", pred.string(), "--target", pred.string(), "--out", (out / "m").string()}), 0);
  EXPECT_TRUE(fs::exists(out / "m" / "metrics.csv"));
  EXPECT_EQ(cli({"flow", "--config", cfg.string(), "--in", (*data_ / "seq_000001" / "lip").string(), "--roi",
                 "0,0,32,32", "--out", (out / "flow").string(), "--png"}),
            0);
  EXPECT_TRUE(fs::exists(out / "flow" / "flow_000000.flo"));

  EXPECT_EQ(cli({}), 2);
  EXPECT_EQ(cli({"fly"}), 2);
  EXPECT_EQ(cli({"train", "--config", cfg.string(), "--set", "train.bogus=1"}), 2);
  EXPECT_EQ(cli({"eval", "--ckpt", (out / "checkpoint.bin").string(), "--split", "nope"}), 2);
  EXPECT_EQ(cli({"flow", "--in", (*data_ / "seq_000001" / "lip").string(), "--roi", "1,2,3", "--out",
                 (out / "f2").string()}),
            2);
  EXPECT_EQ(cli({"train", "--config", cfg.string(), "--set", "data.dir=/nonexistent/lip2us", "--out",
                 (out / "missing").string()}),
            1);
  EXPECT_FALSE(fs::exists(out / "missing"));
  EXPECT_EQ(cli({"flow", "--in", (*data_ / "seq_000001" / "lip").string(), "--roi", "20,20,30,30", "--out",
                 (out / "f3").string()}),
            1);
  fs::remove_all(out);
  fs::remove(cfg);
}
