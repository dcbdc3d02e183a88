#include "lip2us/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "lip2us/checkpoint.hpp"
#include "lip2us/error.hpp"
#include "lip2us/flow.hpp"
#include "lip2us/parallel.hpp"

namespace lip2us {

namespace fs = std::filesystem;

namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

Frame row_to_frame(const Tensor& images, std::size_t row, std::size_t w, std::size_t h) {
  Frame f(w, h);
  const auto data = images.data<float>();
  std::copy_n(data.begin() + row * w * h, w * h, f.pixels.begin());
  return f;
}

std::string largest_norms(const ModelParams& params) {
  auto norms = parameter_norms(params);
  std::sort(norms.begin(), norms.end(), [](const auto& a, const auto& b) {
    const bool an = !std::isfinite(a.second), bn = !std::isfinite(b.second);
    if (an != bn) return an;
    return a.second > b.second;
  });
  std::ostringstream os;
  for (std::size_t i = 0; i < std::min<std::size_t>(3, norms.size()); ++i)
    os << (i ? ", " : "") << norms[i].first << "=" << norms[i].second;
  return os.str();
}

std::uint64_t resolve_seed(const TrainOptions& t) {
  if (t.deterministic) return t.seed;
  std::random_device rd;
  // 63 bits so the seed fits a TOML integer in the saved config.
  return ((static_cast<std::uint64_t>(rd()) << 32) ^ rd()) & 0x7fffffffffffffffULL;
}

}  // namespace

Split split_dataset(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
  if (n == 0) throw ConfigError("split_dataset: no items to split");
  for (double x : {f.train, f.val, f.test})
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("split_dataset: fractions must lie in [0,1]");
  if (std::fabs(f.train + f.val + f.test - 1.0) > 1e-9) throw ConfigError("split_dataset: fractions must sum to 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(f.val * static_cast<double>(n) + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(f.test * static_cast<double>(n) + 1e-9));
  Split s;
  const std::size_t n_train = n - n_val - n_test;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

double evaluate_mse(ModelParams& params, const Dataset& data, std::span<const Sample> samples,
                    std::size_t batch_size) {
  if (samples.empty()) throw ConfigError("evaluate_mse: no samples");
  NoGradGuard no_grad;
  std::mt19937_64 rng(0);
  double se = 0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
    const auto chunk = samples.subspan(begin, std::min(batch_size, samples.size() - begin));
    const Batch b = data.make_batch(chunk);
    const SequenceOutput out = forward_sequence(b.gray, b.flow, b.size, params, Mode::infer, rng);
    const auto p = out.images.data<float>();
    const auto t = b.target.data<float>();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = static_cast<double>(p[i]) - t[i];
      se += d * d;
    }
    count += p.size();
  }
  return se / static_cast<double>(count);
}

double baseline_mse(const Dataset& data, std::span<const Sample> train, std::span<const Sample> eval) {
  if (train.empty() || eval.empty()) throw ConfigError("baseline_mse: empty sample set");
  const auto& o = data.options();
  const std::size_t Q = o.out_w * o.out_h;
  std::vector<double> mean(Q, 0.0);
  std::size_t n = 0;
  for (const auto& s : train)
    for (std::size_t t = 0; t < o.seq_len; ++t) {
      const Frame f = data.target_frame(s.recording, s.first_center + t);
      for (std::size_t i = 0; i < Q; ++i) mean[i] += f.pixels[i];
      ++n;
    }
  for (auto& m : mean) m /= static_cast<double>(n);
  double se = 0;
  std::size_t count = 0;
  for (const auto& s : eval)
    for (std::size_t t = 0; t < o.seq_len; ++t) {
      const Frame f = data.target_frame(s.recording, s.first_center + t);
      for (std::size_t i = 0; i < Q; ++i) {
        const double d = mean[i] - f.pixels[i];
        se += d * d;
      }
      count += Q;
    }
  return se / static_cast<double>(count);
}

TrainResult train_model(const RunConfig& config, const Dataset& data, const Split& split,
                        const EpochCallback& on_epoch) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const TrainOptions& opt = config.train;
  const std::uint64_t seed = resolve_seed(opt);
  if (data.options().seq_len != config.model.seq_len || data.options().clip_len != config.model.clip_len ||
      data.options().in_w != config.model.in_w || data.options().in_h != config.model.in_h ||
      data.options().out_w != config.model.out_w || data.options().out_h != config.model.out_h)
    throw ConfigError("train: dataset geometry does not match the model configuration");
  const auto& v = config.model.variant;
  if (v.flow_tower() && v.use_flow && !data.options().with_flow)
    throw ConfigError("train: the model reads optical flow but the dataset was built without it");

  const std::vector<Sample> train_samples = data.samples(split.train);
  const std::vector<Sample> val_samples = data.samples(split.val);
  if (train_samples.empty()) throw ConfigError("train: the training split has no complete sequences");
  if (val_samples.empty()) throw ConfigError("train: the validation split has no complete sequences");

  TrainResult result;
  result.params = init_params(config.model, seed);
  ModelParams& params = result.params;
  params.set_requires_grad(true);
  std::vector<Tensor> plist = params.parameter_list();
  result.adam = AdamState::for_params(plist, {opt.lr, opt.beta1, opt.beta2, opt.epsilon});

  TrainReport& report = result.report;
  report.train_samples = train_samples.size();
  report.val_samples = val_samples.size();
  report.baseline_val_mse = baseline_mse(data, train_samples, val_samples);
  report.best_val_loss = std::numeric_limits<double>::infinity();

  std::vector<NamedTensor> best;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    std::vector<Sample> order = train_samples;
    std::mt19937_64 shuffle_rng(seed + epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 dropout_rng = derived_rng(seed, epoch, 1);

    double loss_sum = 0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += opt.batch_size, ++batch_index) {
      const std::span<const Sample> chunk(order.data() + begin, std::min(opt.batch_size, order.size() - begin));
      const Batch b = data.make_batch(chunk);
      double loss_value = 0;
      try {
        const SequenceOutput out = forward_sequence(b.gray, b.flow, b.size, params, Mode::train, dropout_rng);
        const Tensor loss = mse_loss(out.images, b.target);
        loss_value = loss.item();
        params.zero_grad();
        backward(loss);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + " (" + e.what() + "); largest parameter norms: " +
                           largest_norms(params));
      }
      if (!std::isfinite(loss_value))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + "; largest parameter norms: " + largest_norms(params));
      adam_step(plist, result.adam);
      loss_sum += loss_value * static_cast<double>(chunk.size());
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(order.size());
    log.val_loss = evaluate_mse(params, data, val_samples, opt.batch_size);
    if (!std::isfinite(log.val_loss))
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch) +
                         "; largest parameter norms: " + largest_norms(params));
    report.epochs.push_back(log);
    if (on_epoch) on_epoch(log);

    if (log.val_loss < report.best_val_loss) {
      report.best_val_loss = log.val_loss;
      report.best_epoch = epoch;
      best.clear();
      for (const auto& nt : model_tensors(params)) best.push_back({nt.name, nt.tensor.clone()});
      since_best = 0;
    } else if (++since_best >= opt.patience) {
      report.early_stopped = true;
      break;
    }
  }
  load_model_tensors(params, best);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

Evaluation evaluate(ModelParams& params, const Dataset& data, std::span<const Sample> samples,
                    std::size_t batch_size, const ContourOptions& contour) {
  if (samples.empty()) throw ConfigError("evaluate: no samples in the split");
  NoGradGuard no_grad;
  std::mt19937_64 rng(0);
  const auto& o = data.options();
  Evaluation ev;
  // Frames are gathered sample-major: sample s, time step t.
  for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
    const auto chunk = samples.subspan(begin, std::min(batch_size, samples.size() - begin));
    const Batch b = data.make_batch(chunk);
    const SequenceOutput out = forward_sequence(b.gray, b.flow, b.size, params, Mode::infer, rng);
    const std::size_t B = b.size;
    for (std::size_t s = 0; s < B; ++s)
      for (std::size_t t = 0; t < o.seq_len; ++t) {
        const std::size_t row = t * B + s;
        ev.predictions.push_back(row_to_frame(out.images, row, o.out_w, o.out_h));
        ev.targets.push_back(row_to_frame(b.target, row, o.out_w, o.out_h));
        ev.attention.push_back(out.attention[t].value(s));
      }
  }
  ev.metrics = evaluate_frames(ev.predictions, ev.targets, contour);
  return ev;
}

std::vector<AblationRow> ablate(const RunConfig& config, const Dataset& data, const Split& split,
                                const EpochCallback& on_epoch) {
  struct Spec {
    const char* name;
    Variant flags;
  };
  const Spec specs[] = {{"raw-only", {true, false, true}},
                        {"w/o OF", {false, true, false}},
                        {"w/o AT", {true, false, false}},
                        {"full", {true, true, false}}};
  const std::vector<Sample> test = data.samples(split.test);
  std::vector<AblationRow> rows;
  for (const auto& spec : specs) {
    RunConfig c = config;
    c.model.variant = spec.flags;
    TrainResult r = train_model(c, data, split, on_epoch);
    const Evaluation ev = evaluate(r.params, data, test, c.train.batch_size, c.contour);
    AblationRow row;
    row.variant = spec.name;
    row.flags = spec.flags;
    row.test = ev.metrics;
    row.attention_min = *std::min_element(ev.attention.begin(), ev.attention.end());
    row.attention_max = *std::max_element(ev.attention.begin(), ev.attention.end());
    row.train = std::move(r.report);
    row.train.test = ev.metrics;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(10) << "variant" << std::setw(20) << "SSIM" << "CW-SSIM\n";
  for (const auto& r : rows) {
    std::ostringstream s, c;
    s << std::fixed << std::setprecision(4) << r.test.ssim.mean << " +- " << r.test.ssim.std;
    c << std::fixed << std::setprecision(4) << r.test.cw_ssim.mean << " +- " << r.test.cw_ssim.std;
    os << std::left << std::setw(10) << r.variant << std::setw(20) << s.str() << c.str() << '\n';
  }
  return os.str();
}

std::vector<NamedTensor> checkpoint_tensors(const ModelParams& params, const AdamState& adam) {
  std::vector<NamedTensor> out = model_tensors(params);
  const auto named = params.parameters();
  for (std::size_t k = 0; k < named.size() && k < adam.m.size(); ++k) {
    out.push_back({"adam.m." + named[k].first, adam.m[k]});
    out.push_back({"adam.v." + named[k].first, adam.v[k]});
  }
  out.push_back({"adam.t", Tensor::scalar(static_cast<double>(adam.t))});
  return out;
}

void save_run_checkpoint(const fs::path& path, const ModelParams& params, const AdamState& adam) {
  save_checkpoint(path, checkpoint_tensors(params, adam));
}

ModelParams load_run_checkpoint(const fs::path& path, const ModelConfig& config) {
  ModelParams params = init_params(config, 0);
  load_model_tensors(params, load_checkpoint(path));
  return params;
}

std::string format_train_report(const TrainReport& r) {
  std::ostringstream os;
  os << "training\n";
  os << "  train sequences   " << r.train_samples << '\n';
  os << "  val sequences     " << r.val_samples << '\n';
  os << std::setprecision(6);
  os << "  baseline val MSE  " << r.baseline_val_mse << "  (per-pixel mean of training targets)\n";
  os << "  best epoch        " << r.best_epoch << "  val MSE " << r.best_val_loss << '\n';
  os << "  stopped           " << (r.early_stopped ? "early (patience)" : "at max_epochs") << " after "
     << r.epochs.size() << " epochs\n\n";
  os << "epoch  train_loss   val_loss\n";
  for (const auto& e : r.epochs) {
    char line[80];
    std::snprintf(line, sizeof line, "%5zu  %10.6f  %10.6f\n", e.epoch, e.train_loss, e.val_loss);
    os << line;
  }
  if (r.test) os << "\ntest\n" << format_metrics_table(*r.test);
  return os.str();
}

std::string metrics_kv(const MetricsReport& m, const std::string& prefix) {
  std::ostringstream os;
  os << prefix << "n_frames=" << m.n_frames << '\n';
  os << prefix << "ssim.mean=" << fmt(m.ssim.mean) << '\n' << prefix << "ssim.std=" << fmt(m.ssim.std) << '\n';
  os << prefix << "cw_ssim.mean=" << fmt(m.cw_ssim.mean) << '\n'
     << prefix << "cw_ssim.std=" << fmt(m.cw_ssim.std) << '\n';
  os << prefix << "msd.mean=" << fmt(m.msd.mean) << '\n' << prefix << "msd.std=" << fmt(m.msd.std) << '\n';
  os << prefix << "msd.contour=auto\n";
  os << prefix << "mse=" << fmt(m.mse) << '\n';
  return os.str();
}

std::string train_report_kv(const TrainReport& r) {
  std::ostringstream os;
  os << "train.samples=" << r.train_samples << '\n';
  os << "val.samples=" << r.val_samples << '\n';
  os << "epochs=" << r.epochs.size() << '\n';
  for (const auto& e : r.epochs) {
    os << "epoch." << e.epoch << ".train_loss=" << fmt(e.train_loss) << '\n';
    os << "epoch." << e.epoch << ".val_loss=" << fmt(e.val_loss) << '\n';
  }
  os << "best_epoch=" << r.best_epoch << '\n';
  os << "best_val_loss=" << fmt(r.best_val_loss) << '\n';
  os << "baseline_val_mse=" << fmt(r.baseline_val_mse) << '\n';
  os << "early_stopped=" << (r.early_stopped ? "true" : "false") << '\n';
  if (r.test) os << metrics_kv(*r.test, "test.");
  return os.str();
}

TrainReport run_train(RunConfig config, const fs::path& out_dir, const EpochCallback& on_epoch) {
  config.validate();
  if (!config.train.deterministic) {
    config.train.seed = resolve_seed(config.train);
    config.train.deterministic = true;  // the saved config replays this run
  }
  const auto entries = read_manifest(config.manifest_path());
  ensure_dir(out_dir);
  const Split split = split_dataset(entries.size(), config.split, config.train.seed);
  const Dataset data = Dataset::load(config.manifest_path(), config.dataset_options());
  TrainResult r = train_model(config, data, split, on_epoch);
  const std::vector<Sample> test = data.samples(split.test);
  if (!test.empty())
    r.report.test = evaluate(r.params, data, test, config.train.batch_size, config.contour).metrics;

  save_run_checkpoint(out_dir / "checkpoint.bin", r.params, r.adam);
  write_text(out_dir / "config.toml", to_toml(config));
  write_text(out_dir / "report.txt", format_train_report(r.report));
  write_text(out_dir / "report.kv", train_report_kv(r.report));
  write_text(out_dir / "timing.kv", "wall_seconds=" + fmt(r.report.wall_seconds) + "\n");
  return r.report;
}

MetricsReport run_eval(const fs::path& checkpoint, const std::string& split_name, const fs::path& out_dir,
                       const std::vector<std::string>& overrides) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path cfg_path = checkpoint.parent_path() / "config.toml";
  if (!fs::exists(cfg_path)) throw ConfigError("no config.toml next to checkpoint " + checkpoint.string());
  const RunConfig config = load_config(cfg_path.string(), overrides);
  const auto entries = read_manifest(config.manifest_path());
  const Split split = split_dataset(entries.size(), config.split, config.train.seed);
  const std::vector<std::size_t>* ids = nullptr;
  if (split_name == "val")
    ids = &split.val;
  else if (split_name == "test")
    ids = &split.test;
  else if (split_name == "train")
    ids = &split.train;
  else
    throw UsageError("unknown split '" + split_name + "' (expected train, val or test)");
  if (ids->empty()) throw ConfigError("split '" + split_name + "' is empty");
  ModelParams params = load_run_checkpoint(checkpoint, config.model);
  const Dataset data = Dataset::load(config.manifest_path(), config.dataset_options(), *ids);
  const std::vector<Sample> samples = data.samples();
  const Evaluation ev = evaluate(params, data, samples, config.train.batch_size, config.contour);

  ensure_dir(out_dir);
  std::ostringstream txt;
  txt << "evaluation of " << checkpoint.string() << " on split " << split_name << " (" << samples.size()
      << " sequences)\n"
      << format_metrics_table(ev.metrics);
  write_text(out_dir / "report.txt", txt.str());
  write_text(out_dir / "report.kv", "split=" + split_name + "\nsequences=" + std::to_string(samples.size()) + "\n" +
                                        metrics_kv(ev.metrics, split_name + "."));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text(out_dir / "timing.kv", "wall_seconds=" + fmt(secs) + "\n");
  return ev.metrics;
}

std::vector<AblationRow> run_ablate(RunConfig config, const fs::path& out_dir, const EpochCallback& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  if (!config.train.deterministic) {
    config.train.seed = resolve_seed(config.train);
    config.train.deterministic = true;
  }
  const auto entries = read_manifest(config.manifest_path());
  ensure_dir(out_dir);
  const Split split = split_dataset(entries.size(), config.split, config.train.seed);
  DatasetOptions dopt = config.dataset_options();
  dopt.with_flow = true;
  const Dataset data = Dataset::load(config.manifest_path(), dopt);
  const auto rows = ablate(config, data, split, on_epoch);

  std::ostringstream txt, kv;
  txt << "ablation on the test split (" << rows.front().test.n_frames << " frames)\n\n" << format_ablation_table(rows);
  txt << "\nattention factor range per variant\n";
  for (const auto& r : rows) {
    char line[96];
    std::snprintf(line, sizeof line, "  %-9s [%.6f, %.6f]\n", r.variant.c_str(), r.attention_min, r.attention_max);
    txt << line;
  }
  kv << "rows=" << rows.size() << '\n';
  for (const auto& r : rows) {
    std::string key = r.variant;
    std::replace(key.begin(), key.end(), ' ', '_');
    std::replace(key.begin(), key.end(), '/', '_');
    std::replace(key.begin(), key.end(), '-', '_');
    const std::string p = "ablation." + key + ".";
    kv << p << "ssim.mean=" << fmt(r.test.ssim.mean) << '\n' << p << "ssim.std=" << fmt(r.test.ssim.std) << '\n';
    kv << p << "cw_ssim.mean=" << fmt(r.test.cw_ssim.mean) << '\n'
       << p << "cw_ssim.std=" << fmt(r.test.cw_ssim.std) << '\n';
    kv << p << "attention.min=" << fmt(r.attention_min) << '\n' << p << "attention.max=" << fmt(r.attention_max) << '\n';
    kv << p << "best_epoch=" << r.train.best_epoch << '\n' << p << "best_val_loss=" << fmt(r.train.best_val_loss) << '\n';
  }
  write_text(out_dir / "config.toml", to_toml(config));
  write_text(out_dir / "report.txt", txt.str());
  write_text(out_dir / "report.kv", kv.str());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text(out_dir / "timing.kv", "wall_seconds=" + fmt(secs) + "\n");
  return rows;
}

std::size_t run_predict(const fs::path& checkpoint, const fs::path& lip_dir, const std::optional<RoiSpec>& roi,
                        const fs::path& out_dir) {
  const fs::path cfg_path = checkpoint.parent_path() / "config.toml";
  if (!fs::exists(cfg_path)) throw ConfigError("no config.toml next to checkpoint " + checkpoint.string());
  const RunConfig config = load_config(cfg_path.string());
  const ModelConfig& m = config.model;
  ModelParams params = load_run_checkpoint(checkpoint, m);

  std::vector<Frame> raw;
  for (const auto& p : list_frames(lip_dir)) raw.push_back(read_image(p));
  if (raw.empty()) throw IoError("no frame_%06d images in " + lip_dir.string());
  const RoiSpec r = roi.value_or(RoiSpec{0, 0, raw.front().width, raw.front().height});
  const std::vector<Frame> frames = prepare_lip_frames(raw, r, m.in_w, m.in_h);
  const std::vector<std::size_t> centers = valid_centers(frames.size(), m.clip_len);
  if (centers.empty())
    throw RangeError("predict: " + std::to_string(frames.size()) + " frames are fewer than one clip of " +
                     std::to_string(m.clip_len));
  const bool need_flow = m.variant.flow_tower() && m.variant.use_flow;
  std::vector<FlowField> pairs;
  if (need_flow) {
    pairs.resize(frames.size() - 1);
    parallel_for(pairs.size(), [&](std::size_t k) {
      pairs[k] = horn_schunck(frames[k], frames[k + 1], config.flow.alpha, config.flow.iterations);
    });
  }
  ensure_dir(out_dir);
  std::size_t written = 0;
  for (std::size_t begin = 0; begin < centers.size(); begin += m.seq_len) {
    const std::size_t end = std::min(centers.size(), begin + m.seq_len);
    std::vector<Tensor> clips, flows;
    for (std::size_t k = begin; k < end; ++k) {
      const Clip clip = assemble_clip(frames, centers[k], m.clip_len);
      clips.push_back(clip_to_tensor(clip));
      if (need_flow) {
        const std::size_t first = centers[k] - m.clip_len / 2;
        const auto first_pair = pairs.begin() + static_cast<std::ptrdiff_t>(first);
        const auto last_pair = first_pair + static_cast<std::ptrdiff_t>(m.clip_len - 1);
        flows.push_back(flow_stack(std::vector<FlowField>(first_pair, last_pair)));
      }
    }
    const std::vector<Tensor> images = predict_sequence(clips, flows, params);
    for (std::size_t k = 0; k < images.size(); ++k) {
      Frame f(m.out_w, m.out_h);
      for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = static_cast<float>(images[k].value(i));
      write_png(out_dir / frame_name(centers[begin + k]), f);
      ++written;
    }
  }
  return written;
}

MetricsReport run_metrics(const fs::path& pred_dir, const fs::path& target_dir, const ContourOptions& contour,
                          const fs::path& out_dir) {
  const auto preds = list_frames(pred_dir);
  if (preds.empty()) throw IoError("no frame_%06d images in " + pred_dir.string());
  std::vector<Frame> p, t;
  std::vector<std::string> names;
  for (const auto& path : preds) {
    const fs::path target = target_dir / path.filename();
    if (!fs::exists(target)) throw IoError("no target frame " + target.string() + " for " + path.string());
    p.push_back(read_image(path));
    t.push_back(read_image(target));
    names.push_back(path.filename().string());
  }
  const MetricsReport report = evaluate_frames(p, t, contour);
  ensure_dir(out_dir);
  std::ostringstream csv;
  csv << "frame,ssim,cw_ssim,msd,mse\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& f = report.frames[i];
    csv << names[i] << ',' << fmt(f.ssim) << ',' << fmt(f.cw_ssim) << ',' << fmt(f.msd) << ',' << fmt(f.mse) << '\n';
  }
  write_text(out_dir / "metrics.csv", csv.str());
  write_text(out_dir / "report.txt", format_metrics_table(report));
  write_text(out_dir / "report.kv", metrics_kv(report, ""));
  return report;
}

std::size_t run_flow(const fs::path& lip_dir, const std::optional<RoiSpec>& roi, const RunConfig& config,
                     const fs::path& out_dir, bool write_png_files) {
  std::vector<Frame> raw;
  for (const auto& p : list_frames(lip_dir)) raw.push_back(read_image(p));
  if (raw.size() < 2) throw ConfigError("flow: need at least two frames in " + lip_dir.string());
  const RoiSpec r = roi.value_or(RoiSpec{0, 0, raw.front().width, raw.front().height});
  const std::vector<Frame> frames = prepare_lip_frames(raw, r, config.model.in_w, config.model.in_h);
  ensure_dir(out_dir);
  parallel_for(frames.size() - 1, [&](std::size_t k) {
    const FlowField f = horn_schunck(frames[k], frames[k + 1], config.flow.alpha, config.flow.iterations);
    char name[32];
    std::snprintf(name, sizeof name, "flow_%06zu.flo", k);
    write_flow(out_dir / name, f);
    if (write_png_files) {
      std::snprintf(name, sizeof name, "flow_%06zu.png", k);
      write_png_rgb(out_dir / name, frames[k].width, frames[k].height, flow_to_rgb(f));
    }
  });
  return frames.size() - 1;
}

}  // namespace lip2us
