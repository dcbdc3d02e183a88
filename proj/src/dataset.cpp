#include "lip2us/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "lip2us/error.hpp"
#include "lip2us/parallel.hpp"

namespace lip2us {

namespace fs = std::filesystem;

namespace {

Frame requantize(Frame f) {
  for (auto& p : f.pixels) p = static_cast<float>(to_byte(p)) / 255.0f;
  return f;
}

void append_bytes(std::vector<std::uint8_t>& dst, const Frame& f) {
  for (float p : f.pixels) dst.push_back(to_byte(p));
}

}  // namespace

std::vector<RecordingEntry> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  const fs::path base = manifest.parent_path();
  std::vector<RecordingEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string lip, us;
    if (!(ls >> lip)) continue;
    RecordingEntry e;
    long long x = 0, y = 0, w = 0, h = 0;
    if (!(ls >> us >> x >> y >> w >> h) || x < 0 || y < 0 || w <= 0 || h <= 0)
      throw ConfigError(manifest.string() + ":" + std::to_string(line_no) +
                        ": expected '<lip_dir> <us_dir> <x> <y> <w> <h>' with non-negative x,y and positive w,h");
    std::string extra;
    if (ls >> extra) throw ConfigError(manifest.string() + ":" + std::to_string(line_no) + ": trailing field '" + extra + "'");
    e.lip_dir = fs::path(lip).is_absolute() ? fs::path(lip) : base / lip;
    e.us_dir = fs::path(us).is_absolute() ? fs::path(us) : base / us;
    e.roi = {static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(w),
             static_cast<std::size_t>(h)};
    out.push_back(std::move(e));
  }
  if (out.empty()) throw ConfigError("manifest " + manifest.string() + " lists no recordings");
  return out;
}

std::vector<Frame> prepare_lip_frames(const std::vector<Frame>& raw, const RoiSpec& roi, std::size_t in_w,
                                      std::size_t in_h) {
  std::vector<Frame> out;
  out.reserve(raw.size());
  for (const auto& f : raw) out.push_back(requantize(preprocess_frame(f, roi, in_w, in_h)));
  return out;
}

std::vector<Frame> load_lip_frames(const fs::path& dir, const RoiSpec& roi, std::size_t in_w, std::size_t in_h) {
  std::vector<Frame> raw;
  for (const auto& p : list_frames(dir)) raw.push_back(read_image(p));
  if (raw.empty()) throw IoError("no frame_%06d images in " + dir.string());
  return prepare_lip_frames(raw, roi, in_w, in_h);
}

Frame prepare_target(const Frame& raw, std::size_t out_w, std::size_t out_h) {
  return requantize(resize_bilinear(raw, out_w, out_h));
}

std::vector<std::size_t> valid_centers(std::size_t n_frames, std::size_t clip_len) {
  std::vector<std::size_t> out;
  const std::size_t half = clip_len / 2;
  for (std::size_t c = half; c + clip_len - half <= n_frames; ++c) out.push_back(c);
  return out;
}

Dataset Dataset::build(std::vector<std::vector<Frame>> lips, std::vector<std::vector<Frame>> targets,
                       const DatasetOptions& options) {
  if (lips.size() != targets.size())
    throw DimensionError("dataset: " + std::to_string(lips.size()) + " lip sequences but " +
                         std::to_string(targets.size()) + " target sequences");
  return build(lips.size(), [&](std::size_t r) {
    RecordingFrames f{std::move(lips[r]), std::move(targets[r])};
    lips[r] = {};
    targets[r] = {};
    return f;
  }, options);
}

Dataset Dataset::build(std::size_t n, const RecordingSource& source, const DatasetOptions& options) {
  if (n == 0) throw ConfigError("dataset: no recordings");
  if (options.clip_len == 0 || options.seq_len == 0) throw ConfigError("dataset: clip_len and seq_len must be >= 1");
  if (options.with_flow && options.clip_len < 2) throw ConfigError("dataset: flow needs clip_len >= 2");
  Dataset d;
  d.options_ = options;
  d.lips_.resize(n);
  d.targets_.resize(n);
  d.flows_.resize(n);
  parallel_for(n, [&](std::size_t r) {
    const RecordingFrames rec = source(r);
    if (rec.lips.size() != rec.targets.size())
      throw DimensionError("dataset: recording " + std::to_string(r) + " has " + std::to_string(rec.lips.size()) +
                           " lip frames but " + std::to_string(rec.targets.size()) + " target frames");
    for (const auto& f : rec.lips)
      if (f.width != options.in_w || f.height != options.in_h)
        throw DimensionError("dataset: recording " + std::to_string(r) + " lip frame is " + std::to_string(f.width) +
                             "x" + std::to_string(f.height) + ", expected " + std::to_string(options.in_w) + "x" +
                             std::to_string(options.in_h));
    for (const auto& f : rec.targets)
      if (f.width != options.out_w || f.height != options.out_h)
        throw DimensionError("dataset: recording " + std::to_string(r) + " target frame is " +
                             std::to_string(f.width) + "x" + std::to_string(f.height) + ", expected " +
                             std::to_string(options.out_w) + "x" + std::to_string(options.out_h));
    for (const auto& f : rec.lips) append_bytes(d.lips_[r], f);
    for (const auto& f : rec.targets) append_bytes(d.targets_[r], f);
    if (options.with_flow && rec.lips.size() >= 2) {
      // Flow is computed on the 8-bit frames the model actually sees.
      const std::size_t plane = options.in_w * options.in_h;
      auto& dst = d.flows_[r];
      dst.resize((rec.lips.size() - 1) * 2 * plane);
      Frame prev = d.lip_frame(r, 0);
      for (std::size_t k = 0; k + 1 < rec.lips.size(); ++k) {
        Frame next = d.lip_frame(r, k + 1);
        const FlowField f = horn_schunck(prev, next, options.flow.alpha, options.flow.iterations);
        std::copy_n(f.u.data<float>().begin(), plane, dst.begin() + (2 * k) * plane);
        std::copy_n(f.v.data<float>().begin(), plane, dst.begin() + (2 * k + 1) * plane);
        prev = std::move(next);
      }
    }
  });
  return d;
}

Dataset Dataset::load(const fs::path& manifest, const DatasetOptions& options, const std::vector<std::size_t>& ids) {
  const auto entries = read_manifest(manifest);
  std::vector<std::size_t> pick = ids;
  if (pick.empty())
    for (std::size_t i = 0; i < entries.size(); ++i) pick.push_back(i);
  for (std::size_t r : pick)
    if (r >= entries.size())
      throw RangeError("dataset: recording " + std::to_string(r) + " not in manifest of " +
                       std::to_string(entries.size()));
  return build(pick.size(), [&](std::size_t k) {
    const auto& e = entries[pick[k]];
    RecordingFrames f;
    f.lips = load_lip_frames(e.lip_dir, e.roi, options.in_w, options.in_h);
    for (const auto& p : list_frames(e.us_dir))
      f.targets.push_back(prepare_target(read_image(p), options.out_w, options.out_h));
    return f;
  }, options);
}

std::vector<Sample> Dataset::samples(std::span<const std::size_t> recordings) const {
  std::vector<Sample> out;
  const std::size_t T = options_.seq_len;
  for (std::size_t r : recordings) {
    if (r >= lips_.size()) throw RangeError("dataset: recording index " + std::to_string(r) + " out of range");
    const auto centers = valid_centers(frames(r), options_.clip_len);
    for (std::size_t k = 0; k + T <= centers.size(); k += T) out.push_back({r, centers[k]});
  }
  return out;
}

std::vector<Sample> Dataset::samples() const {
  std::vector<std::size_t> all(lips_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return samples(all);
}

Batch Dataset::make_batch(std::span<const Sample> samples) const {
  if (samples.empty()) throw UsageError("make_batch: no samples");
  const std::size_t B = samples.size(), T = options_.seq_len, N = options_.clip_len;
  const std::size_t P = plane(), Q = target_plane(), half = N / 2;
  const bool flow = options_.with_flow;
  Batch batch;
  batch.size = B;
  batch.gray = Tensor({T * B, N, options_.in_h, options_.in_w});
  batch.target = Tensor({T * B, Q});
  if (flow) batch.flow = Tensor({T * B, (N - 1) * 2, options_.in_h, options_.in_w});
  auto gray = batch.gray.mutable_data<float>();
  auto target = batch.target.mutable_data<float>();
  std::span<float> fl = flow ? batch.flow.mutable_data<float>() : std::span<float>();
  parallel_for(T * B, [&](std::size_t row) {
    const std::size_t t = row / B, b = row % B;
    const Sample& s = samples[b];
    const std::size_t center = s.first_center + t;
    if (center < half || center - half + N > frames(s.recording))
      throw RangeError("make_batch: clip centred at " + std::to_string(center) + " leaves recording " +
                       std::to_string(s.recording));
    const std::size_t first = center - half;
    const auto& lip = lips_[s.recording];
    for (std::size_t k = 0; k < N; ++k) {
      const std::uint8_t* src = lip.data() + (first + k) * P;
      float* dst = gray.data() + (row * N + k) * P;
      for (std::size_t i = 0; i < P; ++i) dst[i] = static_cast<float>(src[i]) / 255.0f;
    }
    if (flow) {
      const std::size_t C = (N - 1) * 2;
      std::copy_n(flows_[s.recording].begin() + first * 2 * P, C * P, fl.begin() + row * C * P);
    }
    const std::uint8_t* tsrc = targets_[s.recording].data() + center * Q;
    for (std::size_t i = 0; i < Q; ++i) target[row * Q + i] = static_cast<float>(tsrc[i]) / 255.0f;
  });
  return batch;
}

Frame Dataset::lip_frame(std::size_t recording, std::size_t index) const {
  std::vector<std::uint8_t> bytes(lips_[recording].begin() + index * plane(),
                                  lips_[recording].begin() + (index + 1) * plane());
  return from_bytes(options_.in_w, options_.in_h, bytes);
}

Frame Dataset::target_frame(std::size_t recording, std::size_t index) const {
  const std::size_t Q = target_plane();
  std::vector<std::uint8_t> bytes(targets_[recording].begin() + index * Q, targets_[recording].begin() + (index + 1) * Q);
  return from_bytes(options_.out_w, options_.out_h, bytes);
}

FlowField Dataset::flow_field(std::size_t recording, std::size_t pair) const {
  if (!options_.with_flow) throw UsageError("dataset was built without flow");
  const std::size_t P = plane();
  const auto& src = flows_[recording];
  std::vector<float> u(src.begin() + 2 * pair * P, src.begin() + (2 * pair + 1) * P);
  std::vector<float> v(src.begin() + (2 * pair + 1) * P, src.begin() + (2 * pair + 2) * P);
  return {Tensor::from({options_.in_h, options_.in_w}, std::move(u)),
          Tensor::from({options_.in_h, options_.in_w}, std::move(v))};
}

}  // namespace lip2us
