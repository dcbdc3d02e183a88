#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lip2us/flow.hpp"
#include "lip2us/image.hpp"
#include "lip2us/preproc.hpp"
#include "lip2us/tensor.hpp"

namespace lip2us {

// One manifest line: "<lip_dir> <ultrasound_dir> <x> <y> <w> <h>". Relative
// directories resolve against the manifest's directory; '#' starts a comment.
struct RecordingEntry {
  std::filesystem::path lip_dir;
  std::filesystem::path us_dir;
  RoiSpec roi;
};

std::vector<RecordingEntry> read_manifest(const std::filesystem::path& manifest);

struct DatasetOptions {
  std::size_t in_w = 96;
  std::size_t in_h = 96;
  std::size_t clip_len = 7;
  std::size_t seq_len = 5;
  std::size_t out_w = 64;
  std::size_t out_h = 64;
  bool with_flow = true;
  FlowOptions flow;
};

/// Loads a lip frame directory, crops and resizes every frame to in_w x in_h
/// and requantises to 8 bits (the form the dataset keeps in memory).
std::vector<Frame> load_lip_frames(const std::filesystem::path& dir, const RoiSpec& roi, std::size_t in_w,
                                   std::size_t in_h);
std::vector<Frame> prepare_lip_frames(const std::vector<Frame>& raw, const RoiSpec& roi, std::size_t in_w,
                                      std::size_t in_h);
Frame prepare_target(const Frame& raw, std::size_t out_w, std::size_t out_h);

/// Centres whose N-frame clip fits in a sequence of the given length.
std::vector<std::size_t> valid_centers(std::size_t n_frames, std::size_t clip_len);

// T consecutive clip centres of one recording, starting at first_center.
struct Sample {
  std::size_t recording = 0;
  std::size_t first_center = 0;
};

// Time-major batch: row t*B + b holds time step t of sample b.
struct Batch {
  Tensor gray;    // [T*B, N, H, W]
  Tensor flow;    // [T*B, (N-1)*2, H, W], undefined without flow
  Tensor target;  // [T*B, out_h*out_w]
  std::size_t size = 0;
};

// One recording, already at the dataset's lip and target sizes.
struct RecordingFrames {
  std::vector<Frame> lips;
  std::vector<Frame> targets;
};

using RecordingSource = std::function<RecordingFrames(std::size_t)>;

class Dataset {
 public:
  /// Preprocessed recordings: lips already at in_w x in_h, targets at
  /// out_w x out_h. Flow fields are computed here when options.with_flow.
  static Dataset build(std::vector<std::vector<Frame>> lips, std::vector<std::vector<Frame>> targets,
                       const DatasetOptions& options);
  /// Same, pulling recording r from source(r) so only the recordings being
  /// processed are held as float frames. source must be safe to call
  /// concurrently.
  static Dataset build(std::size_t n, const RecordingSource& source, const DatasetOptions& options);

  /// Reads the listed recordings of a manifest (all when ids is empty).
  static Dataset load(const std::filesystem::path& manifest, const DatasetOptions& options,
                      const std::vector<std::size_t>& ids = {});

  const DatasetOptions& options() const { return options_; }
  std::size_t recordings() const { return lips_.size(); }
  std::size_t frames(std::size_t recording) const { return lips_[recording].size() / plane(); }

  /// Non-overlapping T-windows of valid centres for the given recordings, in
  /// recording order.
  std::vector<Sample> samples(std::span<const std::size_t> recordings) const;
  std::vector<Sample> samples() const;

  Batch make_batch(std::span<const Sample> samples) const;

  Frame lip_frame(std::size_t recording, std::size_t index) const;
  Frame target_frame(std::size_t recording, std::size_t index) const;
  FlowField flow_field(std::size_t recording, std::size_t pair) const;

 private:
  std::size_t plane() const { return options_.in_w * options_.in_h; }
  std::size_t target_plane() const { return options_.out_w * options_.out_h; }

  DatasetOptions options_;
  std::vector<std::vector<std::uint8_t>> lips_;     // per recording, frames * plane
  std::vector<std::vector<std::uint8_t>> targets_;  // per recording, frames * target_plane
  std::vector<std::vector<float>> flows_;           // per recording, pairs * 2 * plane (u then v)
};

}  // namespace lip2us
