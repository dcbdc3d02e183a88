#pragma once

#include <cstddef>
#include <vector>

#include "lip2us/image.hpp"
#include "lip2us/tensor.hpp"

namespace lip2us {

// Mouth region in source pixel coordinates, chosen per recording.
struct RoiSpec {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t w = 0;
  std::size_t h = 0;
};

// N consecutive frames of identical size; center is the index of the middle
// frame in the source sequence.
struct Clip {
  std::vector<Frame> frames;
  std::size_t center = 0;

  std::size_t length() const { return frames.size(); }
  std::size_t width() const { return frames.empty() ? 0 : frames.front().width; }
  std::size_t height() const { return frames.empty() ? 0 : frames.front().height; }
};

Frame crop_roi(const Frame& frame, const RoiSpec& roi);

/// Corner-aligned bilinear resampling: output pixel x maps to source
/// x * (W_in - 1) / (W_out - 1) (0 when W_out == 1), likewise for y.
Frame resize_bilinear(const Frame& frame, std::size_t out_w, std::size_t out_h);

/// crop followed by resize to out_w x out_h.
Frame preprocess_frame(const Frame& frame, const RoiSpec& roi, std::size_t out_w, std::size_t out_h);

/// Frames center - N/2 ... center - N/2 + N - 1; RangeError when they do not
/// all exist.
Clip assemble_clip(const std::vector<Frame>& frames, std::size_t center, std::size_t n);

Tensor clip_to_tensor(const Clip& clip);
std::vector<Frame> tensor_to_frames(const Tensor& stack);

}  // namespace lip2us
