#include "lip2us/preproc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lip2us {

Frame crop_roi(const Frame& frame, const RoiSpec& roi) {
  if (roi.w == 0 || roi.h == 0) throw BoundsError("crop_roi: empty roi");
  if (roi.x >= frame.width) throw BoundsError("crop_roi: left edge x=" + std::to_string(roi.x) + " outside frame width " + std::to_string(frame.width));
  if (roi.y >= frame.height) throw BoundsError("crop_roi: top edge y=" + std::to_string(roi.y) + " outside frame height " + std::to_string(frame.height));
  if (roi.x + roi.w > frame.width)
    throw BoundsError("crop_roi: right edge x+w=" + std::to_string(roi.x + roi.w) + " exceeds frame width " +
                      std::to_string(frame.width));
  if (roi.y + roi.h > frame.height)
    throw BoundsError("crop_roi: bottom edge y+h=" + std::to_string(roi.y + roi.h) + " exceeds frame height " +
                      std::to_string(frame.height));
  Frame out(roi.w, roi.h);
  for (std::size_t j = 0; j < roi.h; ++j)
    for (std::size_t i = 0; i < roi.w; ++i) out.at(i, j) = frame.at(roi.x + i, roi.y + j);
  return out;
}

Frame resize_bilinear(const Frame& frame, std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) throw ConfigError("resize_bilinear: output dimensions must be >= 1");
  if (frame.width == 0 || frame.height == 0) throw DimensionError("resize_bilinear: empty input frame");
  if (out_w == frame.width && out_h == frame.height) return frame;
  const double sx = out_w > 1 ? static_cast<double>(frame.width - 1) / static_cast<double>(out_w - 1) : 0.0;
  const double sy = out_h > 1 ? static_cast<double>(frame.height - 1) / static_cast<double>(out_h - 1) : 0.0;
  Frame out(out_w, out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = static_cast<double>(y) * sy;
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), frame.height - 1);
    const std::size_t y1 = std::min(y0 + 1, frame.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = static_cast<double>(x) * sx;
      const std::size_t x0 = std::min(static_cast<std::size_t>(fx), frame.width - 1);
      const std::size_t x1 = std::min(x0 + 1, frame.width - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = (1.0 - wx) * frame.at(x0, y0) + wx * frame.at(x1, y0);
      const double bottom = (1.0 - wx) * frame.at(x0, y1) + wx * frame.at(x1, y1);
      out.at(x, y) = static_cast<float>(std::clamp((1.0 - wy) * top + wy * bottom, 0.0, 1.0));
    }
  }
  return out;
}

Frame preprocess_frame(const Frame& frame, const RoiSpec& roi, std::size_t out_w, std::size_t out_h) {
  return resize_bilinear(crop_roi(frame, roi), out_w, out_h);
}

Clip assemble_clip(const std::vector<Frame>& frames, std::size_t center, std::size_t n) {
  if (n == 0) throw ConfigError("assemble_clip: clip length must be >= 1");
  const std::size_t half = n / 2;
  if (center < half || center - half + n > frames.size())
    throw RangeError("assemble_clip: clip of " + std::to_string(n) + " frames centred at " +
                     std::to_string(center) + " does not fit a sequence of " + std::to_string(frames.size()));
  Clip clip;
  clip.center = center;
  for (std::size_t k = 0; k < n; ++k) {
    const Frame& f = frames[center - half + k];
    if (!clip.frames.empty() && !f.same_size(clip.frames.front()))
      throw DimensionError("assemble_clip: frame " + std::to_string(center - half + k) + " has a different size");
    clip.frames.push_back(f);
  }
  return clip;
}

Tensor clip_to_tensor(const Clip& clip) {
  if (clip.frames.empty()) throw UsageError("clip_to_tensor: empty clip");
  const std::size_t n = clip.length(), h = clip.height(), w = clip.width();
  std::vector<float> values;
  values.reserve(n * h * w);
  for (const auto& f : clip.frames) values.insert(values.end(), f.pixels.begin(), f.pixels.end());
  return Tensor::from({n, h, w}, std::move(values));
}

std::vector<Frame> tensor_to_frames(const Tensor& stack) {
  if (stack.rank() != 3) throw DimensionError("tensor_to_frames: expected [N,H,W], got " + to_string(stack.shape()));
  const std::size_t n = stack.dim(0), h = stack.dim(1), w = stack.dim(2);
  const auto values = stack.to(DType::f32);
  const auto data = values.data<float>();
  std::vector<Frame> out;
  for (std::size_t k = 0; k < n; ++k) {
    Frame f(w, h);
    std::copy_n(data.begin() + k * h * w, h * w, f.pixels.begin());
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace lip2us
