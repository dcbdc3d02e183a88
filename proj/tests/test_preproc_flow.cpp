#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "lip2us/flow.hpp"
#include "lip2us/preproc.hpp"

using namespace lip2us;
namespace fs = std::filesystem;

namespace {

Frame blob(std::size_t n, double cx, double cy, double sigma) {
  Frame f(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      f.at(x, y) = static_cast<float>(std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * sigma * sigma)));
  return f;
}

Frame noise(std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<float> u(0, 1);
  Frame f(w, h);
  for (auto& p : f.pixels) p = u(g);
  return f;
}

double variance(const FlowField& f) {
  const auto u = f.u.to_vector(), v = f.v.to_vector();
  double m = 0, m2 = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    m += u[i] + v[i];
    m2 += u[i] * u[i] + v[i] * v[i];
  }
  const double n = 2.0 * u.size();
  return m2 / n - (m / n) * (m / n);
}

}  // namespace

TEST(Crop, CopiesTheRegion) {
  const Frame f = noise(10, 8, 1);
  const Frame c = crop_roi(f, {2, 3, 5, 4});
  ASSERT_EQ(c.width, 5u);
  ASSERT_EQ(c.height, 4u);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 5; ++x) EXPECT_EQ(c.at(x, y), f.at(x + 2, y + 3));
  EXPECT_THROW(crop_roi(f, {6, 0, 5, 4}), BoundsError);
  EXPECT_THROW(crop_roi(f, {0, 5, 5, 4}), BoundsError);
  EXPECT_THROW(crop_roi(f, {0, 0, 0, 4}), BoundsError);
}

TEST(Resize, ReproducesAffineImagesExactly) {
  // Bilinear interpolation is exact on a*x + b*y + c, so the corner-aligned
  // mapping gives a closed form for every output pixel.
  Frame f(13, 9);
  for (std::size_t y = 0; y < 9; ++y)
    for (std::size_t x = 0; x < 13; ++x) f.at(x, y) = static_cast<float>(0.03 * x + 0.05 * y + 0.1);
  const Frame r = resize_bilinear(f, 7, 20);
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 7; ++x) {
      const double sx = x * 12.0 / 6.0, sy = y * 8.0 / 19.0;
      EXPECT_NEAR(r.at(x, y), 0.03 * sx + 0.05 * sy + 0.1, 1e-6);
    }
  EXPECT_EQ(r.at(0, 0), f.at(0, 0));
  EXPECT_EQ(r.at(6, 19), f.at(12, 8));
}

TEST(Resize, IdentityAndSinglePixel) {
  const Frame f = noise(6, 5, 2);
  EXPECT_EQ(resize_bilinear(f, 6, 5).pixels, f.pixels);
  const Frame one = resize_bilinear(f, 1, 1);
  EXPECT_EQ(one.at(0, 0), f.at(0, 0));
  EXPECT_THROW(resize_bilinear(f, 0, 3), ConfigError);
}

TEST(Clip, AssemblesCenteredWindow) {
  std::vector<Frame> frames;
  for (int i = 0; i < 10; ++i) frames.push_back(Frame(4, 3, static_cast<float>(i) / 10));
  const Clip c = assemble_clip(frames, 5, 7);
  ASSERT_EQ(c.length(), 7u);
  EXPECT_EQ(c.center, 5u);
  for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(c.frames[k].at(0, 0), frames[2 + k].at(0, 0));
  EXPECT_NO_THROW(assemble_clip(frames, 3, 7));
  EXPECT_NO_THROW(assemble_clip(frames, 6, 7));
  EXPECT_THROW(assemble_clip(frames, 2, 7), RangeError);
  EXPECT_THROW(assemble_clip(frames, 7, 7), RangeError);
  const Tensor t = clip_to_tensor(c);
  EXPECT_EQ(t.shape(), (Shape{7, 3, 4}));
  EXPECT_EQ(tensor_to_frames(t)[3].pixels, frames[5].pixels);
}

TEST(Clip, DefaultShapesMatchTheNetworkInputs) {
  std::vector<Frame> frames;
  for (int i = 0; i < 9; ++i) frames.push_back(preprocess_frame(noise(120, 100, i), {10, 5, 80, 70}, 96, 96));
  const Clip c = assemble_clip(frames, 4, 7);
  EXPECT_EQ(clip_to_tensor(c).shape(), (Shape{7, 96, 96}));
  EXPECT_EQ(flow_stack(c, 10.0, 5).shape(), (Shape{6, 2, 96, 96}));
}

TEST(HornSchunck, IdenticalFramesGiveExactlyZero) {
  const Frame f = noise(32, 24, 3);
  const FlowField fl = horn_schunck(f, f, 10.0, 100);
  for (double v : fl.u.to_vector()) EXPECT_EQ(v, 0.0);
  for (double v : fl.v.to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(HornSchunck, RecoversOnePixelTranslation) {
  for (const auto& [dx, dy] : {std::pair{1.0, 0.0}, std::pair{0.0, 1.0}, std::pair{-1.0, 0.0}}) {
    const Frame a = blob(48, 24, 24, 5), b = blob(48, 24 + dx, 24 + dy, 5);
    const FlowField fl = horn_schunck(a, b, 10.0, 100);
    double epe = 0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < 48; ++y)
      for (std::size_t x = 0; x < 48; ++x) {
        if (a.at(x, y) < 0.1) continue;
        const std::size_t i = y * 48 + x;
        epe += std::hypot(fl.u.value(i) - dx, fl.v.value(i) - dy);
        ++n;
      }
    EXPECT_LT(epe / n, 0.5) << "dx " << dx << " dy " << dy;
  }
}

TEST(HornSchunck, LargerAlphaSmoothsTheField) {
  const Frame a = noise(40, 40, 4), b = noise(40, 40, 5);
  double previous = variance(horn_schunck(a, b, 1.0, 100));
  for (double alpha : {10.0, 100.0}) {
    const double v = variance(horn_schunck(a, b, alpha, 100));
    EXPECT_LT(v, previous) << "alpha " << alpha;
    previous = v;
  }
  const Frame c = blob(48, 24, 24, 5), d = blob(48, 25, 24, 5);
  EXPECT_LT(variance(horn_schunck(c, d, 100.0, 100)), variance(horn_schunck(c, d, 10.0, 100)));
}

TEST(HornSchunck, RejectsBadArguments) {
  const Frame f = noise(8, 8, 6);
  EXPECT_THROW(horn_schunck(f, noise(8, 9, 7), 1.0, 10), DimensionError);
  EXPECT_THROW(horn_schunck(f, f, 0.0, 10), ConfigError);
  EXPECT_THROW(horn_schunck(f, f, 1.0, 0), ConfigError);
}

TEST(FlowFile, RoundTripsBitExactly) {
  const FlowField fl = horn_schunck(blob(20, 10, 10, 3), blob(20, 11, 10, 3), 10.0, 30);
  const fs::path p = fs::temp_directory_path() / "lip2us_test_flow.flo";
  write_flow(p, fl);
  const FlowField back = read_flow(p);
  EXPECT_EQ(back.u.to_vector(), fl.u.to_vector());
  EXPECT_EQ(back.v.to_vector(), fl.v.to_vector());
  EXPECT_EQ(flow_to_rgb(fl).size(), 20u * 20 * 3);
  fs::remove(p);
  EXPECT_THROW(read_flow(p), IoError);
}
