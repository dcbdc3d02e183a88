#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "lip2us/error.hpp"
#include "lip2us/metrics.hpp"

using namespace lip2us;
namespace fs = std::filesystem;

namespace {

Frame noise(std::size_t w, std::size_t h, std::uint64_t seed, double lo = 0, double hi = 1) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Frame f(w, h);
  for (auto& p : f.pixels) p = static_cast<float>(u(g));
  return f;
}

Frame add_noise(const Frame& f, double sd, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n(0, sd);
  Frame out = f;
  for (auto& p : out.pixels) p = static_cast<float>(std::clamp(p + n(g), 0.0, 1.0));
  return out;
}

// Gratings texture with a smooth spectrum, shifted by dx pixels.
Frame texture(std::size_t n, double dx) {
  Frame f(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double u = x + dx;
      f.at(x, y) = static_cast<float>(0.5 + 0.2 * std::sin(0.9 * u + 0.3 * y) + 0.15 * std::sin(0.4 * y - 1.3 * u) +
                                      0.1 * std::cos(2.1 * u + 1.7 * y));
    }
  return f;
}

// Window-by-window evaluation of the SSIM definition.
double reference_ssim(const Frame& a, const Frame& b) {
  const int r = 5;
  double w[11][11], wsum = 0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) wsum += w[i + r][j + r] = std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5));
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t cy = r; cy + r < a.height; ++cy)
    for (std::size_t cx = r; cx + r < a.width; ++cx) {
      double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) {
          const double k = w[i + r][j + r] / wsum;
          const double va = a.at(cx + j, cy + i), vb = b.at(cx + j, cy + i);
          ma += k * va;
          mb += k * vb;
          aa += k * va * va;
          bb += k * vb * vb;
          ab += k * va * vb;
        }
      const double sa = aa - ma * ma, sb = bb - mb * mb, sab = ab - ma * mb;
      total += (2 * ma * mb + c1) * (2 * sab + c2) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
      ++count;
    }
  return total / count;
}

Contour random_polyline(std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(-20, 20);
  Contour c;
  const std::size_t n = 2 + g() % 40;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({u(g), u(g)});
  return c;
}

// Full distance matrix, then row and column minima.
double brute_msd(const Contour& a, const Contour& b) {
  const std::size_t n = a.points.size(), m = b.points.size();
  std::vector<double> d(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double dx = a.points[i].x - b.points[j].x, dy = a.points[i].y - b.points[j].y;
      d[i * m + j] = std::sqrt(dx * dx + dy * dy);
    }
  double rows = 0, cols = 0;
  for (std::size_t i = 0; i < n; ++i) rows += *std::min_element(d.begin() + i * m, d.begin() + (i + 1) * m);
  for (std::size_t j = 0; j < m; ++j) {
    double best = d[j];
    for (std::size_t i = 1; i < n; ++i) best = std::min(best, d[i * m + j]);
    cols += best;
  }
  return (rows + cols) / static_cast<double>(n + m);
}

}  // namespace

TEST(Ssim, IdenticalImagesScoreOne) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Frame f = noise(40, 33, seed);
    EXPECT_NEAR(ssim(f, f), 1.0, 1e-12);
  }
}

TEST(Ssim, ConstantImagesMatchClosedForm) {
  for (const auto& [a, b] : {std::pair{0.2f, 0.7f}, std::pair{0.5f, 0.5f}, std::pair{0.0f, 1.0f},
                             std::pair{0.9f, 0.05f}}) {
    const double want = (2.0 * a * b + 1e-4) / (double(a) * a + double(b) * b + 1e-4);
    EXPECT_NEAR(ssim(Frame(20, 16, a), Frame(20, 16, b)), want, 1e-9);
  }
}

TEST(Ssim, MatchesWindowByWindowReference) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Frame a = noise(30, 24, seed), b = add_noise(a, 0.1, seed + 100);
    EXPECT_NEAR(ssim(a, b), reference_ssim(a, b), 1e-9);
  }
}

TEST(Ssim, DecreasesWithNoise) {
  const Frame f = texture(48, 0);
  double previous = 1.0;
  for (double sd : {0.02, 0.05, 0.1, 0.2}) {
    const double s = ssim(f, add_noise(f, sd, 7));
    EXPECT_LT(s, previous);
    previous = s;
  }
  EXPECT_THROW(ssim(Frame(10, 20), Frame(10, 20)), DimensionError);
  EXPECT_THROW(ssim(Frame(20, 20), Frame(21, 20)), DimensionError);
}

TEST(CwSsim, IdentityAndTranslationTolerance) {
  const Frame a = texture(48, 0), b = texture(48, 1);
  EXPECT_NEAR(cw_ssim(a, a), 1.0, 1e-12);
  EXPECT_GT(cw_ssim(a, b), ssim(a, b));
  EXPECT_THROW(cw_ssim(Frame(30, 40), Frame(30, 40)), DimensionError);
}

TEST(CwSsim, DecreasesWithNoise) {
  const Frame f = texture(48, 0);
  double previous = 1.0;
  for (double sd : {0.05, 0.15, 0.3}) {
    const double s = cw_ssim(f, add_noise(f, sd, 9));
    EXPECT_LT(s, previous);
    previous = s;
  }
}

TEST(Msd, MatchesBruteForceExactly) {
  std::mt19937_64 g(31);
  for (int k = 0; k < 100; ++k) {
    const Contour a = random_polyline(g), b = random_polyline(g);
    ASSERT_EQ(msd(a, b), brute_msd(a, b)) << "case " << k;
  }
}

TEST(Msd, SymmetricAndZeroOnSelf) {
  std::mt19937_64 g(32);
  const Contour a = random_polyline(g), b = random_polyline(g);
  EXPECT_EQ(msd(a, a), 0.0);
  EXPECT_DOUBLE_EQ(msd(a, b), msd(b, a));
  Contour shifted = a;
  for (auto& p : shifted.points) p.y += 3;
  EXPECT_LE(msd(a, shifted), 3.0);
  EXPECT_THROW(msd(a, Contour{}), UsageError);
}

TEST(Contour, FollowsTheBrightestRow) {
  Frame f(20, 16, 0.1f);
  for (std::size_t x = 0; x < 20; ++x) f.at(x, 4 + x / 4) = 0.9f;
  const Contour raw = extract_contour(f, {0, 0, 0});
  ASSERT_EQ(raw.points.size(), 20u);
  for (std::size_t x = 0; x < 20; ++x) {
    EXPECT_EQ(raw.points[x].x, static_cast<double>(x));
    EXPECT_EQ(raw.points[x].y, static_cast<double>(4 + x / 4));
  }
  const Contour smooth = extract_contour(f, {0, 0, 2});
  EXPECT_DOUBLE_EQ(smooth.points[10].y, (6 + 6 + 6 + 6 + 7) / 5.0);
  EXPECT_DOUBLE_EQ(smooth.points[0].y, 4.0);
  const Contour band = extract_contour(f, {10, 16, 0});
  EXPECT_EQ(band.points[0].y, 10.0);
  EXPECT_THROW(extract_contour(f, {8, 8, 0}), ConfigError);
  EXPECT_THROW(extract_contour(f, {0, 17, 0}), ConfigError);
}

TEST(Contour, FileRoundTrip) {
  Contour c{{{0.5, 1.25}, {2, -3}, {7.125, 4}}};
  const fs::path p = fs::temp_directory_path() / "lip2us_test_contour.txt";
  write_contour(p, c);
  const Contour back = read_contour(p);
  ASSERT_EQ(back.points.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.points[i].x, c.points[i].x);
    EXPECT_EQ(back.points[i].y, c.points[i].y);
  }
  fs::remove(p);
}

TEST(Report, AggregatesFrames) {
  const std::vector<Frame> t = {texture(40, 0), texture(40, 2)};
  const std::vector<Frame> p = {t[0], add_noise(t[1], 0.1, 1)};
  const MetricsReport r = evaluate_frames(p, t);
  EXPECT_EQ(r.n_frames, 2u);
  EXPECT_NEAR(r.frames[0].ssim, 1.0, 1e-12);
  EXPECT_EQ(r.frames[0].mse, 0.0);
  EXPECT_DOUBLE_EQ(r.ssim.mean, (r.frames[0].ssim + r.frames[1].ssim) / 2);
  EXPECT_DOUBLE_EQ(r.ssim.std, std::abs(r.frames[0].ssim - r.frames[1].ssim) / 2);
  EXPECT_THROW(evaluate_frames(p, {t[0]}), DimensionError);
}
