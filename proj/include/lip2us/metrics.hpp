#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lip2us/image.hpp"

namespace lip2us {

struct Point {
  double x = 0;
  double y = 0;
};

// Ordered polyline, at least two points.
struct Contour {
  std::vector<Point> points;
};

/// Mean SSIM over all 11x11 Gaussian (sigma 1.5) windows fully inside the
/// image, dynamic range 1, C1 = 0.01^2, C2 = 0.03^2.
double ssim(const Frame& a, const Frame& b);

/// Complex-wavelet SSIM on a fixed complex Gabor bank (wavelengths 4 and 8 px,
/// envelope sigma = wavelength / 2, orientations 0, 45, 90, 135 degrees),
/// 7x7 windows, K = 0.01; averaged over windows then subbands.
double cw_ssim(const Frame& a, const Frame& b);

// Rows [row_begin, row_end) searched per column; smoothing is a centred
// moving average of the given half-width, truncated at the image edges.
struct ContourOptions {
  std::size_t row_begin = 0;
  std::size_t row_end = 0;  // 0 = image height
  std::size_t smooth = 2;
};

/// One point per column (left to right) at the brightest row within the band.
Contour extract_contour(const Frame& image, const ContourOptions& options = {});

/// Symmetric mean of nearest-point Euclidean distances, in pixels.
double msd(const Contour& c1, const Contour& c2);

void write_contour(const std::filesystem::path& path, const Contour& contour);
Contour read_contour(const std::filesystem::path& path);

struct Stat {
  double mean = 0;
  double std = 0;  // population standard deviation
};

struct FrameMetrics {
  double ssim = 0;
  double cw_ssim = 0;
  double msd = 0;
  double mse = 0;
};

struct MetricsReport {
  Stat ssim;
  Stat cw_ssim;
  Stat msd;  // from automatically extracted contours
  std::size_t n_frames = 0;
  double mse = 0;
  std::vector<FrameMetrics> frames;
};

Stat summarize(const std::vector<double>& values);

/// Scores each (prediction, target) pair and aggregates.
MetricsReport evaluate_frames(const std::vector<Frame>& predictions, const std::vector<Frame>& targets,
                              const ContourOptions& contour = {});

std::string format_metrics_table(const MetricsReport& report);

}  // namespace lip2us
