#include "lip2us/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "lip2us/error.hpp"
#include "lip2us/metrics.hpp"
#include "lip2us/parallel.hpp"

namespace lip2us {

namespace fs = std::filesystem;

namespace {

enum Stream : std::uint32_t { kSinusoids = 1, kLatentNoise = 2, kTexture = 3, kSpeckle = 4 };

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index, std::uint32_t stream, std::uint64_t extra = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), stream,
                    static_cast<std::uint32_t>(extra), static_cast<std::uint32_t>(extra >> 32)};
  return std::mt19937_64(seq);
}

float quantize(double v) { return static_cast<float>(to_byte(static_cast<float>(v))) / 255.0f; }

// Antialiased coverage of the ellipse interior using the first-order signed
// distance (f - 1) / |grad f|.
double ellipse_coverage(double dx, double dy, double ax, double ay) {
  const double f = (dx * dx) / (ax * ax) + (dy * dy) / (ay * ay);
  const double gx = 2 * dx / (ax * ax), gy = 2 * dy / (ay * ay);
  const double grad = std::sqrt(gx * gx + gy * gy);
  if (grad < 1e-12) return 1.0;
  const double dist = (f - 1.0) / grad;
  return std::clamp(0.5 - dist, 0.0, 1.0);
}

}  // namespace

void SynthSpec::validate() const {
  if (n_sequences == 0 || frames_per_sequence == 0) throw ConfigError("synth: empty dataset");
  if (lip_size < 16 || us_size < 32) throw ConfigError("synth: lip_size must be >= 16 and us_size >= 32");
  if (sinusoids == 0) throw ConfigError("synth: sinusoids must be >= 1");
  if (freq_min < 0 || freq_max < freq_min) throw ConfigError("synth: invalid frequency range");
  if (latent_noise_sd < 0 || speckle_sd < 0 || texture_sd < 0) throw ConfigError("synth: noise sd must be >= 0");
  if (aperture_min < 0 || aperture_max < aperture_min) throw ConfigError("synth: invalid aperture range");
  if (apex_min < 0 || apex_max < apex_min || apex_max >= static_cast<double>(us_size))
    throw ConfigError("synth: invalid apex height range");
  if (ridge_sd <= 0) throw ConfigError("synth: ridge_sd must be positive");
}

std::vector<double> latent_path(const SynthSpec& spec, std::size_t seq_index) {
  auto rng = stream_rng(spec.seed, seq_index, kSinusoids);
  std::uniform_real_distribution<double> weight(0.5, 1.0), freq(spec.freq_min, spec.freq_max),
      phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> w(spec.sinusoids), f(spec.sinusoids), ph(spec.sinusoids);
  double wsum = 0;
  for (std::size_t j = 0; j < spec.sinusoids; ++j) {
    w[j] = weight(rng);
    f[j] = freq(rng);
    ph[j] = phase(rng);
    wsum += w[j];
  }
  auto noise_rng = stream_rng(spec.seed, seq_index, kLatentNoise);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> s(spec.frames_per_sequence);
  for (std::size_t t = 0; t < s.size(); ++t) {
    double acc = 0;
    for (std::size_t j = 0; j < spec.sinusoids; ++j)
      acc += w[j] * std::sin(2.0 * std::numbers::pi * f[j] * static_cast<double>(t) + ph[j]);
    const double n = noise(noise_rng);
    s[t] = std::clamp(0.5 + spec.amplitude * acc / (2.0 * wsum) + spec.latent_noise_sd * n, 0.0, 1.0);
  }
  return s;
}

double lip_aperture(const SynthSpec& spec, double s) {
  return spec.aperture_min + s * (spec.aperture_max - spec.aperture_min);
}

double apex_height(const SynthSpec& spec, double s) { return spec.apex_min + s * (spec.apex_max - spec.apex_min); }

Frame render_lip(double s, const SynthSpec& spec, std::uint64_t texture_seed) {
  const std::size_t n = spec.lip_size;
  const double scale = static_cast<double>(n) / 96.0;
  const double cx = static_cast<double>(n) / 2.0, cy = static_cast<double>(n) / 2.0;
  const double half_open = std::max(0.5, lip_aperture(spec, s) / 2.0);
  const double mouth_ax = 26.0 * scale;
  const double lip_band = 7.0 * scale;

  // Static skin texture: a few low-frequency gratings.
  auto rng = stream_rng(texture_seed, 0, kTexture);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * std::numbers::pi), fr(0.05, 0.2);
  struct Grating {
    double kx, ky, phase;
  };
  std::vector<Grating> gratings(4);
  for (auto& g : gratings) {
    const double a = ang(rng), f = fr(rng);
    g = {f * std::cos(a), f * std::sin(a), ang(rng)};
  }

  Frame out(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double px = static_cast<double>(x) + 0.5 - cx, py = static_cast<double>(y) + 0.5 - cy;
      double tex = 0;
      for (const auto& g : gratings) tex += std::sin(g.kx * px + g.ky * py + g.phase);
      const double skin = 0.5 + spec.texture_sd * tex / 2.0;
      const double lips = ellipse_coverage(px, py, mouth_ax + lip_band, half_open + lip_band);
      const double mouth = ellipse_coverage(px, py, mouth_ax, half_open);
      double v = skin * (1.0 - lips) + 0.75 * (lips - mouth) + 0.08 * mouth;
      out.at(x, y) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return out;
}

Frame render_ultrasound(double s, const SynthSpec& spec, std::uint64_t speckle_seed) {
  const std::size_t n = spec.us_size;
  const double apex_row = static_cast<double>(n - 1) - apex_height(spec, s);
  const double cx = (static_cast<double>(n) - 1.0) / 2.0;
  const double curvature = 12.0 / (cx * cx);
  auto rng = stream_rng(speckle_seed, 0, kSpeckle);
  std::normal_distribution<double> speckle(0.0, 1.0);
  Frame out(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double dxc = static_cast<double>(x) - cx;
      const double surface = apex_row + curvature * dxc * dxc;
      const double d = static_cast<double>(y) - surface;
      const double ridge = 0.9 * std::exp(-d * d / (2.0 * spec.ridge_sd * spec.ridge_sd));
      const double body = 0.25 / (1.0 + std::exp(-d)) * std::exp(-std::max(0.0, d) / 20.0);
      double v = 0.05 + body + ridge;
      v *= 1.0 + spec.speckle_sd * speckle(rng);
      out.at(x, y) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return out;
}

Recording generate_recording(const SynthSpec& spec, std::size_t seq_index) {
  Recording r;
  r.latent = latent_path(spec, seq_index);
  const std::uint64_t texture_seed = spec.seed * 1000003ULL + seq_index;
  for (std::size_t t = 0; t < r.latent.size(); ++t) {
    Frame lip = render_lip(r.latent[t], spec, texture_seed);
    const std::uint64_t speckle_seed = (spec.seed * 1000003ULL + seq_index) * 4096ULL + t;
    Frame us = render_ultrasound(r.latent[t], spec, speckle_seed);
    for (auto& p : lip.pixels) p = quantize(p);
    for (auto& p : us.pixels) p = quantize(p);
    r.lips.push_back(std::move(lip));
    r.ultrasound.push_back(std::move(us));
  }
  return r;
}

void gen_dataset(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  auto seq_dir = [](std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "seq_%06zu", i);
    return std::string(buf);
  };
  parallel_for(spec.n_sequences, [&](std::size_t i) {
    const Recording r = generate_recording(spec, i);
    const fs::path lip_dir = out_dir / seq_dir(i) / "lip", us_dir = out_dir / seq_dir(i) / "us";
    std::error_code e;
    fs::create_directories(lip_dir, e);
    fs::create_directories(us_dir, e);
    if (e) throw IoError("cannot create " + lip_dir.string() + ": " + e.message());
    for (std::size_t t = 0; t < r.lips.size(); ++t) {
      write_png(lip_dir / frame_name(t), r.lips[t]);
      write_png(us_dir / frame_name(t), r.ultrasound[t]);
    }
  });
  std::ofstream manifest(out_dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (out_dir / "manifest.txt").string());
  manifest << "# lip_dir us_dir roi_x roi_y roi_w roi_h\n";
  for (std::size_t i = 0; i < spec.n_sequences; ++i)
    manifest << seq_dir(i) << "/lip " << seq_dir(i) << "/us 0 0 " << spec.lip_size << ' ' << spec.lip_size << '\n';
  if (!manifest) throw IoError("write failed for manifest.txt");
}

double measure_aperture(const Frame& lip) {
  const std::size_t x = lip.width / 2;
  double rows = 0;
  for (std::size_t y = 0; y < lip.height; ++y)
    if (lip.at(x, y) < 0.3f) rows += 1;
  return rows;
}

double measure_apex_height(const Frame& ultrasound) {
  const Contour c = extract_contour(ultrasound, {0, 0, 2});
  double top = static_cast<double>(ultrasound.height);
  for (const auto& p : c.points) top = std::min(top, p.y);
  return static_cast<double>(ultrasound.height - 1) - top;
}

}  // namespace lip2us
