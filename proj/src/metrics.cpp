#include "lip2us/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "lip2us/error.hpp"
#include "lip2us/parallel.hpp"

namespace lip2us {

namespace {

constexpr std::size_t kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

constexpr std::size_t kCwWindow = 7;
constexpr double kCwK = 0.01;
constexpr std::array<double, 2> kCwWavelengths{4.0, 8.0};
constexpr std::size_t kCwOrientations = 4;

using Plane = std::vector<double>;

// Valid-mode separable correlation with a real 1-D kernel along x then y.
Plane filter_valid(const Plane& src, std::size_t w, std::size_t h, const std::vector<double>& k) {
  const std::size_t n = k.size(), ow = w - n + 1, oh = h - n + 1;
  Plane tmp(ow * h), out(ow * oh);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * src[y * w + x + i];
      tmp[y * ow + x] = acc;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

std::vector<double> gaussian_1d(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

Plane to_plane(const Frame& f) { return Plane(f.pixels.begin(), f.pixels.end()); }

void check_pair(const char* op, const Frame& a, const Frame& b) {
  if (!a.same_size(b))
    throw DimensionError(std::string(op) + ": images are " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " and " + std::to_string(b.width) + "x" +
                         std::to_string(b.height));
}

struct ComplexPlane {
  std::size_t w = 0, h = 0;
  std::vector<double> re, im;
};

struct Gabor1d {
  std::vector<double> env;           // normalised Gaussian envelope
  std::vector<double> re, im;        // envelope times carrier
  double dc_re = 0, dc_im = 0;       // sum of the modulated kernel
};

Gabor1d gabor_1d(double sigma, double freq) {
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  Gabor1d g;
  g.env = gaussian_1d(static_cast<std::size_t>(2 * radius + 1), sigma);
  for (long i = -radius; i <= radius; ++i) {
    const double e = g.env[static_cast<std::size_t>(i + radius)];
    g.re.push_back(e * std::cos(freq * static_cast<double>(i)));
    g.im.push_back(e * std::sin(freq * static_cast<double>(i)));
    g.dc_re += g.re.back();
    g.dc_im += g.im.back();
  }
  return g;
}

// Response of the zero-mean kernel (gx (x) gy) - kappa * (env (x) env), with
// kappa = dc(gx) * dc(gy), evaluated in valid mode.
ComplexPlane gabor_response(const Plane& img, std::size_t w, std::size_t h, const Gabor1d& gx, const Gabor1d& gy) {
  const std::size_t n = gx.env.size(), ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tr(ow * h), ti(ow * h), te(ow * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double ar = 0, ai = 0, ae = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double p = img[y * w + x + i];
        ar += gx.re[i] * p;
        ai += gx.im[i] * p;
        ae += gx.env[i] * p;
      }
      tr[y * ow + x] = ar;
      ti[y * ow + x] = ai;
      te[y * ow + x] = ae;
    }
  const double kre = gx.dc_re * gy.dc_re - gx.dc_im * gy.dc_im;
  const double kim = gx.dc_re * gy.dc_im + gx.dc_im * gy.dc_re;
  ComplexPlane out{ow, oh, std::vector<double>(ow * oh), std::vector<double>(ow * oh)};
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double sr = 0, si = 0, se = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = (y + i) * ow + x;
        // (tr + i ti) * (gy.re + i gy.im)
        sr += tr[k] * gy.re[i] - ti[k] * gy.im[i];
        si += tr[k] * gy.im[i] + ti[k] * gy.re[i];
        se += te[k] * gy.env[i];
      }
      out.re[y * ow + x] = sr - kre * se;
      out.im[y * ow + x] = si - kim * se;
    }
  return out;
}

}  // namespace

double ssim(const Frame& a, const Frame& b) {
  check_pair("ssim", a, b);
  if (a.width < kSsimWindow || a.height < kSsimWindow)
    throw DimensionError("ssim: images must be at least 11x11");
  const std::size_t w = a.width, h = a.height;
  const auto g = gaussian_1d(kSsimWindow, kSsimSigma);
  const Plane pa = to_plane(a), pb = to_plane(b);
  Plane aa(pa.size()), bb(pa.size()), ab(pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    aa[i] = pa[i] * pa[i];
    bb[i] = pb[i] * pb[i];
    ab[i] = pa[i] * pb[i];
  }
  const Plane mu_a = filter_valid(pa, w, h, g), mu_b = filter_valid(pb, w, h, g);
  const Plane e_aa = filter_valid(aa, w, h, g), e_bb = filter_valid(bb, w, h, g), e_ab = filter_valid(ab, w, h, g);
  double total = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
  }
  return total / static_cast<double>(mu_a.size());
}

double cw_ssim(const Frame& a, const Frame& b) {
  check_pair("cw_ssim", a, b);
  std::size_t support = 0;
  for (double lambda : kCwWavelengths)
    support = std::max(support, 2 * static_cast<std::size_t>(std::ceil(3.0 * lambda / 2.0)) + 1);
  if (a.width < support + kCwWindow - 1 || a.height < support + kCwWindow - 1)
    throw DimensionError("cw_ssim: images must be at least " + std::to_string(support + kCwWindow - 1) +
                         " pixels on each side for the filter support");
  const Plane pa = to_plane(a), pb = to_plane(b);
  double total = 0;
  std::size_t bands = 0;
  for (double lambda : kCwWavelengths) {
    const double sigma = lambda / 2.0, freq = 2.0 * std::numbers::pi / lambda;
    for (std::size_t o = 0; o < kCwOrientations; ++o) {
      const double theta = std::numbers::pi * static_cast<double>(o) / kCwOrientations;
      const Gabor1d gx = gabor_1d(sigma, freq * std::cos(theta));
      const Gabor1d gy = gabor_1d(sigma, freq * std::sin(theta));
      const ComplexPlane ca = gabor_response(pa, a.width, a.height, gx, gy);
      const ComplexPlane cb = gabor_response(pb, b.width, b.height, gx, gy);
      const std::size_t ow = ca.w - kCwWindow + 1, oh = ca.h - kCwWindow + 1;
      double band_total = 0;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double cross_re = 0, cross_im = 0, ea = 0, eb = 0;
          for (std::size_t j = 0; j < kCwWindow; ++j)
            for (std::size_t i = 0; i < kCwWindow; ++i) {
              const std::size_t k = (y + j) * ca.w + x + i;
              const double ar = ca.re[k], ai = ca.im[k], br = cb.re[k], bi = cb.im[k];
              cross_re += ar * br + ai * bi;
              cross_im += ai * br - ar * bi;
              ea += ar * ar + ai * ai;
              eb += br * br + bi * bi;
            }
          band_total += (2.0 * std::sqrt(cross_re * cross_re + cross_im * cross_im) + kCwK) / (ea + eb + kCwK);
        }
      total += band_total / static_cast<double>(ow * oh);
      ++bands;
    }
  }
  return total / static_cast<double>(bands);
}

Contour extract_contour(const Frame& image, const ContourOptions& options) {
  const std::size_t end = options.row_end == 0 ? image.height : options.row_end;
  if (options.row_begin >= end) throw ConfigError("extract_contour: empty row band");
  if (end > image.height)
    throw ConfigError("extract_contour: band end " + std::to_string(end) + " exceeds image height " +
                      std::to_string(image.height));
  if (image.width < 2) throw DimensionError("extract_contour: image needs at least 2 columns");
  std::vector<double> rows(image.width);
  for (std::size_t x = 0; x < image.width; ++x) {
    std::size_t best = options.row_begin;
    for (std::size_t y = options.row_begin; y < end; ++y)
      if (image.at(x, y) > image.at(x, best)) best = y;
    rows[x] = static_cast<double>(best);
  }
  Contour c;
  const long hw = static_cast<long>(options.smooth), W = static_cast<long>(image.width);
  for (long x = 0; x < W; ++x) {
    const long lo = std::max(0L, x - hw), hi = std::min(W - 1, x + hw);
    double s = 0;
    for (long k = lo; k <= hi; ++k) s += rows[static_cast<std::size_t>(k)];
    c.points.push_back({static_cast<double>(x), s / static_cast<double>(hi - lo + 1)});
  }
  return c;
}

double msd(const Contour& c1, const Contour& c2) {
  if (c1.points.empty() || c2.points.empty()) throw UsageError("msd: empty contour");
  auto directed = [](const Contour& from, const Contour& to) {
    double total = 0;
    for (const auto& p : from.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to.points) {
        const double dx = p.x - q.x, dy = p.y - q.y;
        best = std::min(best, std::sqrt(dx * dx + dy * dy));
      }
      total += best;
    }
    return total;
  };
  return (directed(c1, c2) + directed(c2, c1)) / static_cast<double>(c1.points.size() + c2.points.size());
}

void write_contour(const std::filesystem::path& path, const Contour& contour) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << std::setprecision(17);
  for (const auto& p : contour.points) os << p.x << ' ' << p.y << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

Contour read_contour(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  Contour c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Point p;
    if (!(ls >> p.x >> p.y)) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 'x y'");
    c.points.push_back(p);
  }
  return c;
}

Stat summarize(const std::vector<double>& values) {
  Stat s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  for (double v : values) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(values.size()));
  return s;
}

MetricsReport evaluate_frames(const std::vector<Frame>& predictions, const std::vector<Frame>& targets,
                              const ContourOptions& contour) {
  if (predictions.size() != targets.size())
    throw DimensionError("evaluate_frames: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
  MetricsReport r;
  r.n_frames = predictions.size();
  r.frames.resize(r.n_frames);
  parallel_for(r.n_frames, [&](std::size_t i) {
    const Frame& p = predictions[i];
    const Frame& t = targets[i];
    check_pair("evaluate_frames", p, t);
    FrameMetrics& m = r.frames[i];
    m.ssim = ssim(p, t);
    m.cw_ssim = cw_ssim(p, t);
    m.msd = msd(extract_contour(p, contour), extract_contour(t, contour));
    double se = 0;
    for (std::size_t k = 0; k < p.pixels.size(); ++k) {
      const double d = static_cast<double>(p.pixels[k]) - t.pixels[k];
      se += d * d;
    }
    m.mse = se / static_cast<double>(p.pixels.size());
  });
  std::vector<double> s, c, d;
  for (const auto& m : r.frames) {
    s.push_back(m.ssim);
    c.push_back(m.cw_ssim);
    d.push_back(m.msd);
    r.mse += m.mse;
  }
  if (r.n_frames) r.mse /= static_cast<double>(r.n_frames);
  r.ssim = summarize(s);
  r.cw_ssim = summarize(c);
  r.msd = summarize(d);
  return r;
}

std::string format_metrics_table(const MetricsReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "frames   " << r.n_frames << '\n';
  os << "SSIM     " << r.ssim.mean << " +- " << r.ssim.std << '\n';
  os << "CW-SSIM  " << r.cw_ssim.mean << " +- " << r.cw_ssim.std << '\n';
  os << "MSD      " << r.msd.mean << " +- " << r.msd.std << "  (auto-contour, px)\n";
  os << "MSE      " << std::setprecision(6) << r.mse << '\n';
  return os.str();
}

}  // namespace lip2us
