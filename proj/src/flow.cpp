#include "lip2us/flow.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

namespace lip2us {

namespace {

// Field stored with a one-pixel replicated border so the neighbourhood
// average needs no bounds checks.
struct Padded {
  std::size_t w, h;
  std::vector<double> v;
  Padded(std::size_t w_, std::size_t h_) : w(w_), h(h_), v((w_ + 2) * (h_ + 2), 0.0) {}
  double& at(long x, long y) { return v[(y + 1) * (w + 2) + (x + 1)]; }
  double at(long x, long y) const { return v[(y + 1) * (w + 2) + (x + 1)]; }
  void refresh_border() {
    const long W = static_cast<long>(w), H = static_cast<long>(h);
    for (long x = 0; x < W; ++x) {
      at(x, -1) = at(x, 0);
      at(x, H) = at(x, H - 1);
    }
    for (long y = -1; y <= H; ++y) {
      at(-1, y) = at(0, y);
      at(W, y) = at(W - 1, y);
    }
  }
  double neighbourhood_mean(long x, long y) const {
    return (at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1)) / 6.0 +
           (at(x - 1, y - 1) + at(x + 1, y - 1) + at(x - 1, y + 1) + at(x + 1, y + 1)) / 12.0;
  }
};

}  // namespace

FlowField horn_schunck(const Frame& f1, const Frame& f2, double alpha, int iterations) {
  if (!f1.same_size(f2))
    throw DimensionError("horn_schunck: frames are " + std::to_string(f1.width) + "x" + std::to_string(f1.height) +
                         " and " + std::to_string(f2.width) + "x" + std::to_string(f2.height));
  if (f1.width == 0 || f1.height == 0) throw DimensionError("horn_schunck: empty frames");
  if (!(alpha > 0)) throw ConfigError("horn_schunck: alpha must be positive");
  if (iterations < 1) throw ConfigError("horn_schunck: iterations must be >= 1");

  const std::size_t W = f1.width, H = f1.height, n = W * H;
  auto e = [&](const Frame& f, std::size_t x, std::size_t y) {
    return 255.0 * f.at(std::min(x, W - 1), std::min(y, H - 1));
  };
  std::vector<double> ex(n), ey(n), et(n);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double a00 = e(f1, x, y), a10 = e(f1, x + 1, y), a01 = e(f1, x, y + 1), a11 = e(f1, x + 1, y + 1);
      const double b00 = e(f2, x, y), b10 = e(f2, x + 1, y), b01 = e(f2, x, y + 1), b11 = e(f2, x + 1, y + 1);
      const std::size_t i = y * W + x;
      ex[i] = 0.25 * ((a10 - a00) + (a11 - a01) + (b10 - b00) + (b11 - b01));
      ey[i] = 0.25 * ((a01 - a00) + (a11 - a10) + (b01 - b00) + (b11 - b10));
      et[i] = 0.25 * ((b00 - a00) + (b01 - a01) + (b10 - a10) + (b11 - a11));
    }

  const double alpha2 = alpha * alpha;
  Padded u(W, H), v(W, H), u_next(W, H), v_next(W, H);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const long lx = static_cast<long>(x), ly = static_cast<long>(y);
        const std::size_t i = y * W + x;
        const double ub = u.neighbourhood_mean(lx, ly);
        const double vb = v.neighbourhood_mean(lx, ly);
        const double t = (ex[i] * ub + ey[i] * vb + et[i]) / (alpha2 + ex[i] * ex[i] + ey[i] * ey[i]);
        u_next.at(lx, ly) = ub - ex[i] * t;
        v_next.at(lx, ly) = vb - ey[i] * t;
      }
    u_next.refresh_border();
    v_next.refresh_border();
    std::swap(u, u_next);
    std::swap(v, v_next);
  }

  std::vector<float> uo(n), vo(n);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      uo[y * W + x] = static_cast<float>(u.at(static_cast<long>(x), static_cast<long>(y)));
      vo[y * W + x] = static_cast<float>(v.at(static_cast<long>(x), static_cast<long>(y)));
    }
  return {Tensor::from({H, W}, std::move(uo)), Tensor::from({H, W}, std::move(vo))};
}

Tensor flow_stack(const std::vector<FlowField>& fields) {
  if (fields.empty()) throw ConfigError("flow_stack: need at least one flow field");
  const std::size_t H = fields[0].u.dim(0), W = fields[0].u.dim(1);
  std::vector<float> values;
  values.reserve(fields.size() * 2 * H * W);
  for (const auto& f : fields) {
    if (f.u.shape() != Shape{H, W} || f.v.shape() != Shape{H, W})
      throw DimensionError("flow_stack: inconsistent flow field sizes");
    auto u = f.u.data<float>();
    auto v = f.v.data<float>();
    values.insert(values.end(), u.begin(), u.end());
    values.insert(values.end(), v.begin(), v.end());
  }
  return Tensor::from({fields.size(), 2, H, W}, std::move(values));
}

Tensor flow_stack(const Clip& clip, double alpha, int iterations) {
  if (clip.length() < 2) throw ConfigError("flow_stack: clip needs at least 2 frames, got " + std::to_string(clip.length()));
  std::vector<FlowField> fields;
  for (std::size_t k = 0; k + 1 < clip.length(); ++k)
    fields.push_back(horn_schunck(clip.frames[k], clip.frames[k + 1], alpha, iterations));
  return flow_stack(fields);
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) os.put(static_cast<char>((v >> (8 * b)) & 0xFF));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(is.get())) << (8 * b);
  return v;
}

}  // namespace

void write_flow(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const auto H = static_cast<std::uint32_t>(flow.u.dim(0)), W = static_cast<std::uint32_t>(flow.u.dim(1));
  os.write("L2FL", 4);
  put_u32(os, W);
  put_u32(os, H);
  for (const Tensor* plane : {&flow.u, &flow.v})
    for (float x : plane->data<float>()) put_u32(os, std::bit_cast<std::uint32_t>(x));
  if (!os) throw IoError("write failed for " + path.string());
}

FlowField read_flow(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "L2FL") throw IoError(path.string() + ": not a flow file");
  const std::size_t W = get_u32(is), H = get_u32(is);
  if (!is || W == 0 || H == 0) throw IoError(path.string() + ": bad flow header");
  std::vector<float> u(W * H), v(W * H);
  for (auto* plane : {&u, &v})
    for (auto& x : *plane) x = std::bit_cast<float>(get_u32(is));
  if (!is) throw IoError(path.string() + ": truncated flow data");
  return {Tensor::from({H, W}, std::move(u)), Tensor::from({H, W}, std::move(v))};
}

std::vector<std::uint8_t> flow_to_rgb(const FlowField& flow, double max_magnitude) {
  // Middlebury colour wheel: red-yellow-green-cyan-blue-magenta segments.
  static const std::array<int, 6> segments{15, 6, 4, 11, 13, 6};
  std::vector<std::array<double, 3>> wheel;
  for (int i = 0; i < segments[0]; ++i) wheel.push_back({255, 255.0 * i / segments[0], 0});
  for (int i = 0; i < segments[1]; ++i) wheel.push_back({255 - 255.0 * i / segments[1], 255, 0});
  for (int i = 0; i < segments[2]; ++i) wheel.push_back({0, 255, 255.0 * i / segments[2]});
  for (int i = 0; i < segments[3]; ++i) wheel.push_back({0, 255 - 255.0 * i / segments[3], 255});
  for (int i = 0; i < segments[4]; ++i) wheel.push_back({255.0 * i / segments[4], 0, 255});
  for (int i = 0; i < segments[5]; ++i) wheel.push_back({255, 0, 255 - 255.0 * i / segments[5]});
  const auto ncols = static_cast<double>(wheel.size());

  auto u = flow.u.data<float>();
  auto v = flow.v.data<float>();
  double maxmag = max_magnitude;
  if (maxmag <= 0) {
    for (std::size_t i = 0; i < u.size(); ++i) maxmag = std::max(maxmag, std::hypot(double(u[i]), double(v[i])));
    if (maxmag <= 0) maxmag = 1.0;
  }
  std::vector<std::uint8_t> rgb(u.size() * 3);
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double fu = u[i] / maxmag, fv = v[i] / maxmag;
    const double rad = std::min(1.0, std::hypot(fu, fv));
    const double a = std::atan2(-fv, -fu) / std::numbers::pi;
    const double fk = (a + 1.0) / 2.0 * (ncols - 1);
    const auto k0 = static_cast<std::size_t>(fk);
    const std::size_t k1 = (k0 + 1) % wheel.size();
    const double f = fk - static_cast<double>(k0);
    for (int c = 0; c < 3; ++c) {
      const double col = ((1 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
      rgb[i * 3 + c] = static_cast<std::uint8_t>(std::lround(255.0 * (1 - rad * (1 - col))));
    }
  }
  return rgb;
}

}  // namespace lip2us
