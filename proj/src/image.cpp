#include "lip2us/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

#include "lip2us/error.hpp"

namespace lip2us {

namespace fs = std::filesystem;

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

Frame from_bytes(std::size_t width, std::size_t height, const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() != width * height) throw DimensionError("from_bytes: size mismatch");
  Frame f(width, height);
  for (std::size_t i = 0; i < bytes.size(); ++i) f.pixels[i] = static_cast<float>(bytes[i]) / 255.0f;
  return f;
}

std::vector<std::uint8_t> to_bytes(const Frame& frame) {
  std::vector<std::uint8_t> out(frame.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = to_byte(frame.pixels[i]);
  return out;
}

namespace {

Frame read_png(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return from_bytes(image.width, image.height, buf);
}

void skip_pnm_space(std::istream& is) {
  while (true) {
    int c = is.peek();
    if (c == '#') {
      std::string dummy;
      std::getline(is, dummy);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      return;
    }
  }
}

Frame read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  is >> magic;
  if (magic != "P5" && magic != "P2") throw IoError(path.string() + ": not a PGM file");
  std::size_t w = 0, h = 0, maxval = 0;
  skip_pnm_space(is);
  is >> w;
  skip_pnm_space(is);
  is >> h;
  skip_pnm_space(is);
  is >> maxval;
  if (!is || w == 0 || h == 0 || maxval != 255)
    throw IoError(path.string() + ": only 8-bit PGM (maxval 255) is supported");
  std::vector<std::uint8_t> bytes(w * h);
  if (magic == "P5") {
    is.get();
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  } else {
    for (auto& b : bytes) {
      int v = 0;
      is >> v;
      b = static_cast<std::uint8_t>(v);
    }
  }
  if (!is) throw IoError(path.string() + ": truncated PGM data");
  return from_bytes(w, h, bytes);
}

}  // namespace

Frame read_image(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pgm") return read_pgm(path);
  if (ext == ".png") return read_png(path);
  throw IoError("unsupported image format: " + path.string());
}

void write_png(const fs::path& path, const Frame& frame) {
  auto bytes = to_bytes(frame);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(frame.width);
  image.height = static_cast<png_uint_32>(frame.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
}

void write_png_rgb(const fs::path& path, std::size_t width, std::size_t height,
                   const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != width * height * 3) throw DimensionError("write_png_rgb: buffer size mismatch");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
}

void write_pgm(const fs::path& path, const Frame& frame) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "P5\n" << frame.width << ' ' << frame.height << "\n255\n";
  auto bytes = to_bytes(frame);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  static const std::regex pattern(R"(frame_(\d{6})\.(png|pgm))");
  std::vector<std::pair<long, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && std::regex_match(name, m, pattern))
      found.emplace_back(std::stol(m[1].str()), entry.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [idx, p] : found) out.push_back(std::move(p));
  return out;
}

fs::path frame_name(std::size_t index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06zu%s", index, ext);
  return buf;
}

}  // namespace lip2us
