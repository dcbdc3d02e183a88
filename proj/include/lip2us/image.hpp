#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lip2us {

// Grayscale image, row-major, intensities in [0,1].
struct Frame {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  Frame() = default;
  Frame(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), pixels(w * h, fill) {}

  float at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  float& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  bool same_size(const Frame& o) const { return width == o.width && height == o.height; }
};

std::uint8_t to_byte(float v);
Frame from_bytes(std::size_t width, std::size_t height, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> to_bytes(const Frame& frame);

// 8-bit grayscale PNG or PGM; color PNGs are converted to luma.
Frame read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Frame& frame);
void write_pgm(const std::filesystem::path& path, const Frame& frame);
void write_png_rgb(const std::filesystem::path& path, std::size_t width, std::size_t height,
                   const std::vector<std::uint8_t>& rgb);

// frame_%06d.png / .pgm files of a directory in index order.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);
std::filesystem::path frame_name(std::size_t index, const char* ext = ".png");

}  // namespace lip2us
