#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dractrl {

// H x W x 3 raster, interleaved RGB, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w * 3, fill) {}

  static Image solid(std::size_t h, std::size_t w, float r, float g, float b);

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
  bool same_shape(const Image& other) const { return height == other.height && width == other.width; }
  bool operator==(const Image& other) const = default;
};

// 8-bit counterpart used for colour normalization and file interchange.
struct Image8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), pixels(h * w * 3, fill) {}
  bool operator==(const Image8& other) const = default;
};

// round(clamp(v, 0, 1) * 255)
Image8 quantize(const Image& img);
Image dequantize(const Image8& img);

// Binary PPM (P6, maxval 255).
void write_ppm(const std::filesystem::path& path, const Image8& img);
void write_ppm(const std::filesystem::path& path, const Image& img);
std::string encode_ppm(const Image8& img);
Image8 decode_ppm(const std::string& bytes);
Image8 read_ppm8(const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

// Equal-weight channel mean replicated to three channels.
Image grayscale(const Image& img);

// Clamp every value into [0, 1].
Image clamp01(Image img);

}  // namespace dractrl
