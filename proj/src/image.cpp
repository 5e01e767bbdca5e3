#include "dractrl/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dractrl/error.hpp"

namespace dractrl {

Image Image::solid(std::size_t h, std::size_t w, float r, float g, float b) {
  Image img(h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    img.pixels[i * 3 + 0] = r;
    img.pixels[i * 3 + 1] = g;
    img.pixels[i * 3 + 2] = b;
  }
  return img;
}

Image8 quantize(const Image& img) {
  Image8 out(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img.pixels[i]), 0.0, 1.0);
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

Image dequantize(const Image8& img) {
  Image out(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) out.pixels[i] = static_cast<float>(img.pixels[i] / 255.0);
  return out;
}

std::string encode_ppm(const Image8& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image8& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  const auto bytes = encode_ppm(img);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed: " + path.string());
}

void write_ppm(const std::filesystem::path& path, const Image& img) { write_ppm(path, quantize(img)); }

Image8 decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const auto start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (next_token() != "P6") throw FormatError("ppm: missing P6 magic");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token());
    h = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw FormatError("ppm: malformed header");
  }
  if (maxval != 255) throw FormatError("ppm: only maxval 255 is supported");
  ++pos;  // single whitespace byte after maxval
  Image8 img(h, w);
  if (bytes.size() < pos + img.pixels.size()) throw FormatError("ppm: truncated pixel data");
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), img.pixels.size(), img.pixels.begin());
  return img;
}

Image8 read_ppm8(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_ppm(ss.str());
}

Image read_ppm(const std::filesystem::path& path) { return dequantize(read_ppm8(path)); }

Image grayscale(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t i = 0; i < img.height * img.width; ++i) {
    const double m = (static_cast<double>(img.pixels[i * 3]) + img.pixels[i * 3 + 1] + img.pixels[i * 3 + 2]) / 3.0;
    const auto v = static_cast<float>(m);
    out.pixels[i * 3] = out.pixels[i * 3 + 1] = out.pixels[i * 3 + 2] = v;
  }
  return out;
}

Image clamp01(Image img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

}  // namespace dractrl
