#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace simic {

// Row-major 8-bit grayscale raster.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int y, int x) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// Round-half-up to the nearest 8-bit level after clamping to [0,255]. Every
// place a real value becomes a pixel goes through this one function.
inline std::uint8_t quantize_u8(double v) {
  if (v <= 0.0) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(v + 0.5);
}

// Binary "P5" grayscale files, maxval 255 only. Malformed headers and short
// payloads raise errors that name the offending byte offset.
Image read_image(const std::string& path);
void write_image(const std::string& path, const Image& img);

// In-memory codec used by the file functions (and handy for tests).
Image decode_p5(const std::vector<std::uint8_t>& bytes, const std::string& origin);
std::vector<std::uint8_t> encode_p5(const Image& img);

}  // namespace simic
