#include "simic/image.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace simic {

namespace {

[[noreturn]] void fail(const std::string& origin, std::size_t offset, const std::string& what) {
  throw std::runtime_error(origin + ": " + what + " at byte " + std::to_string(offset));
}

// Whitespace/comment skipper for the P5 header. Comments run '#' to newline.
void skip_separators(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  while (pos < b.size()) {
    const char c = static_cast<char>(b[pos]);
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else if (c == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
}

long parse_header_int(const std::vector<std::uint8_t>& b, std::size_t& pos,
                      const std::string& origin, const char* field) {
  skip_separators(b, pos);
  if (pos >= b.size() || b[pos] < '0' || b[pos] > '9')
    fail(origin, pos, std::string("expected ") + field);
  long v = 0;
  while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
    v = v * 10 + (b[pos] - '0');
    if (v > 1000000) fail(origin, pos, std::string(field) + " out of range");
    ++pos;
  }
  return v;
}

}  // namespace

Image decode_p5(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  std::size_t pos = 0;
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    fail(origin, 0, "not a P5 file (bad magic)");
  pos = 2;
  const long w = parse_header_int(bytes, pos, origin, "width");
  const long h = parse_header_int(bytes, pos, origin, "height");
  const std::size_t maxval_at = pos;
  const long maxval = parse_header_int(bytes, pos, origin, "maxval");
  if (w < 1 || h < 1) fail(origin, 2, "non-positive image dimensions");
  if (maxval != 255)
    fail(origin, maxval_at, "unsupported maxval " + std::to_string(maxval) + " (only 255)");
  // Exactly one whitespace byte separates the header from the payload.
  if (pos >= bytes.size()) fail(origin, pos, "missing payload separator");
  const char sep = static_cast<char>(bytes[pos]);
  if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
    fail(origin, pos, "expected whitespace before payload");
  ++pos;

  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - pos < need)
    fail(origin, bytes.size(),
         "truncated payload: expected " + std::to_string(need) + " bytes from byte " +
             std::to_string(pos) + ", found " + std::to_string(bytes.size() - pos));
  Image img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

std::vector<std::uint8_t> encode_p5(const Image& img) {
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
    throw std::invalid_argument("encode_p5: image dimensions do not match pixel count");
  char header[64];
  const int n = std::snprintf(header, sizeof(header), "P5\n%d %d\n255\n", img.width, img.height);
  std::vector<std::uint8_t> out(header, header + n);
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_p5(bytes, path);
}

void write_image(const std::string& path, const Image& img) {
  const std::vector<std::uint8_t> bytes = encode_p5(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace simic
