#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace qpseg {

// 8-bit raster as stored in binary PGM (1 channel, P5) or PPM (3 channels, P6).
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;  // interleaved, row-major

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

// Parses P5/P6 with maxval <= 255. `name` is used in error messages, which
// carry the byte offset of the problem.
RawImage parse_pnm(std::span<const std::uint8_t> bytes, const std::string& name);
RawImage read_pnm(const std::string& path);

std::vector<std::uint8_t> encode_pnm(const RawImage& img);
void write_pnm(const std::string& path, const RawImage& img);

}  // namespace qpseg
