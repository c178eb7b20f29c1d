#include "qpseg/pnm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>

#include "qpseg/errors.hpp"

namespace qpseg {
namespace {

class HeaderReader {
 public:
  HeaderReader(std::span<const std::uint8_t> bytes, const std::string& name) : bytes_(bytes), name_(name) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(name_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* field) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size()) fail(std::string("unexpected end of header while reading ") + field);
    if (!std::isdigit(bytes_[pos_])) fail(std::string("expected a decimal ") + field);
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > (1u << 24)) fail(std::string(field) + " is too large");
      ++pos_;
    }
    return v;
  }

  std::size_t& pos() { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  const std::string& name_;
  std::size_t pos_ = 0;
};

}  // namespace

RawImage parse_pnm(std::span<const std::uint8_t> bytes, const std::string& name) {
  HeaderReader r(bytes, name);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    r.fail("missing P5/P6 magic number");
  RawImage img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  r.pos() = 2;
  img.width = r.number("width");
  img.height = r.number("height");
  const std::size_t maxval = r.number("maxval");
  if (img.width == 0 || img.height == 0) r.fail("zero image dimension");
  if (maxval == 0 || maxval > 255) r.fail("unsupported maxval " + std::to_string(maxval) + " (need 1..255)");
  if (r.pos() >= bytes.size() || !std::isspace(bytes[r.pos()])) r.fail("expected a single whitespace after maxval");
  ++r.pos();
  const std::size_t need = img.width * img.height * img.channels;
  if (bytes.size() - r.pos() < need)
    r.fail("truncated pixel data: need " + std::to_string(need) + " bytes, have " +
           std::to_string(bytes.size() - r.pos()));
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos()),
                    bytes.begin() + static_cast<std::ptrdiff_t>(r.pos() + need));
  if (maxval != 255)
    for (auto& p : img.pixels) {
      if (p > maxval) {
        r.pos() += static_cast<std::size_t>(&p - img.pixels.data());
        r.fail("sample exceeds maxval");
      }
      p = static_cast<std::uint8_t>((p * 255 + maxval / 2) / maxval);
    }
  return img;
}

RawImage read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_pnm(bytes, path);
}

std::vector<std::uint8_t> encode_pnm(const RawImage& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ParameterError("pnm: only 1 or 3 channels can be written, got " + std::to_string(img.channels));
  if (img.pixels.size() != img.width * img.height * img.channels)
    throw DimensionError("pnm: pixel buffer does not match " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + "x" + std::to_string(img.channels));
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) +
                             " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

void write_pnm(const std::string& path, const RawImage& img) {
  const auto bytes = encode_pnm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace qpseg
