// SPDX-License-Identifier: Apache-2.0
#include "xmr/raster.hpp"

#include <cctype>
#include <string>

#include "xmr/error.hpp"
#include "xmr/io.hpp"

namespace xmr {

Image::Image(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw Error(ErrorCode::DimensionMismatch, "negative image size");
  pixels_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < pixels_.size(); i += 3) {
    pixels_[i] = fill.r;
    pixels_[i + 1] = fill.g;
    pixels_[i + 2] = fill.b;
  }
}

Rgb Image::at(int x, int y) const {
  const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
}

void Image::set(int x, int y, Rgb c) {
  const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  pixels_[i] = c.r;
  pixels_[i + 1] = c.g;
  pixels_[i + 2] = c.b;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto px = image.bytes();
  out.insert(out.end(), px.begin(), px.end());
  return out;
}

namespace {

class PpmReader {
 public:
  explicit PpmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  int next_int() {
    skip_space_and_comments();
    int value = 0;
    bool any = false;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      any = true;
      if (value > 1 << 20) throw Error(ErrorCode::Io, "ppm header value too large");
    }
    if (!any) throw Error(ErrorCode::Io, "malformed ppm header");
    return value;
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t pos_ = 0;
  std::span<const std::uint8_t> bytes_;
};

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw Error(ErrorCode::Io, "not a binary PPM (P6)");
  }
  PpmReader reader(bytes.subspan(2));
  const int width = reader.next_int();
  const int height = reader.next_int();
  const int maxval = reader.next_int();
  if (maxval != 255) throw Error(ErrorCode::Io, "only 8-bit PPM is supported");
  // exactly one whitespace byte separates the header from the raster
  const std::size_t start = 2 + reader.pos_ + 1;
  const std::size_t need = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() < start + need) throw Error(ErrorCode::Io, "truncated PPM raster");
  Image image(width, height);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(start), need, image.bytes().begin());
  return image;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  write_bytes(path, encode_ppm(image));
}

Image read_ppm(const std::filesystem::path& path) { return decode_ppm(read_bytes(path)); }

}  // namespace xmr
