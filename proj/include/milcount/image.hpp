#pragma once

#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "common.hpp"
#include "io.hpp"

namespace milcount {

// 8-bit raster, row-major, channels interleaved.
struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  RasterImage() = default;
  RasterImage(int w, int h, int c = 1, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {
    if (w < 1 || h < 1) throw ValidationError("image dimensions must be >= 1");
    if (c != 1 && c != 3) throw ValidationError("image must have 1 or 3 channels");
  }

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }

  std::uint8_t& at(int x, int y, int c = 0) { return pixels[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c = 0) const { return pixels[index(x, y, c)]; }

  bool empty() const { return pixels.empty(); }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

// Single-channel intensity view; RGB is reduced by the rounded channel mean.
inline RasterImage to_gray(const RasterImage& img) {
  if (img.channels == 1) return img;
  RasterImage out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const int sum = img.at(x, y, 0) + img.at(x, y, 1) + img.at(x, y, 2);
      out.at(x, y) = static_cast<std::uint8_t>((sum + 1) / 3);
    }
  return out;
}

// Binary PGM (P5) / PPM (P6) with maxval 255. Lossless, so augmented pixels
// survive a write/read cycle unchanged.
inline std::string encode_pnm(const RasterImage& img) {
  std::string out = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

inline RasterImage decode_pnm(std::string_view data, const std::string& name) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_space();
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return std::string(data.substr(start, pos - start));
  };
  const std::string magic = token();
  int channels;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw ParseError("'" + name + "': not a binary PGM/PPM image");
  const long long w = io::parse_int(token(), name + " width");
  const long long h = io::parse_int(token(), name + " height");
  const long long maxval = io::parse_int(token(), name + " maxval");
  if (maxval != 255) throw ParseError("'" + name + "': only 8-bit images (maxval 255) are supported");
  if (w < 1 || h < 1) throw ParseError("'" + name + "': empty image");
  ++pos;  // single whitespace byte before the raster
  RasterImage img(static_cast<int>(w), static_cast<int>(h), channels);
  if (data.size() < pos + img.pixels.size()) throw ParseError("'" + name + "': truncated raster");
  std::memcpy(img.pixels.data(), data.data() + pos, img.pixels.size());
  return img;
}

inline RasterImage read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing image file '" + path.string() + "'");
  return decode_pnm(io::read_text(path), path.string());
}

inline void write_image(const std::filesystem::path& path, const RasterImage& img) {
  io::write_bytes(path, encode_pnm(img));
}

}  // namespace milcount
