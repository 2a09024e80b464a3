#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "error.hpp"

namespace protoseg {

/// 8-bit RGB image, row-major, interleaved.
struct SourceImage {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint8_t> rgb;

  SourceImage() = default;
  SourceImage(std::uint32_t h, std::uint32_t w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }

  bool operator==(const SourceImage&) const = default;
};

namespace detail {

// Netpbm header: magic, then whitespace-separated integers with '#' comments,
// then exactly one whitespace byte before the raster.
struct PnmHeader {
  std::string magic;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t maxval = 0;
  std::size_t data_offset = 0;
};

inline PnmHeader parse_pnm_header(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  PnmHeader h;
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::uint32_t {
    skip_ws();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw IoError(what + ": malformed header");
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 0xFFFFFFFFULL) throw IoError(what + ": header value overflow");
    }
    return static_cast<std::uint32_t>(v);
  };
  if (bytes.size() < 2) throw IoError(what + ": truncated header");
  h.magic.assign(bytes.begin(), bytes.begin() + 2);
  pos = 2;
  h.width = read_uint();
  h.height = read_uint();
  h.maxval = read_uint();
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw IoError(what + ": malformed header");
  h.data_offset = pos + 1;
  return h;
}

}  // namespace detail

inline std::string encode_ppm(const SourceImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return out;
}

inline void write_ppm(const SourceImage& img, const std::filesystem::path& path) {
  write_file_bytes(path, encode_ppm(img));
}

inline SourceImage read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto h = detail::parse_pnm_header(bytes, path.string());
  if (h.magic != "P6") throw IoError(path.string() + ": not a binary PPM (P6)");
  if (h.maxval != 255) throw IoError(path.string() + ": only maxval 255 is supported");
  SourceImage img(h.height, h.width);
  if (bytes.size() - h.data_offset < img.rgb.size()) throw IoError(path.string() + ": truncated raster");
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset), img.rgb.size(), img.rgb.begin());
  return img;
}

/// Copies a rectangular region.
inline SourceImage crop(const SourceImage& img, std::uint32_t x, std::uint32_t y, std::uint32_t w, std::uint32_t h) {
  if (x + w > img.width || y + h > img.height) throw NumericError("crop region out of bounds");
  SourceImage out(h, w);
  for (std::uint32_t r = 0; r < h; ++r) {
    const auto* src = img.rgb.data() + ((static_cast<std::size_t>(y) + r) * img.width + x) * 3;
    std::copy_n(src, static_cast<std::size_t>(w) * 3, out.rgb.data() + static_cast<std::size_t>(r) * w * 3);
  }
  return out;
}

}  // namespace protoseg
