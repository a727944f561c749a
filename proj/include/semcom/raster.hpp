#pragma once

// Binary portable pixmap (P6) / graymap (P5) I/O, 8 bits per sample.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "semcom/error.hpp"
#include "semcom/tensor.hpp"

namespace semcom {

/// 8-bit raster, interleaved samples, channels is 1 (gray) or 3 (rgb).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;
  friend bool operator==(const Raster&, const Raster&) = default;
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline Raster to_raster(const Image& img) {
  require(img.channels() == 1 || img.channels() == 3, ErrorCode::DimMismatch, "raster needs 1 or 3 channels");
  Raster r{img.width(), img.height(), img.channels(), {}};
  r.pixels.resize(static_cast<std::size_t>(r.width) * r.height * r.channels);
  std::size_t i = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) r.pixels[i++] = to_byte(img(c, y, x));
  return r;
}

inline Image to_image(const Raster& r) {
  Image img(r.channels, r.height, r.width);
  std::size_t i = 0;
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < r.channels; ++c) img(c, y, x) = r.pixels[i++] / 255.0f;
  return img;
}

/// Raw values (class ids, instance ids truncated to 8 bits) as a graymap.
template <typename T>
Raster grid_raster(const Grid<T>& g) {
  Raster r{g.width(), g.height(), 1, {}};
  r.pixels.reserve(g.size());
  for (auto v : g) r.pixels.push_back(static_cast<std::uint8_t>(v));
  return r;
}

inline std::vector<std::uint8_t> encode_raster(const Raster& r) {
  require(r.channels == 1 || r.channels == 3, ErrorCode::DimMismatch, "raster needs 1 or 3 channels");
  require(r.pixels.size() == static_cast<std::size_t>(r.width) * r.height * r.channels, ErrorCode::DimMismatch,
          "pixel buffer size does not match dims");
  const std::string header = std::string(r.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(r.width) + " " +
                             std::to_string(r.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  return out;
}

inline Raster decode_raster(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  require(bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'), ErrorCode::BadMagic,
          "not a binary PGM/PPM stream");
  Raster r;
  r.channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  auto next_int = [&]() -> long {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    require(pos < bytes.size() && std::isdigit(bytes[pos]), ErrorCode::BadMagic, "truncated raster header");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      require(v <= (1L << 24), ErrorCode::BadMagic, "raster header value too large");
    }
    return v;
  };
  r.width = static_cast<int>(next_int());
  r.height = static_cast<int>(next_int());
  const long maxval = next_int();
  require(maxval == 255, ErrorCode::BadMagic, "only 8-bit rasters are supported");
  require(pos < bytes.size() && std::isspace(bytes[pos]), ErrorCode::BadMagic, "truncated raster header");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(r.width) * r.height * r.channels;
  require(bytes.size() - pos == need, ErrorCode::BadMagic, "raster body has wrong length");
  r.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return r;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::IoFailure, "short write to " + path.string());
}

inline void write_raster(const std::filesystem::path& path, const Raster& r) { write_file(path, encode_raster(r)); }

inline Raster read_raster(const std::filesystem::path& path) { return decode_raster(read_file(path)); }

}  // namespace semcom
