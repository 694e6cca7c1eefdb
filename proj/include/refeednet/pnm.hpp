#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "refeednet/error.hpp"
#include "refeednet/tensor.hpp"

namespace refeednet {

/// Decodes binary portable graymap (P5) or pixmap (P6) bytes into an
/// H x W x C tensor scaled to [0,1].
inline Tensor decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
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
  auto read_uint = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos]) && pos - start < 9) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw FormatError(start, std::string("expected ") + what + " in pixmap header");
    return static_cast<std::size_t>(v);
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError(0, "not a binary PGM/PPM (expected P5 or P6 magic)");
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  const std::size_t width = read_uint("width");
  const std::size_t height = read_uint("height");
  const std::size_t maxval = read_uint("maxval");
  if (width == 0 || height == 0) throw FormatError(pos, "zero image dimension");
  if (maxval == 0 || maxval > 65535) throw FormatError(pos, "maxval outside 1..65535");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError(pos, "missing header terminator");
  ++pos;

  const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
  const std::size_t n = width * height * channels;
  if (bytes.size() - pos < n * sample_bytes)
    throw FormatError(bytes.size(), "pixel data truncated: need " + std::to_string(n * sample_bytes) +
                                        " bytes after header");
  Tensor out({height, width, channels});
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t v = bytes[pos + i * sample_bytes];
    if (sample_bytes == 2) v = (v << 8) | bytes[pos + i * 2 + 1];
    if (v > maxval) throw FormatError(pos + i * sample_bytes, "sample exceeds maxval");
    out[i] = static_cast<double>(v) * scale;
  }
  return out;
}

/// 8-bit P5 (one channel) or P6 (three channels).
inline std::vector<std::uint8_t> encode_pnm(const Tensor& img) {
  const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
  if (c != 1 && c != 3) throw Error(ErrorKind::InputShape, "pixmap needs 1 or 3 channels");
  const std::string header =
      std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + img.size());
  for (double v : img.data())
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());
}

inline Tensor read_pnm(const std::filesystem::path& path) { return decode_pnm(read_file_bytes(path)); }

inline void write_pnm(const std::filesystem::path& path, const Tensor& img) { write_file_bytes(path, encode_pnm(img)); }

/// Nearest-neighbour resize to `shape` (H x W x C). Three-channel input is
/// converted to luma when one channel is requested; one channel is
/// replicated when three are requested.
inline Tensor resize_nearest(const Tensor& img, const Shape& shape) {
  const std::size_t sh = img.shape()[0], sw = img.shape()[1], sc = img.shape()[2];
  const std::size_t dh = shape[0], dw = shape[1], dc = shape[2];
  Tensor out(shape);
  for (std::size_t y = 0; y < dh; ++y) {
    const std::size_t yy = y * sh / dh;
    for (std::size_t x = 0; x < dw; ++x) {
      const std::size_t xx = x * sw / dw;
      if (sc == dc) {
        for (std::size_t k = 0; k < dc; ++k) out.at(y, x, k) = img.at(yy, xx, k);
      } else if (sc == 3 && dc == 1) {
        out.at(y, x, 0) = std::clamp(
            0.299 * img.at(yy, xx, 0) + 0.587 * img.at(yy, xx, 1) + 0.114 * img.at(yy, xx, 2), 0.0, 1.0);
      } else if (sc == 1 && dc == 3) {
        for (std::size_t k = 0; k < 3; ++k) out.at(y, x, k) = img.at(yy, xx, 0);
      } else {
        throw Error(ErrorKind::InputShape, "unsupported channel conversion");
      }
    }
  }
  return out;
}

}  // namespace refeednet
