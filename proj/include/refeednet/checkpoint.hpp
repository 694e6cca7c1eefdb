#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refeednet/model.hpp"
#include "refeednet/pnm.hpp"

// Checkpoint layout:
//   "RFN1" | u32 header length | header (compact JSON, sorted keys)
//        | parameters as f64, layer order, weights then bias
//        | u32 CRC-32 of every byte between the magic and the CRC
// All integers and floats are little-endian.

namespace refeednet {

inline constexpr char kCheckpointMagic[4] = {'R', 'F', 'N', '1'};
inline constexpr int kCheckpointVersion = 1;

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; checkpoints stay far below 4 GiB.
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

inline nlohmann::json layer_to_json(const LayerSpec& s) {
  nlohmann::json j;
  j["kind"] = to_string(s.kind);
  switch (s.kind) {
    case LayerKind::Conv2D:
      j["out_channels"] = s.out_channels;
      j["kernel_h"] = s.kernel_h;
      j["kernel_w"] = s.kernel_w;
      j["stride"] = s.stride;
      j["padding"] = s.padding;
      j["frozen"] = s.frozen;
      break;
    case LayerKind::MaxPool2D:
      j["window"] = s.window;
      j["stride"] = s.stride;
      break;
    case LayerKind::Dense:
      j["out_features"] = s.out_features;
      j["frozen"] = s.frozen;
      break;
    default:
      break;
  }
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec s;
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  switch (s.kind) {
    case LayerKind::Conv2D:
      s.out_channels = j.at("out_channels").get<std::size_t>();
      s.kernel_h = j.at("kernel_h").get<std::size_t>();
      s.kernel_w = j.at("kernel_w").get<std::size_t>();
      s.stride = j.at("stride").get<std::size_t>();
      s.padding = j.at("padding").get<std::size_t>();
      s.frozen = j.at("frozen").get<bool>();
      break;
    case LayerKind::MaxPool2D:
      s.window = j.at("window").get<std::size_t>();
      s.stride = j.at("stride").get<std::size_t>();
      break;
    case LayerKind::Dense:
      s.out_features = j.at("out_features").get<std::size_t>();
      s.frozen = j.at("frozen").get<bool>();
      break;
    default:
      break;
  }
  return s;
}

inline nlohmann::json architecture_json(const MicroCnn& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.layers) layers.push_back(layer_to_json(l.spec));
  return {{"format_version", kCheckpointVersion},
          {"input_shape", m.input_shape},
          {"layers", layers},
          {"class_count", m.class_count},
          {"base_boundary", m.base_boundary},
          {"seed", m.seed},
          {"parameter_count", m.parameter_count()}};
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

inline void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline double get_f64(std::span<const std::uint8_t> b, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos + static_cast<std::size_t>(i)]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline std::vector<std::uint8_t> save_checkpoint(const MicroCnn& m) {
  const std::string header = architecture_json(m).dump();
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& l : m.layers) {
    for (double w : l.weights.data()) detail::put_f64(out, w);
    for (double b : l.bias.data()) detail::put_f64(out, b);
  }
  const std::uint32_t crc = crc32_of(std::span(out).subspan(4));
  detail::put_u32(out, crc);
  return out;
}

inline MicroCnn load_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw FormatError(bytes.size(), "checkpoint truncated before header");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw FormatError(0, "bad checkpoint magic");
  const std::size_t header_len = detail::get_u32(bytes, 4);
  if (header_len > bytes.size() - 12) throw FormatError(4, "header length exceeds stream size");
  const std::size_t crc_pos = bytes.size() - 4;
  const std::uint32_t stored = detail::get_u32(bytes, crc_pos);
  if (crc32_of(bytes.subspan(4, crc_pos - 4)) != stored) throw FormatError(crc_pos, "checkpoint CRC mismatch");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(8, std::string("malformed checkpoint header: ") + e.what());
  }

  MicroCnn m;
  try {
    if (header.at("format_version").get<int>() != kCheckpointVersion)
      throw FormatError(8, "unsupported checkpoint version");
    if (header.at("class_count").get<std::size_t>() != kClassCount)
      throw FormatError(8, "checkpoint class_count must be 4");
    Architecture arch;
    arch.input_shape = header.at("input_shape").get<Shape>();
    for (const auto& lj : header.at("layers")) arch.layers.push_back(layer_from_json(lj));
    arch.base_boundary = header.at("base_boundary").get<std::size_t>();
    m = assemble(arch, header.at("seed").get<std::uint64_t>());
    if (header.at("parameter_count").get<std::size_t>() != m.parameter_count())
      throw FormatError(8, "parameter_count disagrees with architecture");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(8, std::string("incomplete checkpoint header: ") + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(8, std::string("invalid architecture: ") + e.what());
  }

  std::size_t pos = 8 + header_len;
  if (crc_pos - pos != m.parameter_count() * 8)
    throw FormatError(pos, "parameter block has " + std::to_string(crc_pos - pos) + " bytes, expected " +
                               std::to_string(m.parameter_count() * 8));
  for (auto& l : m.layers) {
    for (double& w : l.weights.data()) {
      w = detail::get_f64(bytes, pos);
      pos += 8;
    }
    for (double& b : l.bias.data()) {
      b = detail::get_f64(bytes, pos);
      pos += 8;
    }
  }
  return m;
}

/// The checkpoint's stored CRC-32 trailer, as eight hex digits.
inline std::string model_checksum(const MicroCnn& m) {
  const auto bytes = save_checkpoint(m);
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", detail::get_u32(bytes, bytes.size() - 4));
  return buf;
}

inline void save_checkpoint_file(const MicroCnn& m, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  write_file_bytes(tmp, save_checkpoint(m));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot replace " + path.string() + ": " + ec.message());
}

inline MicroCnn load_checkpoint_file(const std::filesystem::path& path) {
  return load_checkpoint(read_file_bytes(path));
}

}  // namespace refeednet
