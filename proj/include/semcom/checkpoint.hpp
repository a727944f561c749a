#pragma once

// Checkpoint file: "SCKP", u32 version, u64 architecture digest, u32 count,
// count little-endian float32 parameters, u32 CRC-32 of everything before.

#include <filesystem>

#include "semcom/bytes.hpp"
#include "semcom/learner.hpp"
#include "semcom/raster.hpp"

namespace semcom {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
Bytes encode_checkpoint(const TinyNet<T>& net) {
  ByteWriter w;
  w.raw(std::string_view("SCKP"));
  w.u32(kCheckpointVersion);
  w.u64(net.architecture_digest());
  w.u32(static_cast<std::uint32_t>(net.parameter_count()));
  for (const auto& p : net.params()) {
    for (T v : p.weight) w.f32(static_cast<float>(v));
    for (T v : p.bias) w.f32(static_cast<float>(v));
  }
  Bytes out = std::move(w).take();
  const std::uint32_t crc = crc32_of(out);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  return out;
}

/// Loads parameters into `net`, whose architecture must match the file.
template <typename T>
void decode_checkpoint(std::span<const std::uint8_t> bytes, TinyNet<T>& net) {
  require(bytes.size() >= 24 && std::memcmp(bytes.data(), "SCKP", 4) == 0, ErrorCode::BadVersion,
          "not a checkpoint (bad magic)");
  ByteReader r(bytes, ErrorCode::IoFailure);
  r.raw(4);
  const auto version = r.u32();
  require(version == kCheckpointVersion, ErrorCode::BadVersion,
          "unsupported checkpoint version " + std::to_string(version));
  const auto digest = r.u64();
  require(digest == net.architecture_digest(), ErrorCode::ShapeMismatch,
          "checkpoint architecture differs from " + net.describe());
  const auto count = r.u32();
  require(count == net.parameter_count(), ErrorCode::ShapeMismatch, "parameter count mismatch");
  require(bytes.size() == 24 + 4ull * count, ErrorCode::IoFailure, "checkpoint length mismatch");
  const std::uint32_t stored = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  require(stored == crc32_of(bytes.first(bytes.size() - 4)), ErrorCode::IoFailure, "checkpoint checksum mismatch");
  for (auto& p : net.params()) {
    for (T& v : p.weight) v = static_cast<T>(r.f32());
    for (T& v : p.bias) v = static_cast<T>(r.f32());
  }
}

template <typename T>
void checkpoint_save(const TinyNet<T>& net, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(net));
}

template <typename T>
void checkpoint_load(TinyNet<T>& net, const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  decode_checkpoint<T>(b, net);
}

}  // namespace semcom
