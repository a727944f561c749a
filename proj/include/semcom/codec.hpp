#pragma once

// Payload formats. All integers little-endian, bits packed MSB-first.
//
// Patch payload (masked edge map split into n x n patches, zero patches dropped):
//   u8 version | u16 H | u16 W | u8 n | u16 grid_h | u16 grid_w | u16 count
//   count x { u16 patch_index | ceil(n*n/8) bytes of row-major patch bits }
//
// Segmentation payload (row-major run-length coded class map):
//   u8 version | u16 H | u16 W | u8 K | u8 flags
//   flags bit 0 clear: runs = { u8 class | uLEB128 length }*
//   flags bit 0 set:   u32 raw_runs_length | zlib stream of the runs

#include <zlib.h>

#include <span>
#include <string>
#include <vector>

#include "semcom/bytes.hpp"
#include "semcom/imgproc.hpp"

namespace semcom {

inline constexpr std::uint8_t kPatchVersion = 1;
inline constexpr std::uint8_t kSegVersion = 1;
inline constexpr int kDefaultPatchSize = 8;

using MaskedEdge = BinaryMap;

/// x_att = mask AND edge.
inline MaskedEdge mask_edge(const EdgeMap& edge, const BinaryMap& mask) {
  require(edge.same_dims(mask), ErrorCode::DimMismatch, "edge and mask dims differ");
  MaskedEdge out(edge.height(), edge.width(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (edge[i] && mask[i]) ? 1 : 0;
  return out;
}

struct PatchRecord {
  std::uint16_t index = 0;
  std::vector<std::uint8_t> bits;  // ceil(n*n/8) packed bytes
  friend bool operator==(const PatchRecord&, const PatchRecord&) = default;
};

struct PatchPayload {
  std::uint8_t version = kPatchVersion;
  int height = 0, width = 0;
  int n = kDefaultPatchSize;
  int grid_h = 0, grid_w = 0;
  std::vector<PatchRecord> records;
  friend bool operator==(const PatchPayload&, const PatchPayload&) = default;
};

inline std::size_t patch_bytes(int n) { return (static_cast<std::size_t>(n) * n + 7) / 8; }

inline PatchPayload encode_patches(const MaskedEdge& x, int n = kDefaultPatchSize) {
  require(n >= 1 && n <= 255, ErrorCode::BadRange, "patch size must lie in [1,255]");
  require(x.height() <= 0xffff && x.width() <= 0xffff, ErrorCode::BadRange, "map too large for payload header");
  PatchPayload p;
  p.height = x.height();
  p.width = x.width();
  p.n = n;
  p.grid_h = (x.height() + n - 1) / n;
  p.grid_w = (x.width() + n - 1) / n;
  require(static_cast<long>(p.grid_h) * p.grid_w <= 0xffff, ErrorCode::PatchGridOverflow,
          "patch grid exceeds 65535 cells");
  for (int gy = 0; gy < p.grid_h; ++gy)
    for (int gx = 0; gx < p.grid_w; ++gx) {
      std::vector<std::uint8_t> bits(patch_bytes(n), 0);
      bool any = false;
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
          const int y = gy * n + r, xx = gx * n + c;
          if (y >= x.height() || xx >= x.width() || !x(y, xx)) continue;
          const std::size_t b = static_cast<std::size_t>(r) * n + c;
          bits[b / 8] |= static_cast<std::uint8_t>(0x80u >> (b % 8));
          any = true;
        }
      if (any) p.records.push_back({static_cast<std::uint16_t>(gy * p.grid_w + gx), std::move(bits)});
    }
  return p;
}

inline Bytes to_bytes(const PatchPayload& p) {
  ByteWriter w;
  w.u8(p.version);
  w.u16(static_cast<std::uint16_t>(p.height));
  w.u16(static_cast<std::uint16_t>(p.width));
  w.u8(static_cast<std::uint8_t>(p.n));
  w.u16(static_cast<std::uint16_t>(p.grid_h));
  w.u16(static_cast<std::uint16_t>(p.grid_w));
  w.u16(static_cast<std::uint16_t>(p.records.size()));
  for (const auto& r : p.records) {
    w.u16(r.index);
    w.raw(r.bits);
  }
  return std::move(w).take();
}

/// Parses and validates the wire form: grid consistent with dims, indices
/// strictly increasing and inside the grid, no empty records, no bits in
/// the zero padding.
inline PatchPayload patches_from_bytes(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::MalformedPayload);
  PatchPayload p;
  p.version = r.u8();
  require(p.version == kPatchVersion, ErrorCode::BadVersion, "unsupported patch payload version");
  p.height = r.u16();
  p.width = r.u16();
  p.n = r.u8();
  p.grid_h = r.u16();
  p.grid_w = r.u16();
  require(p.n >= 1, ErrorCode::MalformedPayload, "zero patch size");
  require(p.grid_h == (p.height + p.n - 1) / p.n && p.grid_w == (p.width + p.n - 1) / p.n,
          ErrorCode::MalformedPayload, "grid dims inconsistent with map dims");
  const long cells = static_cast<long>(p.grid_h) * p.grid_w;
  const int count = r.u16();
  require(count <= cells, ErrorCode::MalformedPayload, "more records than grid cells");
  const std::size_t nb = patch_bytes(p.n);
  long prev = -1;
  for (int i = 0; i < count; ++i) {
    PatchRecord rec;
    rec.index = r.u16();
    require(rec.index < cells, ErrorCode::IndexOutOfGrid, "patch index " + std::to_string(rec.index) + " outside grid");
    require(rec.index > prev, ErrorCode::MalformedPayload, "patch indices not strictly increasing");
    prev = rec.index;
    const auto raw = r.raw(nb);
    rec.bits.assign(raw.begin(), raw.end());
    bool any = false;
    const int gy = rec.index / p.grid_w, gx = rec.index % p.grid_w;
    for (int b = 0; b < static_cast<int>(nb * 8); ++b) {
      if (!(rec.bits[static_cast<std::size_t>(b / 8)] & (0x80u >> (b % 8)))) continue;
      const int row = b / p.n, col = b % p.n;
      require(b < p.n * p.n && gy * p.n + row < p.height && gx * p.n + col < p.width, ErrorCode::MalformedPayload,
              "set bit in patch padding");
      any = true;
    }
    require(any, ErrorCode::MalformedPayload, "all-zero patch record");
    p.records.push_back(std::move(rec));
  }
  require(r.done(), ErrorCode::MalformedPayload, "trailing bytes after patch records");
  return p;
}

inline MaskedEdge decode_patches(const PatchPayload& p) {
  require(p.n >= 1, ErrorCode::MalformedPayload, "zero patch size");
  MaskedEdge out(p.height, p.width, 0);
  const long cells = static_cast<long>(p.grid_h) * p.grid_w;
  for (const auto& rec : p.records) {
    require(rec.index < cells, ErrorCode::IndexOutOfGrid, "patch index outside grid");
    require(rec.bits.size() == patch_bytes(p.n), ErrorCode::MalformedPayload, "patch record has wrong size");
    const int gy = rec.index / p.grid_w, gx = rec.index % p.grid_w;
    for (int b = 0; b < p.n * p.n; ++b) {
      if (!(rec.bits[static_cast<std::size_t>(b / 8)] & (0x80u >> (b % 8)))) continue;
      const int y = gy * p.n + b / p.n, x = gx * p.n + b % p.n;
      if (out.in_bounds(y, x)) out(y, x) = 1;
    }
  }
  return out;
}

inline MaskedEdge decode_patches(std::span<const std::uint8_t> bytes) { return decode_patches(patches_from_bytes(bytes)); }

struct SegRun {
  std::uint8_t class_id = 0;
  std::uint32_t length = 0;
  friend bool operator==(const SegRun&, const SegRun&) = default;
};

struct SegPayload {
  std::uint8_t version = kSegVersion;
  int height = 0, width = 0;
  int num_classes = 0;
  bool deflate = false;
  std::vector<SegRun> runs;
  friend bool operator==(const SegPayload&, const SegPayload&) = default;
};

namespace detail {

inline Bytes run_bytes(const std::vector<SegRun>& runs) {
  ByteWriter w;
  for (const auto& r : runs) {
    w.u8(r.class_id);
    w.varint(r.length);
  }
  return std::move(w).take();
}

inline Bytes zlib_deflate(std::span<const std::uint8_t> in) {
  uLongf cap = compressBound(static_cast<uLong>(in.size()));
  Bytes out(cap);
  const int rc = compress2(out.data(), &cap, in.data(), static_cast<uLong>(in.size()), Z_BEST_COMPRESSION);
  require(rc == Z_OK, ErrorCode::MalformedPayload, "zlib compression failed");
  out.resize(cap);
  return out;
}

inline Bytes zlib_inflate(std::span<const std::uint8_t> in, std::size_t expected) {
  Bytes out(expected);
  uLongf len = static_cast<uLongf>(expected);
  const int rc = uncompress(out.data(), &len, in.data(), static_cast<uLong>(in.size()));
  require(rc == Z_OK && len == expected, ErrorCode::MalformedPayload, "corrupt deflate stream");
  return out;
}

}  // namespace detail

inline std::vector<SegRun> seg_runs(const ClassMap& seg) {
  std::vector<SegRun> runs;
  for (auto v : seg) {
    if (!runs.empty() && runs.back().class_id == v)
      ++runs.back().length;
    else
      runs.push_back({v, 1});
  }
  return runs;
}

/// Run-length codes the class map; the deflate flag is set only when the
/// compressed run stream is strictly smaller.
inline SegPayload encode_seg(const ClassMap& seg, int num_classes, bool allow_deflate = true) {
  require(num_classes >= 1 && num_classes <= 255, ErrorCode::BadRange, "K must lie in [1,255]");
  require(seg.height() <= 0xffff && seg.width() <= 0xffff, ErrorCode::BadRange, "map too large for payload header");
  for (auto v : seg) require(v < num_classes, ErrorCode::ClassOutOfRange, "class index >= K");
  SegPayload p;
  p.height = seg.height();
  p.width = seg.width();
  p.num_classes = num_classes;
  p.runs = seg_runs(seg);
  if (allow_deflate) {
    const Bytes raw = detail::run_bytes(p.runs);
    p.deflate = 4 + detail::zlib_deflate(raw).size() < raw.size();
  }
  return p;
}

inline Bytes to_bytes(const SegPayload& p) {
  ByteWriter w;
  w.u8(p.version);
  w.u16(static_cast<std::uint16_t>(p.height));
  w.u16(static_cast<std::uint16_t>(p.width));
  w.u8(static_cast<std::uint8_t>(p.num_classes));
  w.u8(p.deflate ? 1 : 0);
  const Bytes raw = detail::run_bytes(p.runs);
  if (p.deflate) {
    w.u32(static_cast<std::uint32_t>(raw.size()));
    w.raw(detail::zlib_deflate(raw));
  } else {
    w.raw(raw);
  }
  return std::move(w).take();
}

inline SegPayload seg_from_bytes(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::MalformedPayload);
  SegPayload p;
  p.version = r.u8();
  require(p.version == kSegVersion, ErrorCode::BadVersion, "unsupported segmentation payload version");
  p.height = r.u16();
  p.width = r.u16();
  p.num_classes = r.u8();
  const std::uint8_t flags = r.u8();
  require((flags & ~1u) == 0, ErrorCode::MalformedPayload, "unknown segmentation flags");
  require(p.num_classes >= 1, ErrorCode::MalformedPayload, "K must be >= 1");
  p.deflate = flags & 1u;
  Bytes raw;
  if (p.deflate) {
    const std::uint32_t len = r.u32();
    const std::uint64_t cells = static_cast<std::uint64_t>(p.height) * p.width;
    // Each run takes at least two bytes and covers at least one pixel.
    require(len <= cells * 6, ErrorCode::MalformedPayload, "implausible run stream length");
    raw = detail::zlib_inflate(r.raw(r.remaining()), len);
  } else {
    const auto rest = r.raw(r.remaining());
    raw.assign(rest.begin(), rest.end());
  }
  ByteReader rr(raw, ErrorCode::MalformedPayload);
  const std::uint64_t total = static_cast<std::uint64_t>(p.height) * p.width;
  std::uint64_t covered = 0;
  while (!rr.done()) {
    SegRun run;
    run.class_id = rr.u8();
    const std::uint64_t len = rr.varint();
    require(run.class_id < p.num_classes, ErrorCode::MalformedPayload, "run class >= K");
    require(len >= 1 && len <= total - covered, ErrorCode::MalformedPayload, "run length out of range");
    run.length = static_cast<std::uint32_t>(len);
    covered += len;
    p.runs.push_back(run);
  }
  require(covered == total, ErrorCode::MalformedPayload, "runs do not cover the map");
  return p;
}

inline ClassMap decode_seg(const SegPayload& p) {
  ClassMap seg(p.height, p.width, 0);
  std::size_t i = 0;
  for (const auto& run : p.runs) {
    require(run.class_id < p.num_classes, ErrorCode::MalformedPayload, "run class >= K");
    require(run.length <= seg.size() - i, ErrorCode::MalformedPayload, "runs exceed the map");
    std::fill_n(seg.begin() + static_cast<std::ptrdiff_t>(i), run.length, run.class_id);
    i += run.length;
  }
  require(i == seg.size(), ErrorCode::MalformedPayload, "runs do not cover the map");
  return seg;
}

inline ClassMap decode_seg(std::span<const std::uint8_t> bytes) { return decode_seg(seg_from_bytes(bytes)); }

/// Step numbers as used in the ledger.
enum class Step { Init = 1, Feedback = 2, Update = 3, Done = 4 };

inline std::string_view step_name(Step s) {
  switch (s) {
    case Step::Init: return "init";
    case Step::Feedback: return "feedback";
    case Step::Update: return "update";
    case Step::Done: return "done";
  }
  return "?";
}

struct LedgerEntry {
  int round = 0;
  Step step = Step::Init;
  std::size_t bytes = 0;  // full serialized frame length
  friend bool operator==(const LedgerEntry&, const LedgerEntry&) = default;
};

/// Per-message frame byte counts. Only Step-1 and Step-3 frames enter the
/// compression rate; feedback and session-done frames are logged but not
/// counted.
struct BandwidthLedger {
  std::size_t raw_bytes = 0;
  std::vector<LedgerEntry> entries;

  void add(int round, Step step, std::size_t bytes) { entries.push_back({round, step, bytes}); }

  std::size_t semantic_bytes() const {
    std::size_t s = 0;
    for (const auto& e : entries)
      if (e.step == Step::Init || e.step == Step::Update) s += e.bytes;
    return s;
  }
  std::size_t total_bytes() const {
    std::size_t s = 0;
    for (const auto& e : entries) s += e.bytes;
    return s;
  }
  friend bool operator==(const BandwidthLedger&, const BandwidthLedger&) = default;
};

inline std::size_t raw_rgb_bytes(int height, int width) { return static_cast<std::size_t>(height) * width * 3; }

/// raw_bytes / (Step-1 + Step-3 bytes).
inline double compression_rate(const BandwidthLedger& ledger) {
  const std::size_t denom = ledger.semantic_bytes();
  require(denom > 0, ErrorCode::EmptyLedger, "ledger has no semantic payload bytes");
  return static_cast<double>(ledger.raw_bytes) / static_cast<double>(denom);
}

}  // namespace semcom
