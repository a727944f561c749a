#pragma once

// Procedural street-like scenes with oracle segmentation, instance maps and
// object records. Stands in for a labeled dataset plus a pretrained segmenter.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "semcom/error.hpp"
#include "semcom/rng.hpp"
#include "semcom/tensor.hpp"

namespace semcom {

inline constexpr int kNumClasses = 6;

enum ClassId : std::uint8_t {
  kBackground = 0,
  kRoad = 1,
  kBuilding = 2,
  kCar = 3,
  kPerson = 4,
  kTree = 5,
};

inline constexpr std::array<const char*, kNumClasses> kClassNames = {
    "background", "road", "building", "car", "person", "tree"};

inline std::string class_name(int c) {
  return (c >= 0 && c < kNumClasses) ? kClassNames[static_cast<std::size_t>(c)] : "class" + std::to_string(c);
}

struct Rgb {
  float r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

using Palette = std::array<Rgb, kNumClasses>;

inline Palette default_palette() {
  return {{
      {0.55f, 0.70f, 0.90f},  // background (sky)
      {0.35f, 0.35f, 0.38f},  // road
      {0.62f, 0.50f, 0.40f},  // building
      {0.85f, 0.12f, 0.12f},  // car
      {0.95f, 0.85f, 0.15f},  // person
      {0.10f, 0.55f, 0.15f},  // tree
  }};
}

/// Multiplier applied to pixels of an instance that touch another instance
/// of the same class, so touching objects stay visually separable.
inline constexpr float kContactShade = 0.25f;

struct PlannedObject {
  int class_id = 0;
  int cx = 0, cy = 0;
  int hx = 1, hy = 1;
  int draw_order = 0;
  friend bool operator==(const PlannedObject&, const PlannedObject&) = default;
};

struct SceneSpec {
  int width = 64;
  int height = 32;
  std::uint64_t seed = 0;
  std::vector<PlannedObject> objects;
  Palette colors = default_palette();
  double texture_amplitude = 0.04;
};

/// Half-open pixel box: covers x0 <= x < x1, y0 <= y < y1.
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int area() const { return std::max(0, x1 - x0) * std::max(0, y1 - y0); }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct ObjectRecord {
  int class_id = 0;
  BBox bbox;
  friend bool operator==(const ObjectRecord&, const ObjectRecord&) = default;
};

struct SceneBundle {
  std::uint64_t seed = 0;
  Image image;                 // 3 x H x W in [0,1]
  ClassMap seg;                // class index per pixel
  InstanceMap instance_map;    // 0 = background, else index into objects + 1
  std::vector<ObjectRecord> objects;
  std::array<int, kNumClasses> class_counts{};

  int width() const { return seg.width(); }
  int height() const { return seg.height(); }
  friend bool operator==(const SceneBundle&, const SceneBundle&) = default;
};

namespace detail {

inline bool covers(const PlannedObject& o, int x, int y) {
  const int dx = x - o.cx, dy = y - o.cy;
  if (std::abs(dx) > o.hx || std::abs(dy) > o.hy) return false;
  switch (o.class_id) {
    case kPerson:
    case kTree: {
      // Ellipse inscribed in the half-extent box; integer test keeps it exact.
      const long a = 2L * o.hx + 1, b = 2L * o.hy + 1;
      const long ex = 2L * dx, ey = 2L * dy;
      return ex * ex * b * b + ey * ey * a * a <= a * a * b * b;
    }
    case kCar:
      // Rounded rectangle: drop the four corner pixels.
      return !(o.hx >= 2 && o.hy >= 2 && std::abs(dx) == o.hx && std::abs(dy) == o.hy);
    default:
      return true;
  }
}

inline std::uint64_t fnv1a(std::uint64_t h, std::int64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= static_cast<std::uint64_t>(v >> (8 * i)) & 0xffu;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Stable 64-bit digest of a spec (manifest bookkeeping).
inline std::uint64_t spec_digest(const SceneSpec& spec) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = detail::fnv1a(h, spec.width);
  h = detail::fnv1a(h, spec.height);
  h = detail::fnv1a(h, static_cast<std::int64_t>(spec.seed));
  for (const auto& o : spec.objects)
    for (int v : {o.class_id, o.cx, o.cy, o.hx, o.hy, o.draw_order}) h = detail::fnv1a(h, v);
  for (const auto& c : spec.colors)
    for (float v : {c.r, c.g, c.b}) h = detail::fnv1a(h, std::llround(static_cast<double>(v) * 1e6));
  h = detail::fnv1a(h, std::llround(spec.texture_amplitude * 1e6));
  return h;
}

inline void validate(const SceneSpec& spec) {
  require(spec.width >= 16 && spec.height >= 16, ErrorCode::InvalidSpec, "canvas must be at least 16x16");
  require(spec.texture_amplitude >= 0.0 && spec.texture_amplitude <= 1.0, ErrorCode::InvalidSpec,
          "texture amplitude outside [0,1]");
  require(spec.objects.size() < 65535, ErrorCode::InvalidSpec, "too many objects");
  for (const auto& o : spec.objects) {
    require(o.class_id >= 0 && o.class_id < kNumClasses, ErrorCode::InvalidSpec,
            "class id " + std::to_string(o.class_id) + " out of range");
    require(o.hx >= 1 && o.hy >= 1, ErrorCode::InvalidSpec, "half extents must be >= 1");
    const bool outside = o.cx + o.hx < 0 || o.cx - o.hx >= spec.width || o.cy + o.hy < 0 ||
                         o.cy - o.hy >= spec.height;
    require(!outside, ErrorCode::InvalidSpec, "object lies fully outside the canvas");
  }
}

/// Renders a spec. Objects are painted in ascending draw_order (ties by plan
/// position), later ones occluding earlier ones. Fully occluded objects get
/// no record; surviving instance ids are 1..N in plan order.
inline SceneBundle generate_scene(const SceneSpec& spec) {
  validate(spec);
  const int H = spec.height, W = spec.width;
  std::vector<std::size_t> order(spec.objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return spec.objects[a].draw_order < spec.objects[b].draw_order;
  });

  Grid<std::uint32_t> owner(H, W, 0);  // plan index + 1
  for (std::size_t idx : order) {
    const auto& o = spec.objects[idx];
    const int y0 = std::max(0, o.cy - o.hy), y1 = std::min(H - 1, o.cy + o.hy);
    const int x0 = std::max(0, o.cx - o.hx), x1 = std::min(W - 1, o.cx + o.hx);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (detail::covers(o, x, y)) owner(y, x) = static_cast<std::uint32_t>(idx + 1);
  }

  std::vector<int> remap(spec.objects.size() + 1, 0);
  std::vector<BBox> boxes(spec.objects.size() + 1, BBox{W, H, 0, 0});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (auto k = owner(y, x)) {
        auto& b = boxes[k];
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x + 1);
        b.y1 = std::max(b.y1, y + 1);
        remap[k] = 1;
      }

  SceneBundle out;
  out.seed = spec.seed;
  int next_id = 0;
  for (std::size_t k = 1; k < remap.size(); ++k) {
    if (!remap[k]) continue;
    remap[k] = ++next_id;
    const int cls = spec.objects[k - 1].class_id;
    out.objects.push_back({cls, boxes[k]});
    ++out.class_counts[static_cast<std::size_t>(cls)];
  }

  out.seg = ClassMap(H, W, kBackground);
  out.instance_map = InstanceMap(H, W, 0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (auto k = owner(y, x)) {
        out.instance_map(y, x) = static_cast<std::uint16_t>(remap[k]);
        out.seg(y, x) = static_cast<std::uint8_t>(spec.objects[k - 1].class_id);
      }

  out.image = Image(3, H, W);
  const float amp = static_cast<float>(spec.texture_amplitude);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int cls = out.seg(y, x);
      const Rgb base = spec.colors[static_cast<std::size_t>(cls)];
      const int inst = out.instance_map(y, x);
      float shade = 1.0f;
      if (inst != 0) {
        for (int dy = -1; dy <= 1 && shade == 1.0f; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (!out.instance_map.in_bounds(yy, xx)) continue;
            const int other = out.instance_map(yy, xx);
            if (other != 0 && other != inst && out.seg(yy, xx) == cls) {
              shade = kContactShade;
              break;
            }
          }
      }
      const float tex = amp * static_cast<float>(hash_unit(spec.seed, static_cast<std::uint64_t>(y),
                                                           static_cast<std::uint64_t>(x)));
      const float rgb[3] = {base.r, base.g, base.b};
      for (int c = 0; c < 3; ++c) out.image(c, y, x) = std::clamp(rgb[c] * shade + tex, 0.0f, 1.0f);
    }
  return out;
}

/// Ranges driving the random scene layout used by sample_dataset.
struct GeneratorConfig {
  int width = 64;
  int height = 32;
  double texture_amplitude = 0.04;
  /// Probability that at least one group of the class appears.
  double p_car = 0.85;
  double p_person = 0.85;
  double p_tree = 0.5;
  double p_building = 0.9;
  int max_car_groups = 2;
  int max_cars_per_group = 3;
  int max_person_groups = 2;
  int max_people_per_group = 4;
  int max_trees = 2;
  int max_buildings = 3;
  /// Probability that neighbours in a group touch (otherwise a 1-pixel gap).
  double p_touch = 0.8;
  int max_instances = 20;
};

namespace detail {

struct Rect {
  int x0, y0, x1, y1;  // inclusive
  bool overlaps(const Rect& o, int margin) const {
    return !(x1 + margin < o.x0 || o.x1 + margin < x0 || y1 + margin < o.y0 || o.y1 + margin < y0);
  }
};

}  // namespace detail

/// Builds a random street layout: sky, road band, buildings and trees on the
/// horizon, then rows of cars and groups of people that never overlap each
/// other but frequently touch within a group.
inline SceneSpec random_scene_spec(std::uint64_t seed, const GeneratorConfig& cfg) {
  require(cfg.width >= 16 && cfg.height >= 16, ErrorCode::InvalidSpec, "canvas must be at least 16x16");
  Rng rng(seed);
  SceneSpec spec;
  spec.width = cfg.width;
  spec.height = cfg.height;
  spec.seed = seed;
  spec.texture_amplitude = cfg.texture_amplitude;
  const int W = cfg.width, H = cfg.height;

  const int road_rows = std::max(4, (H * 13) / 32);
  const int road_top = H - road_rows;
  {
    const int hy = road_rows / 2;
    spec.objects.push_back({kRoad, W / 2, road_top + hy, W / 2, hy, 0});
  }

  if (rng.bernoulli(cfg.p_building)) {
    const int n = static_cast<int>(rng.uniform_int(1, cfg.max_buildings));
    for (int i = 0; i < n; ++i) {
      const int hx = static_cast<int>(rng.uniform_int(4, 10));
      const int hy = static_cast<int>(rng.uniform_int(3, std::max(3, road_top / 2 - 1)));
      const int cx = static_cast<int>(rng.uniform_int(0, W - 1));
      spec.objects.push_back({kBuilding, cx, road_top - 1 - hy, hx, hy, 1});
    }
  }
  if (rng.bernoulli(cfg.p_tree)) {
    const int n = static_cast<int>(rng.uniform_int(1, cfg.max_trees));
    for (int i = 0; i < n; ++i) {
      const int hx = static_cast<int>(rng.uniform_int(2, 4));
      const int hy = static_cast<int>(rng.uniform_int(3, 5));
      const int cx = static_cast<int>(rng.uniform_int(hx, W - 1 - hx));
      spec.objects.push_back({kTree, cx, road_top - hy + 1, hx, hy, 2});
    }
  }

  std::vector<detail::Rect> taken;
  auto place_group = [&](int cls, int count, int hx, int hy, int y_lo, int y_hi, int order) {
    if (y_hi < y_lo) return;
    std::vector<int> gaps(static_cast<std::size_t>(std::max(0, count - 1)));
    for (auto& g : gaps) g = rng.bernoulli(cfg.p_touch) ? 0 : 1;
    int span = count * (2 * hx + 1);
    for (int g : gaps) span += g;
    if (span > W) return;
    for (int attempt = 0; attempt < 40; ++attempt) {
      const int x_start = static_cast<int>(rng.uniform_int(0, W - span));
      const int cy = static_cast<int>(rng.uniform_int(y_lo, y_hi));
      const detail::Rect r{x_start, cy - hy, x_start + span - 1, cy + hy};
      if (std::any_of(taken.begin(), taken.end(), [&](const detail::Rect& t) { return t.overlaps(r, 1); }))
        continue;
      if (static_cast<int>(spec.objects.size()) + count > cfg.max_instances) return;
      taken.push_back(r);
      int x = x_start + hx;
      for (int i = 0; i < count; ++i) {
        spec.objects.push_back({cls, x, cy, hx, hy, order});
        if (i + 1 < count) x += 2 * hx + 1 + gaps[static_cast<std::size_t>(i)];
      }
      return;
    }
  };

  struct Group {
    int cls, count;
  };
  std::vector<Group> groups;
  if (rng.bernoulli(cfg.p_car)) {
    const int n = static_cast<int>(rng.uniform_int(1, cfg.max_car_groups));
    for (int i = 0; i < n; ++i)
      groups.push_back({kCar, static_cast<int>(rng.uniform_int(1, cfg.max_cars_per_group))});
  }
  if (rng.bernoulli(cfg.p_person)) {
    const int n = static_cast<int>(rng.uniform_int(1, cfg.max_person_groups));
    for (int i = 0; i < n; ++i)
      groups.push_back({kPerson, static_cast<int>(rng.uniform_int(1, cfg.max_people_per_group))});
  }
  for (const auto& g : groups) {
    if (g.cls == kCar) {
      const int hx = static_cast<int>(rng.uniform_int(3, 5));
      const int hy = static_cast<int>(rng.uniform_int(2, 3));
      place_group(kCar, g.count, hx, hy, road_top + hy + 1, H - 1 - hy, 3);
    } else {
      const int hx = 2;
      const int hy = static_cast<int>(rng.uniform_int(3, 5));
      place_group(kPerson, g.count, hx, hy, road_top - hy + 2, H - 1 - hy, 4);
    }
  }
  return spec;
}

/// Scene i is generate_scene(random_scene_spec(derive_seed(seed, i), cfg)),
/// so any element can be regenerated on its own.
inline std::vector<SceneBundle> sample_dataset(int n_scenes, std::uint64_t seed, const GeneratorConfig& cfg = {}) {
  require(n_scenes >= 1, ErrorCode::InvalidSpec, "n_scenes must be >= 1");
  std::vector<SceneBundle> out;
  out.reserve(static_cast<std::size_t>(n_scenes));
  for (int i = 0; i < n_scenes; ++i)
    out.push_back(generate_scene(random_scene_spec(derive_seed(seed, static_cast<std::uint64_t>(i)), cfg)));
  return out;
}

}  // namespace semcom
