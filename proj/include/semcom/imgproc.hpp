#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "semcom/error.hpp"
#include "semcom/tensor.hpp"

namespace semcom {

inline constexpr double kNormEpsilon = 1e-12;

/// Binary H x W edge map; 1 marks an edge pixel.
using EdgeMap = BinaryMap;

/// One-hot segmentation stored planar as K x H x W.
using OneHotSeg = Tensor<float>;

struct CannyParams {
  double sigma = 1.0;
  double low = 0.1;
  double high = 0.3;
};

/// Normalized 1-D Gaussian with radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Separable Gaussian blur with replicated borders. sigma <= 0 is identity.
inline RealMap gaussian_blur(const RealMap& in, double sigma) {
  if (sigma <= 0.0) return in;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int H = in.height(), W = in.width();
  RealMap tmp(H, W), out(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * in(y, std::clamp(x + i, 0, W - 1));
      tmp(y, x) = s;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp(std::clamp(y + i, 0, H - 1), x);
      out(y, x) = s;
    }
  return out;
}

/// Sobel gradients (unnormalized, so a unit step yields magnitude ~2.5 after
/// a sigma=1 blur) with replicated borders.
inline std::pair<RealMap, RealMap> sobel(const RealMap& in) {
  const int H = in.height(), W = in.width();
  RealMap gx(H, W), gy(H, W);
  auto at = [&](int y, int x) { return in(std::clamp(y, 0, H - 1), std::clamp(x, 0, W - 1)); };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      gx(y, x) = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)) -
                 (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
      gy(y, x) = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)) -
                 (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
    }
  return {std::move(gx), std::move(gy)};
}

inline RealMap gradient_magnitude(const RealMap& gx, const RealMap& gy) {
  RealMap m(gx.height(), gx.width());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::hypot(gx[i], gy[i]);
  return m;
}

/// Classic Canny: blur, Sobel, non-maximum suppression over four quantized
/// directions, then double-threshold hysteresis with 8-connectivity.
inline EdgeMap canny_edges(const RealMap& gray, const CannyParams& p = {}) {
  require(p.sigma > 0.0, ErrorCode::BadRange, "canny sigma must be positive");
  require(p.low > 0.0 && p.low < p.high, ErrorCode::ThresholdOrder, "canny thresholds need 0 < low < high");
  const int H = gray.height(), W = gray.width();
  const RealMap blurred = gaussian_blur(gray, p.sigma);
  const auto [gx, gy] = sobel(blurred);
  const RealMap mag = gradient_magnitude(gx, gy);
  auto mag_at = [&](int y, int x) { return mag.in_bounds(y, x) ? mag(y, x) : 0.0; };

  // tan(22.5 deg) and tan(67.5 deg) bound the four direction sectors.
  constexpr double kTan22 = 0.41421356237309503;
  constexpr double kTan67 = 2.414213562373095;
  RealMap thin(H, W, 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double m = mag(y, x);
      if (m < p.low) continue;
      const double ax = std::abs(gx(y, x)), ay = std::abs(gy(y, x));
      int dx, dy;
      if (ay <= kTan22 * ax) {
        dx = 1, dy = 0;
      } else if (ay >= kTan67 * ax) {
        dx = 0, dy = 1;
      } else {
        const bool same_sign = (gx(y, x) > 0) == (gy(y, x) > 0);
        dx = 1, dy = same_sign ? 1 : -1;
      }
      // Ties keep the pixel on the upper/left side so plateaus give 1-pixel lines.
      if (m > mag_at(y - dy, x - dx) && m >= mag_at(y + dy, x + dx)) thin(y, x) = m;
    }

  EdgeMap edges(H, W, 0);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (thin(y, x) >= p.high && !edges(y, x)) {
        edges(y, x) = 1;
        stack.emplace_back(y, x);
        while (!stack.empty()) {
          auto [cy, cx] = stack.back();
          stack.pop_back();
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int ny = cy + dy, nx = cx + dx;
              if (!edges.in_bounds(ny, nx) || edges(ny, nx) || thin(ny, nx) < p.low) continue;
              edges(ny, nx) = 1;
              stack.emplace_back(ny, nx);
            }
        }
      }
  return edges;
}

/// Instance map rendered as grayscale id / max_id (all zeros if no instances).
inline RealMap instance_gray(const InstanceMap& inst) {
  RealMap g(inst.height(), inst.width(), 0.0);
  const auto max_id = inst.empty() ? 0 : *std::max_element(inst.begin(), inst.end());
  if (max_id == 0) return g;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(inst[i]) / max_id;
  return g;
}

/// Thresholds for instance boundaries: with up to ~20 instances adjacent ids
/// differ by 1/20 in gray level, which the general defaults would miss.
inline constexpr CannyParams kInstanceCanny{1.0, 0.05, 0.1};

inline EdgeMap instance_edges(const InstanceMap& inst, const CannyParams& p = kInstanceCanny) {
  return canny_edges(instance_gray(inst), p);
}

inline OneHotSeg one_hot(const ClassMap& seg, int num_classes) {
  require(num_classes >= 1, ErrorCode::ClassOutOfRange, "need at least one class");
  OneHotSeg out(num_classes, seg.height(), seg.width(), 0.0f);
  for (int y = 0; y < seg.height(); ++y)
    for (int x = 0; x < seg.width(); ++x) {
      const int c = seg(y, x);
      require(c < num_classes, ErrorCode::ClassOutOfRange,
              "class " + std::to_string(c) + " >= K=" + std::to_string(num_classes));
      out(c, y, x) = 1.0f;
    }
  return out;
}

/// Inverse of one_hot; first maximal channel wins.
inline ClassMap argmax_classes(const OneHotSeg& t) {
  ClassMap out(t.height(), t.width(), 0);
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x) {
      int best = 0;
      for (int c = 1; c < t.channels(); ++c)
        if (t(c, y, x) > t(best, y, x)) best = c;
      out(y, x) = static_cast<std::uint8_t>(best);
    }
  return out;
}

/// Bilinear resampling, align-corners=false (half-pixel centers), with
/// source coordinates clamped to the valid range.
inline RealMap upsample_bilinear(const RealMap& in, int out_h, int out_w) {
  require(in.height() >= 1 && in.width() >= 1, ErrorCode::DimMismatch, "empty input map");
  require(out_h >= 1 && out_w >= 1, ErrorCode::DimMismatch, "empty output size");
  const int h = in.height(), w = in.width();
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  RealMap out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      const double top = in(y0, x0) + tx * (in(y0, x1) - in(y0, x0));
      const double bot = in(y1, x0) + tx * (in(y1, x1) - in(y1, x0));
      out(y, x) = top + ty * (bot - top);
    }
  }
  return out;
}

/// (x - min) / (max - min); degenerate range maps to all zeros.
inline RealMap minmax_normalize(const RealMap& in) {
  RealMap out(in.height(), in.width(), 0.0);
  if (in.empty()) return out;
  const auto [lo, hi] = std::minmax_element(in.begin(), in.end());
  const double range = *hi - *lo;
  if (range < kNormEpsilon) return out;
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = (in[i] - *lo) / range;
  return out;
}

/// Mean of the three color planes.
inline RealMap to_gray(const Image& img) {
  RealMap g(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double s = 0.0;
      for (int c = 0; c < img.channels(); ++c) s += img(c, y, x);
      g(y, x) = s / img.channels();
    }
  return g;
}

}  // namespace semcom
