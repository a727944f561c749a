#pragma once

// Downstream task metrics: a color-proximity toy detector, counting MSE,
// box IoU with greedy matching, and reconstruction error.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "semcom/scenegen.hpp"

namespace semcom {

struct Detection {
  int class_id = 0;
  BBox bbox;
  double confidence = 0.0;
};

struct DetectorConfig {
  std::vector<int> classes{kCar, kPerson};
  double match_radius = 0.5;  // color distance at which similarity reaches 0
  int min_area = 6;
  double conf_threshold = 0.5;
};

/// Labels each pixel with its nearest palette class, keeps pixels of the
/// requested classes, groups them into 8-connected components and reports
/// components of at least min_area pixels whose mean similarity
/// max(0, 1 - d / match_radius) exceeds conf_threshold.
inline std::vector<Detection> detect_objects(const Image& image, const Palette& palette = default_palette(),
                                             const DetectorConfig& cfg = {}) {
  require(image.channels() == 3, ErrorCode::DimMismatch, "detector needs an RGB image");
  const int H = image.height(), W = image.width();
  Grid<std::int8_t> label(H, W, -1);
  RealMap sim(H, W, 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < kNumClasses; ++c) {
        const auto& p = palette[static_cast<std::size_t>(c)];
        const double dr = image(0, y, x) - p.r, dg = image(1, y, x) - p.g, db = image(2, y, x) - p.b;
        const double d = std::sqrt(dr * dr + dg * dg + db * db);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      const double s = std::max(0.0, 1.0 - bd / cfg.match_radius);
      if (s > 0.0 && std::find(cfg.classes.begin(), cfg.classes.end(), best) != cfg.classes.end()) {
        label(y, x) = static_cast<std::int8_t>(best);
        sim(y, x) = s;
      }
    }

  std::vector<Detection> out;
  Grid<std::uint8_t> seen(H, W, 0);
  std::vector<std::pair<int, int>> stack;
  for (int y0 = 0; y0 < H; ++y0)
    for (int x0 = 0; x0 < W; ++x0) {
      if (label(y0, x0) < 0 || seen(y0, x0)) continue;
      const int c = label(y0, x0);
      BBox box{x0, y0, x0 + 1, y0 + 1};
      double s_sum = 0.0;
      int area = 0;
      stack.assign(1, {y0, x0});
      seen(y0, x0) = 1;
      while (!stack.empty()) {
        const auto [y, x] = stack.back();
        stack.pop_back();
        ++area;
        s_sum += sim(y, x);
        box.x0 = std::min(box.x0, x);
        box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x + 1);
        box.y1 = std::max(box.y1, y + 1);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (!label.in_bounds(ny, nx) || seen(ny, nx) || label(ny, nx) != c) continue;
            seen(ny, nx) = 1;
            stack.emplace_back(ny, nx);
          }
      }
      if (area < cfg.min_area) continue;
      const double conf = s_sum / area;
      if (conf > cfg.conf_threshold) out.push_back({c, box, conf});
    }
  return out;
}

using ClassCounts = std::array<int, kNumClasses>;

inline ClassCounts count_detections(const std::vector<Detection>& dets) {
  ClassCounts n{};
  for (const auto& d : dets) ++n[static_cast<std::size_t>(d.class_id)];
  return n;
}

/// Per-class mean over images of (predicted - true count)^2.
inline std::array<double, kNumClasses> counting_mse(const std::vector<ClassCounts>& pred,
                                                    const std::vector<ClassCounts>& gt) {
  require(!pred.empty(), ErrorCode::EmptyInput, "counting MSE needs at least one image");
  require(pred.size() == gt.size(), ErrorCode::DimMismatch, "prediction and ground-truth image counts differ");
  std::array<double, kNumClasses> mse{};
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t c = 0; c < mse.size(); ++c) {
      const double e = pred[i][c] - gt[i][c];
      mse[c] += e * e;
    }
  for (auto& m : mse) m /= static_cast<double>(pred.size());
  return mse;
}

/// IoU of half-open boxes.
inline double iou(const BBox& a, const BBox& b) {
  const int iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const int ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  const double inter = iw > 0 && ih > 0 ? static_cast<double>(iw) * ih : 0.0;
  const double uni = static_cast<double>(a.area()) + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct MatchSums {
  double iou_sum = 0.0;
  int gt_count = 0;
  double value() const { return gt_count ? iou_sum / gt_count : std::nan(""); }
};

/// Greedy one-to-one matching by descending IoU; returns the summed IoU of
/// matched pairs and the number of ground-truth boxes (unmatched count as 0).
inline MatchSums match_boxes(const std::vector<BBox>& preds, const std::vector<BBox>& gts) {
  struct Pair {
    double v;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < preds.size(); ++p)
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(preds[p], gts[g]);
      if (v > 0.0) pairs.push_back({v, p, g});
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.v > b.v; });
  std::vector<char> pu(preds.size(), 0), gu(gts.size(), 0);
  MatchSums m{0.0, static_cast<int>(gts.size())};
  for (const auto& pr : pairs) {
    if (pu[pr.p] || gu[pr.g]) continue;
    pu[pr.p] = gu[pr.g] = 1;
    m.iou_sum += pr.v;
  }
  return m;
}

/// Mean IoU over ground-truth boxes; NaN when there are none.
inline double miou(const std::vector<BBox>& preds, const std::vector<BBox>& gts) {
  return match_boxes(preds, gts).value();
}

inline constexpr double kInfinitePsnr = 999.0;

struct ReconError {
  double mse = 0.0;
  double psnr = kInfinitePsnr;
};

/// MSE over all samples and PSNR with peak 1.0; identical inputs give the
/// kInfinitePsnr sentinel.
inline ReconError recon_error(const Image& x, const Image& xhat) {
  require(x.same_shape(xhat), ErrorCode::DimMismatch, "reconstruction dims differ");
  require(x.size() > 0, ErrorCode::DimMismatch, "empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - xhat[i];
    s += d * d;
  }
  ReconError r;
  r.mse = s / static_cast<double>(x.size());
  r.psnr = r.mse > 0.0 ? 10.0 * std::log10(1.0 / r.mse) : kInfinitePsnr;
  return r;
}

inline std::vector<BBox> boxes_of_class(const std::vector<Detection>& dets, int c) {
  std::vector<BBox> b;
  for (const auto& d : dets)
    if (d.class_id == c) b.push_back(d.bbox);
  return b;
}

inline std::vector<BBox> boxes_of_class(const std::vector<ObjectRecord>& objs, int c) {
  std::vector<BBox> b;
  for (const auto& o : objs)
    if (o.class_id == c) b.push_back(o.bbox);
  return b;
}

}  // namespace semcom
