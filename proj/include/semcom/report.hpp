#pragma once

// Experiment variants and the per-variant task report (counting MSE, mIoU
// and compression rate), computed from session transcripts only.

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "semcom/session.hpp"

namespace semcom {

/// A named scripted feedback policy, written as
///   Name=              (no feedback)
///   Name=label:car|text:cars and people
struct Variant {
  std::string name;
  std::vector<Feedback> policy;
};

inline Feedback parse_feedback(std::string_view s) {
  if (s.starts_with("label:")) {
    const std::string v(s.substr(6));
    for (int c = 0; c < kNumClasses; ++c)
      if (class_name(c) == v) return ClassLabel{c};
    fail(ErrorCode::BadConfig, "unknown class label '" + v + "'");
  }
  if (s.starts_with("text:")) {
    require(s.size() > 5, ErrorCode::BadConfig, "empty text feedback");
    return TextPrompt{std::string(s.substr(5))};
  }
  fail(ErrorCode::BadConfig, "feedback must start with label: or text:");
}

inline std::string format_feedback(const Feedback& fb) {
  if (const auto* l = std::get_if<ClassLabel>(&fb)) return "label:" + class_name(l->class_id);
  return "text:" + std::get<TextPrompt>(fb).text;
}

inline Variant parse_variant(std::string_view s) {
  const auto eq = s.find('=');
  require(eq != std::string_view::npos && eq > 0, ErrorCode::BadConfig, "variant must be Name=policy");
  Variant v{std::string(s.substr(0, eq)), {}};
  std::string_view rest = s.substr(eq + 1);
  while (!rest.empty()) {
    const auto bar = rest.find('|');
    v.policy.push_back(parse_feedback(rest.substr(0, bar)));
    rest = bar == std::string_view::npos ? std::string_view{} : rest.substr(bar + 1);
  }
  return v;
}

inline std::string format_variant(const Variant& v) {
  std::string s = v.name + "=";
  for (std::size_t i = 0; i < v.policy.size(); ++i) s += (i ? "|" : "") + format_feedback(v.policy[i]);
  return s;
}

inline std::vector<Variant> default_variants() {
  return {parse_variant("No-Attn="),
          parse_variant("All-Attn=text:everything"),
          parse_variant("Car-CAM-Attn=label:car"),
          parse_variant("Person-CAM-Attn=label:person"),
          parse_variant("Car-Person-CAM-Attn=text:cars and people"),
          parse_variant("Person-Prompt-Attn=text:I am interested in people on the street.")};
}

/// Task metrics of one transcript, measured on its final reconstruction.
struct SceneMetrics {
  double cr = 0.0;
  bool has_recon = false;
  ClassCounts predicted{}, truth{};
  std::array<MatchSums, kNumClasses> match{};
};

inline SceneMetrics scene_metrics(const SessionTranscript& tr, const DetectorConfig& det = {}) {
  SceneMetrics m;
  m.cr = compression_rate(tr.ledger);
  m.truth = tr.class_counts;
  if (tr.recons.empty()) return m;
  const auto& last = *std::max_element(tr.recons.begin(), tr.recons.end(),
                                       [](const auto& a, const auto& b) { return a.round < b.round; });
  const auto dets = detect_objects(to_image(last.image), default_palette(), det);
  m.has_recon = true;
  m.predicted = count_detections(dets);
  for (int c : det.classes)
    m.match[static_cast<std::size_t>(c)] = match_boxes(boxes_of_class(dets, c), boxes_of_class(tr.objects, c));
  return m;
}

struct ReportRow {
  std::string variant;
  int scenes = 0;
  double cr = 0.0;  // mean per-session compression rate
  std::array<double, kNumClasses> count_mse{};
  std::array<double, kNumClasses> miou{};  // mean over ground-truth instances
  // Undefined metrics are NaN; two undefined values compare equal.
  friend bool operator==(const ReportRow& a, const ReportRow& b) {
    const auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
    for (int k = 0; k < kNumClasses; ++k)
      if (!same(a.count_mse[k], b.count_mse[k]) || !same(a.miou[k], b.miou[k])) return false;
    return a.variant == b.variant && a.scenes == b.scenes && same(a.cr, b.cr);
  }
};

struct TaskReport {
  std::vector<int> classes{kCar, kPerson};
  std::vector<ReportRow> rows;

  const ReportRow& row(std::string_view variant) const {
    for (const auto& r : rows)
      if (r.variant == variant) return r;
    fail(ErrorCode::BadConfig, "no report row for variant '" + std::string(variant) + "'");
  }
  friend bool operator==(const TaskReport&, const TaskReport&) = default;
};

/// Groups transcripts by variant (rows sorted by variant name, scenes by
/// seed) and aggregates the metrics.
inline TaskReport build_report(std::vector<const SessionTranscript*> trs, const DetectorConfig& det = {}) {
  require(!trs.empty(), ErrorCode::EmptyInput, "no transcripts to report");
  std::stable_sort(trs.begin(), trs.end(), [](const auto* a, const auto* b) {
    return std::tie(a->variant, a->scene_seed) < std::tie(b->variant, b->scene_seed);
  });
  TaskReport rep;
  rep.classes = det.classes;
  std::size_t i = 0;
  while (i < trs.size()) {
    ReportRow row;
    row.variant = trs[i]->variant;
    std::vector<ClassCounts> pred, gt;
    std::array<MatchSums, kNumClasses> match{};
    double cr = 0.0;
    bool recon = true;
    for (; i < trs.size() && trs[i]->variant == row.variant; ++i) {
      const auto m = scene_metrics(*trs[i], det);
      cr += m.cr;
      ++row.scenes;
      recon = recon && m.has_recon;
      pred.push_back(m.predicted);
      gt.push_back(m.truth);
      for (std::size_t c = 0; c < match.size(); ++c) {
        match[c].iou_sum += m.match[c].iou_sum;
        match[c].gt_count += m.match[c].gt_count;
      }
    }
    row.cr = cr / row.scenes;
    const auto mse = counting_mse(pred, gt);
    for (std::size_t c = 0; c < mse.size(); ++c) {
      row.count_mse[c] = recon ? mse[c] : std::nan("");
      row.miou[c] = recon ? match[c].value() : std::nan("");
    }
    rep.rows.push_back(row);
  }
  return rep;
}

inline TaskReport build_report(const std::vector<SessionTranscript>& trs, const DetectorConfig& det = {}) {
  std::vector<const SessionTranscript*> p;
  for (const auto& t : trs) p.push_back(&t);
  return build_report(std::move(p), det);
}

inline std::string report_table(const TaskReport& rep) {
  std::ostringstream o;
  o << std::left << std::setw(24) << "variant" << std::right << std::setw(7) << "scenes" << std::setw(9) << "CR";
  for (int c : rep.classes) o << std::setw(12) << (class_name(c) + " MSE") << std::setw(12) << (class_name(c) + " mIoU");
  o << "\n";
  o << std::fixed;
  for (const auto& r : rep.rows) {
    o << std::left << std::setw(24) << r.variant << std::right << std::setw(7) << r.scenes << std::setw(9)
      << std::setprecision(2) << r.cr;
    for (int c : rep.classes)
      o << std::setw(12) << std::setprecision(3) << r.count_mse[static_cast<std::size_t>(c)] << std::setw(12)
        << std::setprecision(4) << r.miou[static_cast<std::size_t>(c)];
    o << "\n";
  }
  return o.str();
}

inline std::string report_csv(const TaskReport& rep) {
  std::ostringstream o;
  o << "variant,scenes,cr";
  for (int c : rep.classes) o << "," << class_name(c) << "_count_mse," << class_name(c) << "_miou";
  o << "\n" << std::setprecision(17);
  for (const auto& r : rep.rows) {
    o << r.variant << "," << r.scenes << "," << r.cr;
    for (int c : rep.classes) o << "," << r.count_mse[static_cast<std::size_t>(c)] << "," << r.miou[static_cast<std::size_t>(c)];
    o << "\n";
  }
  return o.str();
}

struct PairedTest {
  double mean_diff = 0.0;
  double t = 0.0;
  double p_greater = 1.0;  // one-sided p-value for mean(a - b) > 0
};

/// Paired t-test on a - b.
inline PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorCode::DimMismatch, "paired test needs two equal samples of >= 2");
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double se = std::sqrt(ss / (n - 1.0) / n);
  PairedTest r;
  r.mean_diff = mean;
  if (se == 0.0) {
    r.t = mean > 0 ? INFINITY : (mean < 0 ? -INFINITY : 0.0);
    r.p_greater = mean > 0 ? 0.0 : 1.0;
    return r;
  }
  r.t = mean / se;
  boost::math::students_t dist(n - 1.0);
  r.p_greater = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

}  // namespace semcom
