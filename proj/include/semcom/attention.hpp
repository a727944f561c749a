#pragma once

// Feedback to attention: class activation maps for label feedback, a lexicon
// resolver standing in for a text/image similarity model, an instance-mask
// oracle, and thresholding into the binary transmission mask.

#include <algorithm>
#include <cctype>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "semcom/classifier.hpp"
#include "semcom/imgproc.hpp"

namespace semcom {

using AttentionMap = RealMap;
using AttentionMask = BinaryMap;

inline constexpr double kDefaultTau = 0.35;

struct ClassLabel {
  int class_id = 0;
  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

struct TextPrompt {
  std::string text;
  friend bool operator==(const TextPrompt&, const TextPrompt&) = default;
};

using Feedback = std::variant<ClassLabel, TextPrompt>;

inline void validate(const Feedback& fb) {
  if (const auto* l = std::get_if<ClassLabel>(&fb))
    require(l->class_id >= 0 && l->class_id < kNumClasses, ErrorCode::ClassOutOfRange, "feedback class out of range");
  else
    require(!std::get<TextPrompt>(fb).text.empty(), ErrorCode::FeedbackUnresolved, "empty text prompt");
}

inline std::string describe(const Feedback& fb) {
  if (const auto* l = std::get_if<ClassLabel>(&fb)) return "label:" + class_name(l->class_id);
  return "text:" + std::get<TextPrompt>(fb).text;
}

/// Raw weighted channel sum sum_k w_k F_k at feature resolution.
inline RealMap cam_raw(const Tensor<float>& features, const std::vector<double>& weights) {
  require(static_cast<int>(weights.size()) == features.channels(), ErrorCode::ShapeMismatch,
          "CAM weights length differs from feature channels");
  RealMap out(features.height(), features.width(), 0.0);
  const std::size_t P = features.plane();
  for (int k = 0; k < features.channels(); ++k) {
    const float* f = features.ptr() + static_cast<std::size_t>(k) * P;
    const double w = weights[static_cast<std::size_t>(k)];
    for (std::size_t i = 0; i < P; ++i) out[i] += w * f[i];
  }
  return out;
}

/// Class activation map: weighted sum, bilinear upsample, min-max normalize.
inline AttentionMap cam(const Tensor<float>& features, const std::vector<double>& weights, int out_h, int out_w) {
  return minmax_normalize(upsample_bilinear(cam_raw(features, weights), out_h, out_w));
}

inline AttentionMap cam_for_class(const ClassifierModel& model, const Image& image, int class_id) {
  return cam(model.features(image), model.class_weights(class_id), image.height(), image.width());
}

/// Lexicon term -> class id. kAllClasses expands to every class.
inline constexpr int kAllClasses = -1;
using Lexicon = std::vector<std::pair<std::string, int>>;

inline Lexicon default_lexicon() {
  return {{"background", kBackground}, {"sky", kBackground},    {"road", kRoad},
          {"roads", kRoad},            {"building", kBuilding}, {"buildings", kBuilding},
          {"house", kBuilding},        {"houses", kBuilding},   {"car", kCar},
          {"cars", kCar},              {"vehicle", kCar},       {"vehicles", kCar},
          {"automobile", kCar},        {"person", kPerson},     {"persons", kPerson},
          {"people", kPerson},         {"pedestrian", kPerson}, {"pedestrians", kPerson},
          {"human", kPerson},          {"humans", kPerson},     {"tree", kTree},
          {"trees", kTree},            {"everything", kAllClasses}, {"whole scene", kAllClasses}};
}

namespace detail {

inline std::string fold(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::vector<std::string> tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)) || (static_cast<unsigned char>(c) & 0x80)) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Singular candidates for a token: "cars" -> "car", "buses" -> "bus".
inline std::vector<std::string> stems(const std::string& t) {
  std::vector<std::string> v{t};
  if (t.size() > 3 && t.ends_with("es")) v.push_back(t.substr(0, t.size() - 2));
  if (t.size() > 2 && t.ends_with('s')) v.push_back(t.substr(0, t.size() - 1));
  return v;
}

}  // namespace detail

/// Parses "term, class_id" lines ('#' comments, blank lines allowed).
/// A class id of "all" maps to kAllClasses.
inline Lexicon parse_lexicon(std::string_view text) {
  Lexicon lex;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const auto comma = line.rfind(',');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    require(comma != std::string::npos, ErrorCode::BadConfig, "lexicon line " + std::to_string(lineno) + ": missing ','");
    const std::string term = detail::fold(trim(line.substr(0, comma)));
    const std::string id = trim(line.substr(comma + 1));
    require(!term.empty(), ErrorCode::BadConfig, "lexicon line " + std::to_string(lineno) + ": empty term");
    int cls = kAllClasses;
    if (id != "all") {
      std::size_t used = 0;
      try {
        cls = std::stoi(id, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used == id.size() && !id.empty(), ErrorCode::BadConfig,
              "lexicon line " + std::to_string(lineno) + ": bad class id '" + id + "'");
      require(cls >= 0 && cls < kNumClasses, ErrorCode::ClassOutOfRange,
              "lexicon line " + std::to_string(lineno) + ": class out of range");
    }
    lex.emplace_back(term, cls);
  }
  return lex;
}

/// Case-folded unigram and bigram lookup with simple plural stripping.
/// Returns the sorted distinct class set.
inline std::vector<int> resolve_prompt(std::string_view prompt, const Lexicon& lexicon) {
  require(!lexicon.empty(), ErrorCode::BadConfig, "empty lexicon");
  const auto toks = detail::tokens(prompt);
  std::vector<std::string> grams;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    for (const auto& s : detail::stems(toks[i])) grams.push_back(s);
    if (i + 1 < toks.size())
      for (const auto& s : detail::stems(toks[i + 1])) grams.push_back(toks[i] + " " + s);
  }
  std::vector<int> out;
  for (const auto& [term, cls] : lexicon) {
    if (std::find(grams.begin(), grams.end(), term) == grams.end()) continue;
    if (cls == kAllClasses) {
      for (int c = 0; c < kNumClasses; ++c) out.push_back(c);
    } else {
      out.push_back(cls);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  require(!out.empty(), ErrorCode::FeedbackUnresolved,
          "no lexicon term found in prompt \"" + std::string(prompt) + "\"");
  return out;
}

/// Blurred, normalized indicator of the pixels of target-class instances.
inline AttentionMap oracle_attention(const InstanceMap& inst, const ClassMap& seg, const std::vector<int>& targets,
                                     double blur_sigma) {
  require(inst.same_dims(seg), ErrorCode::DimMismatch, "instance and segmentation dims differ");
  for (int c : targets) require(c >= 0 && c < kNumClasses, ErrorCode::ClassOutOfRange, "target class out of range");
  RealMap ind(inst.height(), inst.width(), 0.0);
  for (std::size_t i = 0; i < ind.size(); ++i)
    if (inst[i] != 0 && std::find(targets.begin(), targets.end(), seg[i]) != targets.end()) ind[i] = 1.0;
  return minmax_normalize(gaussian_blur(ind, blur_sigma));
}

/// Pixelwise maximum.
inline AttentionMap combine_attention(const std::vector<AttentionMap>& maps) {
  require(!maps.empty(), ErrorCode::EmptyInput, "no attention maps to combine");
  AttentionMap out = maps.front();
  for (std::size_t m = 1; m < maps.size(); ++m) {
    require(maps[m].same_dims(out), ErrorCode::DimMismatch, "attention map dims differ");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], maps[m][i]);
  }
  return out;
}

/// M = I(A > tau).
inline AttentionMask binarize_mask(const AttentionMap& a, double tau) {
  require(tau >= 0.0 && tau < 1.0, ErrorCode::BadThreshold, "tau must lie in [0,1)");
  AttentionMask m(a.height(), a.width(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = a[i] > tau ? 1 : 0;
  return m;
}

enum class AttentionSource { Cam, Oracle };

inline std::string_view source_name(AttentionSource s) { return s == AttentionSource::Cam ? "cam" : "oracle"; }

inline AttentionSource parse_source(std::string_view s) {
  if (s == "cam") return AttentionSource::Cam;
  if (s == "oracle") return AttentionSource::Oracle;
  fail(ErrorCode::BadConfig, "unknown attention source '" + std::string(s) + "'");
}

struct AttentionConfig {
  AttentionSource source = AttentionSource::Cam;
  double tau = kDefaultTau;
  double oracle_sigma = 1.5;
};

/// Turns feedback into an attention map for one scene. A feedback whose
/// class set covers every class yields uniform full attention.
class AttentionResolver {
 public:
  AttentionResolver(Lexicon lexicon, AttentionConfig cfg, std::shared_ptr<const ClassifierModel> classifier)
      : lexicon_(std::move(lexicon)), cfg_(cfg), classifier_(std::move(classifier)) {
    require(cfg_.source != AttentionSource::Cam || classifier_ != nullptr, ErrorCode::ModelMissing,
            "CAM attention needs a classifier");
  }

  const AttentionConfig& config() const { return cfg_; }
  const Lexicon& lexicon() const { return lexicon_; }

  std::vector<int> classes(const Feedback& fb) const {
    validate(fb);
    if (const auto* l = std::get_if<ClassLabel>(&fb)) return {l->class_id};
    return resolve_prompt(std::get<TextPrompt>(fb).text, lexicon_);
  }

  AttentionMap attend(const Feedback& fb, const SceneBundle& scene) const {
    const auto cls = classes(fb);
    if (static_cast<int>(cls.size()) == kNumClasses) return AttentionMap(scene.height(), scene.width(), 1.0);
    if (cfg_.source == AttentionSource::Oracle) return oracle_attention(scene.instance_map, scene.seg, cls, cfg_.oracle_sigma);
    const auto feats = classifier_->features(scene.image);
    std::vector<AttentionMap> maps;
    for (int c : cls)
      maps.push_back(cam(feats, classifier_->class_weights(c), scene.height(), scene.width()));
    return combine_attention(maps);
  }

  AttentionMask mask(const Feedback& fb, const SceneBundle& scene) const {
    return binarize_mask(attend(fb, scene), cfg_.tau);
  }

 private:
  Lexicon lexicon_;
  AttentionConfig cfg_;
  std::shared_ptr<const ClassifierModel> classifier_;
};

}  // namespace semcom
