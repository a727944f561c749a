#pragma once

// Multi-label presence classifier whose last stages are global average
// pooling and a fully connected layer, so class activation maps can be read
// off its final convolutional features.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "semcom/learner.hpp"
#include "semcom/scenegen.hpp"

namespace semcom {

inline std::vector<LayerSpec> default_classifier_layers(int num_classes = kNumClasses) {
  return {conv(3, 16, 3), relu(), avgpool2(), conv(16, 32, 3), relu(), avgpool2(),
          conv(32, 32, 3), relu(), global_avg_pool(), dense(32, num_classes)};
}

class ClassifierModel {
 public:
  ClassifierModel() = default;
  explicit ClassifierModel(TinyNet<float> net) : net_(std::move(net)) {
    const auto& ls = net_.layers();
    require(ls.size() >= 3 && ls[ls.size() - 2].kind == LayerKind::GlobalAvgPool &&
                ls.back().kind == LayerKind::Dense,
            ErrorCode::ShapeMismatch, "classifier must end with global average pool then dense");
    const auto it = std::find_if(ls.rbegin(), ls.rend(), [](const LayerSpec& l) { return l.kind == LayerKind::Conv; });
    require(it != ls.rend(), ErrorCode::ShapeMismatch, "classifier has no convolution");
    require(it->out == ls.back().in, ErrorCode::ShapeMismatch, "final conv channels differ from dense inputs");
  }

  static ClassifierModel make_default(int height, int width, std::uint64_t seed, int num_classes = kNumClasses) {
    return ClassifierModel(TinyNet<float>({3, height, width}, default_classifier_layers(num_classes), seed));
  }

  const TinyNet<float>& net() const { return net_; }
  TinyNet<float>& net() { return net_; }
  int num_classes() const { return net_.layers().back().out; }
  int feature_channels() const { return net_.layers().back().in; }

  /// Final convolutional feature maps F (L x H' x W').
  Tensor<float> features(const Image& image) const {
    auto r = forward(net_, image);
    return r.cache.acts[net_.size() - 2];
  }

  /// Fully connected weight row w_c (length L).
  std::vector<double> class_weights(int c) const {
    require(c >= 0 && c < num_classes(), ErrorCode::ClassOutOfRange, "class out of range");
    const auto& w = net_.params().back().weight;
    const int L = feature_channels();
    return {w.begin() + static_cast<std::ptrdiff_t>(c) * L, w.begin() + static_cast<std::ptrdiff_t>(c + 1) * L};
  }

  std::vector<double> scores(const Image& image) const {
    const auto out = forward(net_, image).output;
    std::vector<double> s(out.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = detail::sigmoid<double>(out[i]);
    return s;
  }

 private:
  TinyNet<float> net_;
};

struct ClassifierTrainConfig {
  int epochs = 8;
  int batch_size = 16;
  AdamConfig adam{};
  std::uint64_t seed = 1;
  double val_fraction = 0.2;
};

struct ClassifierTrainReport {
  std::vector<double> epoch_losses;
  std::array<double, kNumClasses> val_ap{};  // NaN where a class has no positives
  double mean_ap = 0.0;
  std::vector<std::array<double, kNumClasses>> val_scores;
};

using PresenceLabels = std::array<float, kNumClasses>;

inline PresenceLabels presence_labels(const SceneBundle& s) {
  PresenceLabels l{};
  for (int c = 0; c < kNumClasses; ++c) l[static_cast<std::size_t>(c)] = s.class_counts[static_cast<std::size_t>(c)] > 0;
  // Background is present whenever any pixel is unlabeled.
  l[kBackground] = std::any_of(s.seg.begin(), s.seg.end(), [](auto v) { return v == kBackground; }) ? 1.0f : 0.0f;
  return l;
}

/// Average precision of scores against binary targets; NaN without positives.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& targets) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  int hits = 0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < idx.size(); ++rank)
    if (targets[idx[rank]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  return hits ? sum / hits : std::nan("");
}

/// Trains with mean binary cross-entropy on presence labels. The last
/// val_fraction of the dataset is held out for average precision.
inline ClassifierModel train_classifier(const std::vector<SceneBundle>& dataset, const std::vector<PresenceLabels>& labels,
                                        const ClassifierTrainConfig& cfg, ClassifierTrainReport* report = nullptr,
                                        const ClassifierModel* init = nullptr) {
  require(!dataset.empty(), ErrorCode::EmptyInput, "empty training set");
  require(labels.size() == dataset.size(), ErrorCode::ShapeMismatch, "labels and dataset differ in length");
  const int H = dataset.front().height(), W = dataset.front().width();
  ClassifierModel model = init ? *init : ClassifierModel::make_default(H, W, derive_seed(cfg.seed, 0));
  const int K = model.num_classes();
  require(K == kNumClasses, ErrorCode::ShapeMismatch, "classifier must score every class");

  const std::size_t n = dataset.size();
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = n - 1;
  const std::size_t n_train = n - n_val;

  auto& net = model.net();
  auto state = make_adam_state(net);
  Rng rng(derive_seed(cfg.seed, 1));
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  ClassifierTrainReport rep;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n_train, start + static_cast<std::size_t>(cfg.batch_size));
      auto grads = net.zero_gradients();
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = dataset[order[b]];
        const auto& y = labels[order[b]];
        auto fr = forward(net, s.image);
        Tensor<float> dout(K, 1, 1);
        for (int c = 0; c < K; ++c) {
          const double z = fr.output[static_cast<std::size_t>(c)];
          const double t = y[static_cast<std::size_t>(c)];
          // Stable BCE with logits.
          epoch_loss += (std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)))) / K;
          dout[static_cast<std::size_t>(c)] = static_cast<float>((detail::sigmoid(z) - t) / K);
        }
        backward_accumulate(net, fr.cache, dout, grads);
      }
      scale_gradients(grads, 1.0f / static_cast<float>(end - start));
      require(all_finite(grads), ErrorCode::Diverged, "non-finite classifier gradient");
      adam_step(net, grads, state, cfg.adam);
    }
    epoch_loss /= static_cast<double>(n_train);
    require(std::isfinite(epoch_loss), ErrorCode::Diverged, "classifier loss is not finite");
    rep.epoch_losses.push_back(epoch_loss);
  }

  std::array<std::vector<double>, kNumClasses> sc;
  std::array<std::vector<int>, kNumClasses> tg;
  for (std::size_t i = n_train; i < n; ++i) {
    const auto s = model.scores(dataset[i].image);
    std::array<double, kNumClasses> row{};
    for (int c = 0; c < K; ++c) {
      sc[static_cast<std::size_t>(c)].push_back(s[static_cast<std::size_t>(c)]);
      tg[static_cast<std::size_t>(c)].push_back(labels[i][static_cast<std::size_t>(c)] > 0.5f);
      row[static_cast<std::size_t>(c)] = s[static_cast<std::size_t>(c)];
    }
    rep.val_scores.push_back(row);
  }
  double ap_sum = 0.0;
  int ap_n = 0;
  for (int c = 0; c < K; ++c) {
    const double ap = n_val ? average_precision(sc[static_cast<std::size_t>(c)], tg[static_cast<std::size_t>(c)])
                            : std::nan("");
    rep.val_ap[static_cast<std::size_t>(c)] = ap;
    if (std::isfinite(ap)) {
      ap_sum += ap;
      ++ap_n;
    }
  }
  rep.mean_ap = ap_n ? ap_sum / ap_n : std::nan("");
  if (report) *report = std::move(rep);
  return model;
}

}  // namespace semcom
