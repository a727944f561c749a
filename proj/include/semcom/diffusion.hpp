#pragma once

// Conditional DDPM: variance schedule, forward noising, ancestral reverse
// sampling, a learned conditional noise predictor and a closed-form
// Gaussian-mixture noise predictor used to verify the chain without learning.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <vector>

#include "semcom/imgproc.hpp"
#include "semcom/learner.hpp"
#include "semcom/rng.hpp"
#include "semcom/scenegen.hpp"
#include "semcom/tensor.hpp"

namespace semcom {

/// beta_t and alpha_t = prod_{s<=t} (1 - beta_s), indexed 1..T.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  static NoiseSchedule from_betas(std::vector<double> betas) {
    require(!betas.empty(), ErrorCode::BadRange, "schedule needs at least one step");
    NoiseSchedule s;
    double prod = 1.0;
    for (double b : betas) {
      require(b > 0.0 && b < 1.0, ErrorCode::BadRange, "beta must lie in (0,1)");
      prod *= 1.0 - b;
      s.alpha_cum_.push_back(prod);
    }
    s.beta_ = std::move(betas);
    return s;
  }

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return alpha_cum_[index(t)]; }
  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alphas() const { return alpha_cum_; }

 private:
  std::size_t index(int t) const {
    require(t >= 1 && t <= steps(), ErrorCode::StepOutOfRange,
            "step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
    return static_cast<std::size_t>(t - 1);
  }
  std::vector<double> beta_;
  std::vector<double> alpha_cum_;
};

/// Linear schedule beta_t = beta_start + (t-1)(beta_end - beta_start)/(T-1).
inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  require(T >= 1, ErrorCode::BadRange, "T must be >= 1");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, ErrorCode::BadRange,
          "need 0 < beta_start <= beta_end < 1");
  std::vector<double> b(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t)
    b[static_cast<std::size_t>(t - 1)] =
        T == 1 ? beta_start : beta_start + (t - 1) * (beta_end - beta_start) / (T - 1);
  return NoiseSchedule::from_betas(std::move(b));
}

struct ScheduleConfig {
  int steps = 200;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  NoiseSchedule make() const { return make_schedule(steps, beta_start, beta_end); }
};

/// q(x_t | x_0): sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps.
template <typename T>
Tensor<T> forward_sample(const Tensor<T>& x0, int t, const NoiseSchedule& s, Rng& rng) {
  const double a = s.alpha(t);
  const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
  Tensor<T> out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(sa * x0[i] + sn * rng.normal());
  return out;
}

/// q(x_t | x_{t-1}): sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps.
template <typename T>
Tensor<T> forward_step(const Tensor<T>& x_prev, int t, const NoiseSchedule& s, Rng& rng) {
  const double b = s.beta(t);
  const double keep = std::sqrt(1.0 - b), sd = std::sqrt(b);
  Tensor<T> out = x_prev;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(keep * x_prev[i] + sd * rng.normal());
  return out;
}

/// Conditioning inputs: one-hot segmentation (K x H x W) and a binary edge
/// map, all zero when no detail has been received yet.
struct Condition {
  OneHotSeg seg;
  EdgeMap edge;
};

inline Condition make_condition(const ClassMap& seg, const EdgeMap& edge, int num_classes) {
  require(seg.same_dims(edge), ErrorCode::DimMismatch, "segmentation and edge dims differ");
  return {one_hot(seg, num_classes), edge};
}

template <typename T>
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  /// Predicted noise eps_hat(x_t, t, cond), same shape as x_t.
  virtual Tensor<T> predict_noise(const Tensor<T>& x_t, int t, const Condition& cond) const = 0;
};

/// One ancestral step given a noise estimate:
/// mu = (x_t - beta_t / sqrt(1 - alpha_t) * eps_hat) / sqrt(1 - beta_t),
/// x_{t-1} = mu + sqrt(beta_t) z, with z = 0 at t = 1.
template <typename T>
Tensor<T> reverse_step_from_noise(const Tensor<T>& x_t, int t, const Tensor<T>& eps_hat, const NoiseSchedule& s,
                                  Rng& rng) {
  require(eps_hat.same_shape(x_t), ErrorCode::ShapeMismatch, "noise estimate shape differs from x_t");
  const double b = s.beta(t), a = s.alpha(t);
  const double coef = b / std::sqrt(1.0 - a);
  const double inv = 1.0 / std::sqrt(1.0 - b);
  const double sigma = std::sqrt(b);
  Tensor<T> out = x_t;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mu = inv * (x_t[i] - coef * eps_hat[i]);
    out[i] = static_cast<T>(t > 1 ? mu + sigma * rng.normal() : mu);
  }
  return out;
}

template <typename T>
Tensor<T> reverse_step(const Tensor<T>& x_t, int t, const Condition& cond, const Denoiser<T>& den,
                       const NoiseSchedule& s, Rng& rng) {
  s.beta(t);  // range check before running the model
  return reverse_step_from_noise(x_t, t, den.predict_noise(x_t, t, cond), s, rng);
}

/// Full reverse chain from x_T ~ N(0, I); returns x_0 in model units.
template <typename T>
Tensor<T> sample_raw(Shape shape, const Condition& cond, const NoiseSchedule& s, const Denoiser<T>& den, Rng& rng) {
  Tensor<T> x(shape.c, shape.h, shape.w);
  for (auto& v : x.data()) v = static_cast<T>(rng.normal());
  for (int t = s.steps(); t >= 1; --t) x = reverse_step(x, t, cond, den, s, rng);
  return x;
}

/// Reverse chain, clamped to [-1, 1] and mapped to [0, 1].
template <typename T>
Tensor<T> sample(Shape shape, const Condition& cond, const NoiseSchedule& s, const Denoiser<T>& den, Rng& rng) {
  Tensor<T> x = sample_raw(shape, cond, s, den, rng);
  for (auto& v : x.data()) v = static_cast<T>((std::clamp<double>(v, -1.0, 1.0) + 1.0) / 2.0);
  return x;
}

/// Exact noise predictor for data x0 ~ sum_i pi_i N(m_i, s^2 I). Since
/// x_t | i ~ N(sqrt(a) m_i, (a s^2 + 1 - a) I), the posterior mean E[x0|x_t]
/// is closed-form and eps_hat = (x_t - sqrt(a) E[x0|x_t]) / sqrt(1 - a).
template <typename T>
class AnalyticGMDenoiser final : public Denoiser<T> {
 public:
  struct Component {
    double weight;
    std::vector<double> mean;
  };

  AnalyticGMDenoiser(std::vector<Component> comps, double stddev, NoiseSchedule sched)
      : comps_(std::move(comps)), s2_(stddev * stddev), sched_(std::move(sched)) {
    require(!comps_.empty(), ErrorCode::BadRange, "mixture needs a component");
    const double wsum = std::accumulate(comps_.begin(), comps_.end(), 0.0,
                                        [](double acc, const Component& c) { return acc + c.weight; });
    require(std::abs(wsum - 1.0) < 1e-9, ErrorCode::BadRange, "mixture weights must sum to 1");
    for (const auto& c : comps_)
      require(c.mean.size() == comps_.front().mean.size(), ErrorCode::ShapeMismatch, "component dims differ");
  }

  std::vector<double> posterior_mean(const Tensor<T>& x_t, int t) const {
    const double a = sched_.alpha(t), sa = std::sqrt(a);
    const double v = a * s2_ + 1.0 - a;
    const std::size_t d = x_t.size();
    require(d == comps_.front().mean.size(), ErrorCode::ShapeMismatch, "x_t dims differ from mixture dims");
    std::vector<double> logr(comps_.size());
    for (std::size_t i = 0; i < comps_.size(); ++i) {
      double q = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double r = x_t[j] - sa * comps_[i].mean[j];
        q += r * r;
      }
      logr[i] = std::log(comps_[i].weight) - 0.5 * q / v;
    }
    const double mx = *std::max_element(logr.begin(), logr.end());
    double z = 0.0;
    for (auto& l : logr) z += (l = std::exp(l - mx));
    std::vector<double> m(d, 0.0);
    const double gain = sa * s2_ / v;
    for (std::size_t i = 0; i < comps_.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        m[j] += (logr[i] / z) * (comps_[i].mean[j] + gain * (x_t[j] - sa * comps_[i].mean[j]));
    return m;
  }

  Tensor<T> predict_noise(const Tensor<T>& x_t, int t, const Condition&) const override {
    const double a = sched_.alpha(t);
    const auto m = posterior_mean(x_t, t);
    Tensor<T> eps = x_t;
    for (std::size_t j = 0; j < eps.size(); ++j)
      eps[j] = static_cast<T>((x_t[j] - std::sqrt(a) * m[j]) / std::sqrt(1.0 - a));
    return eps;
  }

 private:
  std::vector<Component> comps_;
  double s2_;
  NoiseSchedule sched_;
};

struct DenoiserArch {
  int channels = 32;
  int conv_layers = 4;
  double sigma_data = 0.5;
  int num_classes = kNumClasses;
};

/// Conditional noise predictor backed by a TinyNet over
/// concat(c_in * x_t / sqrt(a), seg one-hot, edge, log-noise plane).
///
/// The network output F is mixed with a skip path so that its regression
/// target stays at unit scale for every step:
///   sigma^2 = (1 - a) / a,  x~ = x_t / sqrt(a),
///   eps_hat = x~ * sigma / (sigma^2 + sd^2) - F * sd / sqrt(sigma^2 + sd^2),
/// which is the noise estimate implied by the denoised guess
/// D = c_skip x~ + c_out F with c_skip = sd^2/(sigma^2+sd^2) and
/// c_out = sigma sd / sqrt(sigma^2+sd^2).
class LearnedDenoiser final : public Denoiser<float> {
 public:
  LearnedDenoiser(int height, int width, NoiseSchedule sched, DenoiserArch arch, std::uint64_t seed)
      : sched_(std::move(sched)), arch_(arch), net_(make_net(height, width, arch, seed)) {}

  static std::vector<LayerSpec> layers(const DenoiserArch& arch) {
    require(arch.conv_layers >= 2 && arch.channels >= 1, ErrorCode::BadRange, "denoiser needs >= 2 convolutions");
    std::vector<LayerSpec> ls;
    int in = input_channels(arch);
    for (int i = 0; i + 1 < arch.conv_layers; ++i) {
      ls.push_back(conv(in, arch.channels, 3));
      ls.push_back(silu());
      in = arch.channels;
    }
    ls.push_back(conv(in, 3, 3));
    return ls;
  }

  static int input_channels(const DenoiserArch& arch) { return 3 + arch.num_classes + 2; }

  const TinyNet<float>& net() const { return net_; }
  TinyNet<float>& net() { return net_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const DenoiserArch& arch() const { return arch_; }

  struct Coefficients {
    double sqrt_alpha, sigma, c_in, x_gain, f_gain, c_noise;
  };

  Coefficients coefficients(int t) const {
    const double a = sched_.alpha(t);
    const double sigma = std::sqrt((1.0 - a) / a);
    const double sd = arch_.sigma_data;
    const double r = sigma * sigma + sd * sd;
    return {std::sqrt(a), sigma, 1.0 / std::sqrt(r), sigma / r, sd / std::sqrt(r), std::log(sigma) / 4.0};
  }

  Tensor<float> build_input(const Tensor<float>& x_t, int t, const Condition& cond) const {
    const Shape& in = net_.input_shape();
    require(x_t.channels() == 3 && x_t.height() == in.h && x_t.width() == in.w, ErrorCode::ShapeMismatch,
            "x_t shape " + x_t.shape_str() + " does not match denoiser");
    require(cond.seg.channels() == arch_.num_classes && cond.seg.height() == in.h && cond.seg.width() == in.w,
            ErrorCode::ShapeMismatch, "segmentation condition shape mismatch");
    require(cond.edge.same_dims(in.h, in.w), ErrorCode::ShapeMismatch, "edge condition shape mismatch");
    const auto k = coefficients(t);
    Tensor<float> input(in.c, in.h, in.w);
    const std::size_t P = x_t.plane();
    const float scale = static_cast<float>(k.c_in / k.sqrt_alpha);
    for (std::size_t i = 0; i < 3 * P; ++i) input[i] = x_t[i] * scale;
    std::copy(cond.seg.data().begin(), cond.seg.data().end(), input.data().begin() + static_cast<std::ptrdiff_t>(3 * P));
    float* edge = input.ptr() + (3 + arch_.num_classes) * P;
    for (std::size_t i = 0; i < P; ++i) edge[i] = cond.edge[i] ? 1.0f : 0.0f;
    std::fill_n(edge + P, P, static_cast<float>(k.c_noise));
    return input;
  }

  /// eps_hat given the raw network output F.
  Tensor<float> combine(const Tensor<float>& x_t, const Tensor<float>& F, int t) const {
    const auto k = coefficients(t);
    Tensor<float> eps(x_t.channels(), x_t.height(), x_t.width());
    for (std::size_t i = 0; i < eps.size(); ++i)
      eps[i] = static_cast<float>(x_t[i] / k.sqrt_alpha * k.x_gain - F[i] * k.f_gain);
    return eps;
  }

  Tensor<float> predict_noise(const Tensor<float>& x_t, int t, const Condition& cond) const override {
    thread_local ForwardCache<float> cache;
    forward_into(net_, build_input(x_t, t, cond), cache);
    return combine(x_t, cache.acts.back(), t);
  }

 private:
  static TinyNet<float> make_net(int h, int w, const DenoiserArch& arch, std::uint64_t seed) {
    TinyNet<float> net({input_channels(arch), h, w}, layers(arch), seed);
    // Zero output layer: F = 0 at initialization.
    auto& last = net.params().back();
    std::fill(last.weight.begin(), last.weight.end(), 0.0f);
    return net;
  }

  NoiseSchedule sched_;
  DenoiserArch arch_;
  TinyNet<float> net_;
};

/// Image in [0,1] mapped to the model range [-1,1].
inline Image to_model_range(const Image& img) {
  Image out = img;
  for (auto& v : out.data()) v = 2.0f * v - 1.0f;
  return out;
}

struct DenoiserExample {
  Image x0;        // model range [-1,1]
  ClassMap seg;
  EdgeMap edge;
};

struct DenoiserTrainConfig {
  int epochs = 30;
  int batch_size = 16;
  AdamConfig adam{2e-3, 0.9, 0.999, 1e-8};
  double lr_final = 1e-4;  // cosine decay from adam.lr to this over all updates
  double p_drop_edge = 0.5;
  std::uint64_t seed = 2;
  int val_examples = 64;  // held-out examples with fixed (t, eps) draws
};

struct DenoiserTrainReport {
  double init_val_loss = 0.0;
  std::vector<double> epoch_train_losses;
  std::vector<double> epoch_val_losses;
};

namespace detail {

struct DiffusionDraw {
  int t;
  bool drop_edge;
  std::uint64_t noise_seed;
};

inline double denoiser_loss_and_grad(const LearnedDenoiser& den, const DenoiserExample& ex, const DiffusionDraw& d,
                                     Gradients<float>* grads) {
  const auto& s = den.schedule();
  const double a = s.alpha(d.t);
  Rng nrng(d.noise_seed);
  Tensor<float> eps(ex.x0.channels(), ex.x0.height(), ex.x0.width());
  for (auto& v : eps.data()) v = static_cast<float>(nrng.normal());
  Tensor<float> x_t = ex.x0;
  const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
  for (std::size_t i = 0; i < x_t.size(); ++i) x_t[i] = static_cast<float>(sa * ex.x0[i] + sn * eps[i]);
  const EdgeMap zero(ex.edge.height(), ex.edge.width(), 0);
  const Condition cond{one_hot(ex.seg, den.arch().num_classes), d.drop_edge ? zero : ex.edge};
  thread_local ForwardCache<float> cache;
  forward_into(den.net(), den.build_input(x_t, d.t, cond), cache);
  const Tensor<float> eps_hat = den.combine(x_t, cache.acts.back(), d.t);
  const double n = static_cast<double>(eps.size());
  double loss = 0.0;
  Tensor<float> dF(eps.channels(), eps.height(), eps.width());
  const double f_gain = den.coefficients(d.t).f_gain;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double r = static_cast<double>(eps_hat[i]) - eps[i];
    loss += r * r;
    dF[i] = static_cast<float>(2.0 * r / n * -f_gain);
  }
  if (grads) backward_accumulate(den.net(), cache, dF, *grads);
  return loss / n;
}

}  // namespace detail

/// Mean eps-MSE of `den` over fixed validation draws.
inline double denoiser_validation_loss(const LearnedDenoiser& den, const std::vector<DenoiserExample>& val,
                                       std::uint64_t seed, double p_drop_edge) {
  if (val.empty()) return std::nan("");
  Rng rng(seed);
  double sum = 0.0;
  for (const auto& ex : val) {
    detail::DiffusionDraw d{static_cast<int>(rng.uniform_int(1, den.schedule().steps())), rng.bernoulli(p_drop_edge),
                            rng.next_u64()};
    sum += detail::denoiser_loss_and_grad(den, ex, d, nullptr);
  }
  return sum / static_cast<double>(val.size());
}

/// Minimizes E ||eps - eps_hat(x_t, t, cond)||^2 over uniform t, zeroing the
/// edge condition with probability p_drop_edge so one model serves both the
/// segmentation-only and the edge-refined reconstructions.
inline void train_denoiser(LearnedDenoiser& den, const std::vector<DenoiserExample>& dataset,
                           const DenoiserTrainConfig& cfg, DenoiserTrainReport* report = nullptr) {
  require(!dataset.empty(), ErrorCode::EmptyInput, "empty denoiser training set");
  require(cfg.batch_size >= 1 && cfg.epochs >= 0, ErrorCode::BadConfig, "need batch_size >= 1 and epochs >= 0");
  require(cfg.p_drop_edge >= 0.0 && cfg.p_drop_edge <= 1.0, ErrorCode::BadConfig, "edge dropout outside [0,1]");
  std::size_t n_val = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, cfg.val_examples)), dataset.size() / 5);
  const std::size_t n_train = dataset.size() - n_val;
  const std::vector<DenoiserExample> val(dataset.end() - static_cast<std::ptrdiff_t>(n_val), dataset.end());
  const std::uint64_t val_seed = derive_seed(cfg.seed, 99);

  DenoiserTrainReport rep;
  rep.init_val_loss = denoiser_validation_loss(den, val, val_seed, cfg.p_drop_edge);
  auto& net = den.net();
  auto state = make_adam_state(net);
  Rng rng(derive_seed(cfg.seed, 1));
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  const int T = den.schedule().steps();
  const std::size_t per_epoch = (n_train + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);
  const double total_updates = static_cast<double>(std::max<std::size_t>(1, per_epoch * static_cast<std::size_t>(cfg.epochs)));
  AdamConfig adam = cfg.adam;
  long update = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    double total = 0.0;
    for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n_train, start + static_cast<std::size_t>(cfg.batch_size));
      auto grads = net.zero_gradients();
      for (std::size_t b = start; b < end; ++b) {
        detail::DiffusionDraw d{static_cast<int>(rng.uniform_int(1, T)), rng.bernoulli(cfg.p_drop_edge), rng.next_u64()};
        total += detail::denoiser_loss_and_grad(den, dataset[order[b]], d, &grads);
      }
      scale_gradients(grads, 1.0f / static_cast<float>(end - start));
      require(all_finite(grads), ErrorCode::Diverged, "non-finite denoiser gradient");
      const double progress = static_cast<double>(update++) / total_updates;
      adam.lr = cfg.lr_final + 0.5 * (cfg.adam.lr - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
      adam_step(net, grads, state, adam);
    }
    const double train_loss = total / static_cast<double>(n_train);
    require(std::isfinite(train_loss), ErrorCode::Diverged, "denoiser loss is not finite");
    rep.epoch_train_losses.push_back(train_loss);
    rep.epoch_val_losses.push_back(denoiser_validation_loss(den, val, val_seed, cfg.p_drop_edge));
  }
  if (report) *report = std::move(rep);
}

}  // namespace semcom
