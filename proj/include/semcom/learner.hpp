#pragma once

// Minimal trainable-network substrate: a fixed vocabulary of layers with
// hand-derived gradients, composed sequentially, plus the Adam optimizer.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "semcom/error.hpp"
#include "semcom/rng.hpp"
#include "semcom/tensor.hpp"

namespace semcom {

enum class LayerKind : std::uint8_t {
  Conv = 0,
  ReLU = 1,
  SiLU = 2,
  Sigmoid = 3,
  AvgPool2 = 4,
  Upsample2 = 5,
  GlobalAvgPool = 6,
  Dense = 7,
};

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  int in = 0;      // channels (conv) or features (dense)
  int out = 0;
  int kernel = 1;
  int stride = 1;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline LayerSpec conv(int in, int out, int kernel, int stride = 1) { return {LayerKind::Conv, in, out, kernel, stride}; }
inline LayerSpec relu() { return {LayerKind::ReLU}; }
inline LayerSpec silu() { return {LayerKind::SiLU}; }
inline LayerSpec sigmoid_layer() { return {LayerKind::Sigmoid}; }
inline LayerSpec avgpool2() { return {LayerKind::AvgPool2}; }
inline LayerSpec upsample2() { return {LayerKind::Upsample2}; }
inline LayerSpec global_avg_pool() { return {LayerKind::GlobalAvgPool}; }
inline LayerSpec dense(int in, int out) { return {LayerKind::Dense, in, out}; }

struct Shape {
  int c = 0, h = 0, w = 0;
  std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
struct LayerParams {
  AlignedVector<T> weight;
  AlignedVector<T> bias;
};

template <typename T>
using Gradients = std::vector<LayerParams<T>>;

namespace detail {

inline Shape output_shape(const LayerSpec& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::Conv: {
      require(l.in == in.c, ErrorCode::ShapeMismatch,
              "conv expects " + std::to_string(l.in) + " channels, got " + std::to_string(in.c));
      require(l.kernel >= 1 && l.stride >= 1 && l.out >= 1, ErrorCode::ShapeMismatch, "bad conv geometry");
      const int pad = l.kernel / 2;
      const int oh = (in.h + 2 * pad - l.kernel) / l.stride + 1;
      const int ow = (in.w + 2 * pad - l.kernel) / l.stride + 1;
      require(oh >= 1 && ow >= 1, ErrorCode::ShapeMismatch, "conv output would be empty");
      return {l.out, oh, ow};
    }
    case LayerKind::ReLU:
    case LayerKind::SiLU:
    case LayerKind::Sigmoid:
      return in;
    case LayerKind::AvgPool2:
      require(in.h >= 2 && in.w >= 2, ErrorCode::ShapeMismatch, "avgpool2 needs at least 2x2 input");
      return {in.c, in.h / 2, in.w / 2};
    case LayerKind::Upsample2:
      return {in.c, in.h * 2, in.w * 2};
    case LayerKind::GlobalAvgPool:
      return {in.c, 1, 1};
    case LayerKind::Dense:
      require(static_cast<std::size_t>(l.in) == in.size(), ErrorCode::ShapeMismatch,
              "dense expects " + std::to_string(l.in) + " inputs, got " + std::to_string(in.size()));
      return {l.out, 1, 1};
  }
  fail(ErrorCode::ShapeMismatch, "unknown layer kind");
}

inline std::size_t weight_count(const LayerSpec& l) {
  if (l.kind == LayerKind::Conv) return static_cast<std::size_t>(l.out) * l.in * l.kernel * l.kernel;
  if (l.kind == LayerKind::Dense) return static_cast<std::size_t>(l.out) * l.in;
  return 0;
}

inline std::size_t bias_count(const LayerSpec& l) {
  return (l.kind == LayerKind::Conv || l.kind == LayerKind::Dense) ? static_cast<std::size_t>(l.out) : 0;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> as_array(Tensor<T>& t) {
  return {t.ptr(), static_cast<Eigen::Index>(t.size())};
}
template <typename T>
Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> as_array(const Tensor<T>& t) {
  return {t.ptr(), static_cast<Eigen::Index>(t.size())};
}

/// Vectorized logistic, written through tanh so it saturates cleanly.
template <typename Derived>
auto logistic(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (x * S(0.5)).tanh() * S(0.5) + S(0.5);
}

template <typename T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace detail

/// Sequential network with explicit parameter tensors. Weights are laid out
/// row-major as (out, in * k * k) for convolutions and (out, in) for dense.
template <typename T>
class TinyNet {
 public:
  TinyNet() = default;
  TinyNet(Shape input, std::vector<LayerSpec> layers, std::uint64_t seed)
      : input_(input), layers_(std::move(layers)), seed_(seed) {
    require(input.c >= 1 && input.h >= 1 && input.w >= 1, ErrorCode::ShapeMismatch, "empty input shape");
    shapes_.push_back(input_);
    for (const auto& l : layers_) shapes_.push_back(detail::output_shape(l, shapes_.back()));
    Rng rng(seed);
    params_.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      auto& p = params_[i];
      p.weight.resize(detail::weight_count(l));
      p.bias.assign(detail::bias_count(l), T(0));
      if (p.weight.empty()) continue;
      const int fan_in = l.kind == LayerKind::Conv ? l.in * l.kernel * l.kernel : l.in;
      const double bound = std::sqrt(6.0 / fan_in);
      for (auto& w : p.weight) w = static_cast<T>(rng.uniform(-bound, bound));
    }
  }

  const Shape& input_shape() const { return input_; }
  const Shape& output_shape() const { return shapes_.back(); }
  /// shape_at(i) is the input shape of layer i; shape_at(size()) the output.
  const Shape& shape_at(std::size_t i) const { return shapes_[i]; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t size() const { return layers_.size(); }
  std::uint64_t seed() const { return seed_; }

  std::vector<LayerParams<T>>& params() { return params_; }
  const std::vector<LayerParams<T>>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.weight.size() + p.bias.size();
    return n;
  }

  /// Canonical architecture text; its hash guards checkpoint loading.
  std::string describe() const {
    std::ostringstream os;
    os << "in=" << input_.c << "x" << input_.h << "x" << input_.w;
    for (const auto& l : layers_)
      os << ";" << static_cast<int>(l.kind) << ":" << l.in << ":" << l.out << ":" << l.kernel << ":" << l.stride;
    return os.str();
  }

  std::uint64_t architecture_digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : describe()) {
      h ^= static_cast<std::uint8_t>(ch);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  Gradients<T> zero_gradients() const {
    Gradients<T> g(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      g[i].weight.assign(params_[i].weight.size(), T(0));
      g[i].bias.assign(params_[i].bias.size(), T(0));
    }
    return g;
  }

  template <typename U>
  TinyNet<U> cast() const {
    TinyNet<U> out(input_, layers_, seed_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      std::transform(params_[i].weight.begin(), params_[i].weight.end(), out.params()[i].weight.begin(),
                     [](T v) { return static_cast<U>(v); });
      std::transform(params_[i].bias.begin(), params_[i].bias.end(), out.params()[i].bias.begin(),
                     [](T v) { return static_cast<U>(v); });
    }
    return out;
  }

 private:
  Shape input_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  std::vector<LayerParams<T>> params_;
  std::uint64_t seed_ = 0;
};

/// Activations kept by forward for the backward pass. acts[i] is the input
/// of layer i; acts.back() is the network output. cols holds the im2col
/// buffers of convolution layers (empty otherwise).
template <typename T>
struct ForwardCache {
  std::vector<Tensor<T>> acts;
  std::vector<AlignedVector<T>> cols;
};

namespace detail {

template <typename T>
void im2col(const Tensor<T>& in, const LayerSpec& l, const Shape& out, AlignedVector<T>& col) {
  const int k = l.kernel, s = l.stride, pad = k / 2;
  const std::size_t n = static_cast<std::size_t>(out.h) * out.w;
  col.assign(static_cast<std::size_t>(l.in) * k * k * n, T(0));
  if (s == 1) {
    for (int ci = 0; ci < l.in; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T* row = col.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * n;
          const int ox0 = std::max(0, pad - kx), ox1 = std::min(out.w, in.width() - kx + pad);
          if (ox1 <= ox0) continue;
          for (int oy = 0; oy < out.h; ++oy) {
            const int iy = oy + ky - pad;
            if (iy < 0 || iy >= in.height()) continue;
            std::copy_n(&in(ci, iy, ox0 + kx - pad), ox1 - ox0, row + static_cast<std::size_t>(oy) * out.w + ox0);
          }
        }
    return;
  }
  for (int ci = 0; ci < l.in; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * n;
        for (int oy = 0; oy < out.h; ++oy) {
          const int iy = oy * s + ky - pad;
          if (iy < 0 || iy >= in.height()) continue;
          for (int ox = 0; ox < out.w; ++ox) {
            const int ix = ox * s + kx - pad;
            if (ix >= 0 && ix < in.width()) row[static_cast<std::size_t>(oy) * out.w + ox] = in(ci, iy, ix);
          }
        }
      }
}

template <typename T>
void col2im(const AlignedVector<T>& col, const LayerSpec& l, const Shape& out, Tensor<T>& din) {
  const int k = l.kernel, s = l.stride, pad = k / 2;
  const std::size_t n = static_cast<std::size_t>(out.h) * out.w;
  if (s == 1) {
    for (int ci = 0; ci < l.in; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T* row = col.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * n;
          const int ox0 = std::max(0, pad - kx), ox1 = std::min(out.w, din.width() - kx + pad);
          for (int oy = 0; oy < out.h; ++oy) {
            const int iy = oy + ky - pad;
            if (iy < 0 || iy >= din.height()) continue;
            T* dst = &din(ci, iy, 0);
            const T* src = row + static_cast<std::size_t>(oy) * out.w;
            for (int ox = ox0; ox < ox1; ++ox) dst[ox + kx - pad] += src[ox];
          }
        }
    return;
  }
  for (int ci = 0; ci < l.in; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * n;
        for (int oy = 0; oy < out.h; ++oy) {
          const int iy = oy * s + ky - pad;
          if (iy < 0 || iy >= din.height()) continue;
          for (int ox = 0; ox < out.w; ++ox) {
            const int ix = ox * s + kx - pad;
            if (ix >= 0 && ix < din.width()) din(ci, iy, ix) += row[static_cast<std::size_t>(oy) * out.w + ox];
          }
        }
      }
}

}  // namespace detail

template <typename T>
struct ForwardResult {
  Tensor<T> output;
  ForwardCache<T> cache;
};

/// Forward pass into a caller-owned cache whose buffers are reused across
/// calls; cache.acts.back() is the output.
template <typename T>
void forward_into(const TinyNet<T>& net, const Tensor<T>& input, ForwardCache<T>& cache) {
  const Shape& in_shape = net.input_shape();
  require(input.channels() == in_shape.c && input.height() == in_shape.h && input.width() == in_shape.w,
          ErrorCode::ShapeMismatch, "input " + input.shape_str() + " does not match network input");
  cache.acts.resize(net.size() + 1);
  cache.cols.resize(net.size());
  cache.acts[0] = input;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& l = net.layers()[i];
    const auto& p = net.params()[i];
    const Tensor<T>& x = cache.acts[i];
    const Shape os = net.shape_at(i + 1);
    Tensor<T>& y = cache.acts[i + 1];
    y.reset(os.c, os.h, os.w);
    switch (l.kind) {
      case LayerKind::Conv: {
        auto& col = cache.cols[i];
        detail::im2col(x, l, os, col);
        const Eigen::Index n = static_cast<Eigen::Index>(os.h) * os.w;
        const Eigen::Index kk = static_cast<Eigen::Index>(l.in) * l.kernel * l.kernel;
        detail::CMapMat<T> w(p.weight.data(), l.out, kk);
        detail::CMapMat<T> c(col.data(), kk, n);
        detail::MapMat<T> out(y.ptr(), l.out, n);
        out.noalias() = w * c;
        for (int co = 0; co < l.out; ++co) out.row(co).array() += p.bias[static_cast<std::size_t>(co)];
        break;
      }
      case LayerKind::ReLU:
        for (std::size_t j = 0; j < y.size(); ++j) y[j] = x[j] > T(0) ? x[j] : T(0);
        break;
      case LayerKind::SiLU: {
        const auto xa = detail::as_array(x);
        detail::as_array(y) = xa * detail::logistic(xa);
        break;
      }
      case LayerKind::Sigmoid:
        detail::as_array(y) = detail::logistic(detail::as_array(x));
        break;
      case LayerKind::AvgPool2:
        for (int c = 0; c < os.c; ++c)
          for (int yy = 0; yy < os.h; ++yy)
            for (int xx = 0; xx < os.w; ++xx)
              y(c, yy, xx) = (x(c, 2 * yy, 2 * xx) + x(c, 2 * yy, 2 * xx + 1) + x(c, 2 * yy + 1, 2 * xx) +
                              x(c, 2 * yy + 1, 2 * xx + 1)) /
                             T(4);
        break;
      case LayerKind::Upsample2:
        for (int c = 0; c < os.c; ++c)
          for (int yy = 0; yy < os.h; ++yy)
            for (int xx = 0; xx < os.w; ++xx) y(c, yy, xx) = x(c, yy / 2, xx / 2);
        break;
      case LayerKind::GlobalAvgPool:
        for (int c = 0; c < x.channels(); ++c) {
          T s(0);
          for (T v : x.channel(c)) s += v;
          y(c, 0, 0) = s / static_cast<T>(x.plane());
        }
        break;
      case LayerKind::Dense: {
        detail::CMapMat<T> w(p.weight.data(), l.out, l.in);
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(x.ptr(), l.in);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> yv(y.ptr(), l.out);
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(p.bias.data(), l.out);
        yv.noalias() = w * xv + b;
        break;
      }
    }
  }
}

template <typename T>
ForwardResult<T> forward(const TinyNet<T>& net, const Tensor<T>& input) {
  ForwardResult<T> r;
  forward_into(net, input, r.cache);
  r.output = r.cache.acts.back();
  return r;
}

/// Accumulates parameter gradients of a scalar loss into `grads` given
/// dLoss/dOutput. If `input_grad` is non-null it receives dLoss/dInput.
template <typename T>
void backward_accumulate(const TinyNet<T>& net, const ForwardCache<T>& cache, const Tensor<T>& out_grad,
                         Gradients<T>& grads, Tensor<T>* input_grad = nullptr) {
  require(cache.acts.size() == net.size() + 1, ErrorCode::ShapeMismatch, "cache does not match network");
  require(grads.size() == net.size(), ErrorCode::ShapeMismatch, "gradient buffer does not match network");
  const Shape& os_final = net.output_shape();
  require(out_grad.channels() == os_final.c && out_grad.height() == os_final.h && out_grad.width() == os_final.w,
          ErrorCode::ShapeMismatch, "output gradient shape mismatch");
  // Scratch buffers reused across calls on this thread.
  thread_local Tensor<T> dy, dx;
  thread_local AlignedVector<T> dcol;
  dy = out_grad;
  for (std::size_t ii = net.size(); ii-- > 0;) {
    const auto& l = net.layers()[ii];
    const auto& p = net.params()[ii];
    auto& g = grads[ii];
    const Tensor<T>& x = cache.acts[ii];
    const Tensor<T>& yv = cache.acts[ii + 1];
    const Shape is = net.shape_at(ii), os = net.shape_at(ii + 1);
    const bool need_dx = ii > 0 || input_grad != nullptr;
    dx.reset(is.c, is.h, is.w, T(0));
    switch (l.kind) {
      case LayerKind::Conv: {
        const auto& col = cache.cols[ii];
        const Eigen::Index n = static_cast<Eigen::Index>(os.h) * os.w;
        const Eigen::Index kk = static_cast<Eigen::Index>(l.in) * l.kernel * l.kernel;
        detail::CMapMat<T> dym(dy.ptr(), l.out, n);
        detail::CMapMat<T> c(col.data(), kk, n);
        detail::MapMat<T> dw(g.weight.data(), l.out, kk);
        dw.noalias() += dym * c.transpose();
        for (int co = 0; co < l.out; ++co) g.bias[static_cast<std::size_t>(co)] += dym.row(co).sum();
        if (need_dx) {
          dcol.resize(static_cast<std::size_t>(kk * n));
          detail::CMapMat<T> w(p.weight.data(), l.out, kk);
          detail::MapMat<T> dc(dcol.data(), kk, n);
          dc.noalias() = w.transpose() * dym;
          detail::col2im(dcol, l, os, dx);
        }
        break;
      }
      case LayerKind::ReLU:
        for (std::size_t j = 0; j < dx.size(); ++j) dx[j] = x[j] > T(0) ? dy[j] : T(0);
        break;
      case LayerKind::SiLU: {
        const auto xa = detail::as_array(x);
        const auto sg = detail::logistic(xa).eval();
        detail::as_array(dx) = detail::as_array(dy) * sg * (T(1) + xa * (T(1) - sg));
        break;
      }
      case LayerKind::Sigmoid:
        for (std::size_t j = 0; j < dx.size(); ++j) dx[j] = dy[j] * yv[j] * (T(1) - yv[j]);
        break;
      case LayerKind::AvgPool2:
        for (int c = 0; c < os.c; ++c)
          for (int yy = 0; yy < os.h; ++yy)
            for (int xx = 0; xx < os.w; ++xx) {
              const T v = dy(c, yy, xx) / T(4);
              dx(c, 2 * yy, 2 * xx) += v;
              dx(c, 2 * yy, 2 * xx + 1) += v;
              dx(c, 2 * yy + 1, 2 * xx) += v;
              dx(c, 2 * yy + 1, 2 * xx + 1) += v;
            }
        break;
      case LayerKind::Upsample2:
        for (int c = 0; c < os.c; ++c)
          for (int yy = 0; yy < os.h; ++yy)
            for (int xx = 0; xx < os.w; ++xx) dx(c, yy / 2, xx / 2) += dy(c, yy, xx);
        break;
      case LayerKind::GlobalAvgPool:
        for (int c = 0; c < is.c; ++c) {
          const T v = dy(c, 0, 0) / static_cast<T>(dx.plane());
          for (T& d : dx.channel(c)) d = v;
        }
        break;
      case LayerKind::Dense: {
        detail::CMapMat<T> w(p.weight.data(), l.out, l.in);
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(x.ptr(), l.in);
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> dyv(dy.ptr(), l.out);
        detail::MapMat<T> dw(g.weight.data(), l.out, l.in);
        dw.noalias() += dyv * xv.transpose();
        for (int o = 0; o < l.out; ++o) g.bias[static_cast<std::size_t>(o)] += dyv(o);
        if (need_dx) {
          Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dxv(dx.ptr(), l.in);
          dxv.noalias() = w.transpose() * dyv;
        }
        break;
      }
    }
    std::swap(dy, dx);
  }
  if (input_grad) *input_grad = dy;
}

template <typename T>
Gradients<T> backward(const TinyNet<T>& net, const ForwardCache<T>& cache, const Tensor<T>& out_grad,
                      Tensor<T>* input_grad = nullptr) {
  auto g = net.zero_gradients();
  backward_accumulate(net, cache, out_grad, g, input_grad);
  return g;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Standard bias-corrected Adam on flat buffers; `step` is the 1-based
/// index of this update.
template <typename T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v, long step,
                 const AdamConfig& cfg) {
  require(params.size() == grads.size() && m.size() == params.size() && v.size() == params.size(),
          ErrorCode::ShapeMismatch, "adam buffers differ in size");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / c1, vhat = vi / c2;
    params[i] = static_cast<T>(params[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

template <typename T>
struct AdamState {
  Gradients<T> m, v;
  long step = 0;
};

template <typename T>
AdamState<T> make_adam_state(const TinyNet<T>& net) {
  return {net.zero_gradients(), net.zero_gradients(), 0};
}

template <typename T>
void adam_step(TinyNet<T>& net, const Gradients<T>& grads, AdamState<T>& state, const AdamConfig& cfg) {
  require(grads.size() == net.size() && state.m.size() == net.size(), ErrorCode::ShapeMismatch,
          "adam state does not match network");
  ++state.step;
  for (std::size_t i = 0; i < net.size(); ++i) {
    auto& p = net.params()[i];
    adam_update<T>(p.weight, grads[i].weight, state.m[i].weight, state.v[i].weight, state.step, cfg);
    adam_update<T>(p.bias, grads[i].bias, state.m[i].bias, state.v[i].bias, state.step, cfg);
  }
}

template <typename T>
void scale_gradients(Gradients<T>& g, T factor) {
  for (auto& p : g) {
    for (auto& v : p.weight) v *= factor;
    for (auto& v : p.bias) v *= factor;
  }
}

template <typename T>
bool all_finite(const Gradients<T>& g) {
  for (const auto& p : g) {
    for (T v : p.weight)
      if (!std::isfinite(v)) return false;
    for (T v : p.bias)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace semcom
