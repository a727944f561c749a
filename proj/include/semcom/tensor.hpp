#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "semcom/error.hpp"

namespace semcom {

/// Cache-line aligned storage. Vectorized kernels pick their reduction order
/// from buffer alignment, so a fixed alignment keeps results independent of
/// heap layout.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Row-major 2-D map (segmentation, instance ids, edges, attention).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {
    require(height >= 0 && width >= 0, ErrorCode::DimMismatch, "negative grid dims");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  bool in_bounds(int y, int x) const noexcept { return y >= 0 && x >= 0 && y < height_ && x < width_; }
  bool same_dims(int h, int w) const noexcept { return h == height_ && w == width_; }
  template <typename U>
  bool same_dims(const Grid<U>& o) const noexcept { return same_dims(o.height(), o.width()); }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }
  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using ClassMap = Grid<std::uint8_t>;
using InstanceMap = Grid<std::uint16_t>;
using BinaryMap = Grid<std::uint8_t>;
using RealMap = Grid<double>;

/// Planar channel-major tensor (C, H, W). Images are Tensor<float> in [0,1].
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int height, int width, T fill = T{})
      : c_(channels), h_(height), w_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {}

  int channels() const noexcept { return c_; }
  int height() const noexcept { return h_; }
  int width() const noexcept { return w_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h_) * w_; }

  T& operator()(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x]; }
  const T& operator()(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> channel(int c) { return {data_.data() + c * plane(), plane()}; }
  std::span<const T> channel(int c) const { return {data_.data() + c * plane(), plane()}; }

  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  AlignedVector<T>& data() noexcept { return data_; }
  const AlignedVector<T>& data() const noexcept { return data_; }

  /// Reshapes and fills in place, keeping the allocation when it is large enough.
  void reset(int channels, int height, int width, T fill = T{}) {
    c_ = channels, h_ = height, w_ = width;
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
  }

  bool same_shape(const Tensor& o) const noexcept { return c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  std::string shape_str() const {
    return std::to_string(c_) + "x" + std::to_string(h_) + "x" + std::to_string(w_);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(c_, h_, w_);
    std::transform(data_.begin(), data_.end(), out.data().begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int c_ = 0, h_ = 0, w_ = 0;
  AlignedVector<T> data_;
};

using Image = Tensor<float>;

}  // namespace semcom
