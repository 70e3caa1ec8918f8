#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "noiseprint/common.hpp"

namespace noiseprint {

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. Network activations use the [C, N, H, W] layout.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {}
  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == count(shape_),
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_str(shape_));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

/// A single-channel 2-D raster stored row-major.
template <class T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
    require(w >= 0 && h >= 0, "negative grid dimensions");
  }

  std::size_t size() const { return data.size(); }
  T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool same_size(const auto& o) const { return width == o.width && height == o.height; }
  std::string size_str() const { return std::to_string(width) + "x" + std::to_string(height); }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using Plane = Grid<float>;
using Mask = Grid<std::uint8_t>;

inline bool all_finite(const Plane& p) {
  return std::all_of(p.data.begin(), p.data.end(), [](float v) { return std::isfinite(v); });
}

inline double plane_mean(const Plane& p) {
  double s = 0;
  for (float v : p.data) s += v;
  return p.data.empty() ? 0.0 : s / static_cast<double>(p.data.size());
}

/// Pearson correlation of two equal-size planes (0 when either is constant).
inline double correlation(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), "correlation of different-size arrays");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline double correlation(const Plane& a, const Plane& b) {
  require(a.same_size(b), "correlation of planes " + a.size_str() + " and " + b.size_str());
  return correlation(std::span<const float>(a.data), std::span<const float>(b.data));
}

/// Wraps a plane as a [1, 1, H, W] tensor.
template <class T>
Tensor<T> plane_to_tensor(const Plane& p) {
  return Tensor<T>({1, 1, static_cast<std::size_t>(p.height), static_cast<std::size_t>(p.width)},
                   std::vector<T>(p.data.begin(), p.data.end()));
}

template <class T>
Plane tensor_to_plane(const Tensor<T>& t, std::size_t sample = 0) {
  require(t.rank() == 4 && t.dim(0) == 1, "expected a [1, N, H, W] tensor, got " + shape_str(t.shape()));
  const auto h = t.dim(2), w = t.dim(3);
  Plane p(static_cast<int>(w), static_cast<int>(h));
  const T* src = t.data() + sample * h * w;
  std::transform(src, src + h * w, p.data.begin(), [](T v) { return static_cast<float>(v); });
  return p;
}

}  // namespace noiseprint
