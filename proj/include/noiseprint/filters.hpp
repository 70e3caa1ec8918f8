#pragma once

#include <algorithm>
#include <vector>

#include "noiseprint/tensor.hpp"

namespace noiseprint {

/// Summed-area table with one row/column of zero padding; sums in double.
class IntegralImage {
 public:
  IntegralImage() = default;

  template <class Fn>
  IntegralImage(int width, int height, Fn&& value) : w_(width), h_(height), s_((width + 1) * static_cast<std::size_t>(height + 1), 0.0) {
    for (int y = 0; y < height; ++y) {
      double row = 0;
      for (int x = 0; x < width; ++x) {
        row += value(x, y);
        s_[idx(x + 1, y + 1)] = s_[idx(x + 1, y)] + row;
      }
    }
  }

  explicit IntegralImage(const Plane& p) : IntegralImage(p.width, p.height, [&](int x, int y) { return double(p.at(x, y)); }) {}

  /// Sum over the half-open rectangle [x0, x1) x [y0, y1).
  double sum(int x0, int y0, int x1, int y1) const {
    return s_[idx(x1, y1)] - s_[idx(x0, y1)] - s_[idx(x1, y0)] + s_[idx(x0, y0)];
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * (w_ + 1) + x; }
  int w_ = 0, h_ = 0;
  std::vector<double> s_;
};

/// Mean over the (2r+1)^2 neighbourhood, truncated at the borders.
inline Plane box_mean(const Plane& p, int r) {
  const IntegralImage ii(p);
  Plane out(p.width, p.height);
  for (int y = 0; y < p.height; ++y) {
    const int y0 = std::max(0, y - r), y1 = std::min(p.height, y + r + 1);
    for (int x = 0; x < p.width; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(p.width, x + r + 1);
      out.at(x, y) = static_cast<float>(ii.sum(x0, y0, x1, y1) / ((x1 - x0) * (y1 - y0)));
    }
  }
  return out;
}

struct LocalMoments {
  Plane mean;
  Plane variance;
};

inline LocalMoments local_moments(const Plane& p, int r) {
  const IntegralImage s1(p);
  const IntegralImage s2(p.width, p.height, [&](int x, int y) {
    const double v = p.at(x, y);
    return v * v;
  });
  LocalMoments m{Plane(p.width, p.height), Plane(p.width, p.height)};
  for (int y = 0; y < p.height; ++y) {
    const int y0 = std::max(0, y - r), y1 = std::min(p.height, y + r + 1);
    for (int x = 0; x < p.width; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(p.width, x + r + 1);
      const double n = (x1 - x0) * (y1 - y0);
      const double mu = s1.sum(x0, y0, x1, y1) / n;
      m.mean.at(x, y) = static_cast<float>(mu);
      m.variance.at(x, y) = static_cast<float>(std::max(0.0, s2.sum(x0, y0, x1, y1) / n - mu * mu));
    }
  }
  return m;
}

}  // namespace noiseprint
