#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "noiseprint/common.hpp"
#include "noiseprint/filters.hpp"
#include "noiseprint/fingerprint.hpp"
#include "noiseprint/image_io.hpp"
#include "noiseprint/tensor.hpp"

namespace noiseprint {

enum class Aggregation { mean, max };

struct WindowConfig {
  int window = 64;
  int stride = 8;
  Aggregation aggregation = Aggregation::mean;

  void validate(int width, int height) const {
    require(window >= 1 && window <= std::min(width, height),
            "window " + std::to_string(window) + " does not fit a " + std::to_string(width) + "x" +
                std::to_string(height) + " image");
    require(stride >= 1 && stride <= window, "stride must be in [1, window]");
  }

  /// Window origins along one axis: multiples of the stride, plus a final flush window so the
  /// far border is covered.
  std::vector<int> origins(int extent) const {
    std::vector<int> o;
    for (int p = 0; p + window <= extent; p += stride) o.push_back(p);
    if (o.back() != extent - window) o.push_back(extent - window);
    return o;
  }
};

using Heatmap = Plane;

namespace detail {

// Spreads per-window scores onto pixels. `score(x0, y0)` is evaluated once per window.
template <class ScoreFn>
Heatmap aggregate_windows(int width, int height, const WindowConfig& cfg, ScoreFn&& score) {
  cfg.validate(width, height);
  const auto xs = cfg.origins(width), ys = cfg.origins(height);
  const int w = cfg.window;
  Heatmap heat(width, height);
  if (cfg.aggregation == Aggregation::max) {
    heat.data.assign(heat.size(), -std::numeric_limits<float>::infinity());
    for (int y0 : ys)
      for (int x0 : xs) {
        const auto s = static_cast<float>(score(x0, y0));
        for (int y = y0; y < y0 + w; ++y)
          for (int x = x0; x < x0 + w; ++x) heat.at(x, y) = std::max(heat.at(x, y), s);
      }
    return heat;
  }
  // Mean: 2-D difference arrays for sums and counts, then prefix sums.
  const std::size_t W1 = static_cast<std::size_t>(width) + 1;
  std::vector<double> sum(W1 * (height + 1), 0.0), cnt(W1 * (height + 1), 0.0);
  auto bump = [&](std::vector<double>& a, int x, int y, double v) { a[static_cast<std::size_t>(y) * W1 + x] += v; };
  for (int y0 : ys)
    for (int x0 : xs) {
      const double s = score(x0, y0);
      for (auto* a : {&sum, &cnt}) {
        const double v = a == &sum ? s : 1.0;
        bump(*a, x0, y0, v);
        bump(*a, x0 + w, y0, -v);
        bump(*a, x0, y0 + w, -v);
        bump(*a, x0 + w, y0 + w, v);
      }
    }
  for (auto* a : {&sum, &cnt}) {
    for (int y = 0; y <= height; ++y)
      for (int x = 1; x <= width; ++x) (*a)[y * W1 + x] += (*a)[y * W1 + x - 1];
    for (int y = 1; y <= height; ++y)
      for (int x = 0; x <= width; ++x) (*a)[y * W1 + x] += (*a)[(y - 1) * W1 + x];
  }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double c = std::round(cnt[y * W1 + x]);
      heat.at(x, y) = static_cast<float>(sum[y * W1 + x] / c);
    }
  return heat;
}

}  // namespace detail

/// Number of windows covering each pixel.
inline Grid<int> window_coverage(int width, int height, const WindowConfig& cfg) {
  cfg.validate(width, height);
  Grid<int> cov(width, height, 0);
  for (int y0 : cfg.origins(height))
    for (int x0 : cfg.origins(width))
      for (int y = y0; y < y0 + cfg.window; ++y)
        for (int x = x0; x < x0 + cfg.window; ++x) ++cov.at(x, y);
  return cov;
}

/// Per window: mean squared difference between test residual and reference.
inline Heatmap noiseprint_heatmap(const Plane& residual, const Plane& reference, const WindowConfig& cfg = {}) {
  require(residual.same_size(reference), "test residual is " + residual.size_str() + " but the reference is " +
                                             reference.size_str() + "; references must be aligned with the test image");
  const double n = double(cfg.window) * cfg.window;
  return detail::aggregate_windows(residual.width, residual.height, cfg, [&](int x0, int y0) {
    double s = 0;
    for (int y = y0; y < y0 + cfg.window; ++y)
      for (int x = x0; x < x0 + cfg.window; ++x) {
        const double d = double(residual.at(x, y)) - reference.at(x, y);
        s += d * d;
      }
    return s / n;
  });
}

inline Heatmap noiseprint_heatmap(const Plane& residual, const NoiseprintReference& ref, const WindowConfig& cfg = {}) {
  return noiseprint_heatmap(residual, ref.mean_residual, cfg);
}

/// Normalised correlation of two planes over one window; 0 if either is constant there.
inline double window_correlation(const Plane& a, const Plane& b, int x0, int y0, int w) {
  const double n = double(w) * w;
  double ma = 0, mb = 0;
  for (int y = y0; y < y0 + w; ++y)
    for (int x = x0; x < x0 + w; ++x) {
      ma += a.at(x, y);
      mb += b.at(x, y);
    }
  ma /= n;
  mb /= n;
  double va = 0, vb = 0, cov = 0;
  for (int y = y0; y < y0 + w; ++y)
    for (int x = x0; x < x0 + w; ++x) {
      const double da = a.at(x, y) - ma, db = b.at(x, y) - mb;
      va += da * da;
      vb += db * db;
      cov += da * db;
    }
  if (va <= 0 || vb <= 0) return 0.0;
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

/// Per window: -rho, with rho the normalised correlation between the test residual W and
/// I * K. Zero-variance windows score 0.
inline Heatmap prnu_heatmap_from_residual(const Plane& image, const Plane& residual, const Plane& k_hat,
                                          const WindowConfig& cfg = {}) {
  require(image.same_size(k_hat) && residual.same_size(k_hat),
          "test image is " + image.size_str() + " but the PRNU reference is " + k_hat.size_str() +
              "; references must be aligned with the test image");
  Plane ik(image.width, image.height);
  for (std::size_t i = 0; i < ik.size(); ++i) ik.data[i] = static_cast<float>(double(image.data[i]) * k_hat.data[i]);
  return detail::aggregate_windows(image.width, image.height, cfg, [&](int x0, int y0) {
    return -window_correlation(residual, ik, x0, y0, cfg.window);
  });
}

inline Heatmap prnu_heatmap(const Plane& image, const PrnuReference& ref, const WindowConfig& cfg = {},
                            const WienerConfig& wiener = {}) {
  require(image.same_size(ref.k_hat), "test image is " + image.size_str() + " but the PRNU reference is " +
                                          ref.k_hat.size_str() + "; references must be aligned with the test image");
  return prnu_heatmap_from_residual(image, denoise_residual(image, wiener), ref.k_hat, cfg);
}

/// Pixel marked forged iff heat > tau.
inline Mask threshold(const Heatmap& heat, double tau) {
  require(!std::isnan(tau), "threshold must not be NaN");
  Mask m(heat.width, heat.height);
  for (std::size_t i = 0; i < heat.size(); ++i) m.data[i] = heat.data[i] > tau ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------------------------
// Rendering

/// 256-entry blue -> cyan -> green -> yellow -> red palette.
inline const std::array<std::array<std::uint8_t, 3>, 256>& heat_palette() {
  static const auto palette = [] {
    const double anchors[5][3] = {{0, 0, 255}, {0, 200, 255}, {120, 230, 120}, {255, 200, 0}, {255, 0, 0}};
    std::array<std::array<std::uint8_t, 3>, 256> p{};
    for (int i = 0; i < 256; ++i) {
      const double t = i / 255.0 * 4.0;
      const int seg = std::min(3, static_cast<int>(t));
      const double f = t - seg;
      for (int c = 0; c < 3; ++c)
        p[i][c] = static_cast<std::uint8_t>(std::lround(anchors[seg][c] * (1 - f) + anchors[seg + 1][c] * f));
    }
    return p;
  }();
  return palette;
}

struct HeatmapBounds {
  double lo = 0;
  double hi = 0;
};

inline HeatmapBounds heatmap_bounds(const Heatmap& h) {
  require(!h.data.empty() && all_finite(h), "heatmap must be non-empty and finite");
  auto [lo, hi] = std::minmax_element(h.data.begin(), h.data.end());
  return {*lo, *hi};
}

/// Palette index for a value under the given bounds; degenerate bounds map to the middle.
inline int palette_index(double v, const HeatmapBounds& b) {
  if (!(b.hi > b.lo)) return 128;
  return static_cast<int>(std::lround(std::clamp((v - b.lo) / (b.hi - b.lo), 0.0, 1.0) * 255.0));
}

/// Writes a colour rendering and "<path>.meta" with the normalisation bounds used. Pass shared
/// `bounds` to make several renderings comparable.
inline HeatmapBounds render_heatmap_png(const Heatmap& heat, const std::filesystem::path& path,
                                        std::optional<HeatmapBounds> bounds = std::nullopt) {
  require(all_finite(heat), "cannot render a heatmap with non-finite values");
  const HeatmapBounds b = bounds.value_or(heatmap_bounds(heat));
  if (!(b.hi > b.lo)) warn("heatmap " + path.string() + " is constant; rendering mid colour");
  const auto& pal = heat_palette();
  RgbImage img{heat.width, heat.height, std::vector<std::uint8_t>(heat.size() * 3)};
  for (std::size_t i = 0; i < heat.size(); ++i) {
    const auto& c = pal[static_cast<std::size_t>(palette_index(heat.data[i], b))];
    std::copy(c.begin(), c.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  write_png(path, img);
  detail::atomic_write(sidecar_path(path), [&](std::ostream& os) {
    os.precision(9);
    os << "lo " << b.lo << "\nhi " << b.hi << '\n';
  });
  return b;
}

}  // namespace noiseprint
