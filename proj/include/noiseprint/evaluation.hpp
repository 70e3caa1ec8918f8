#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "noiseprint/common.hpp"
#include "noiseprint/image_io.hpp"
#include "noiseprint/tensor.hpp"

namespace noiseprint {

/// One operating point: pixels with score > threshold are called forged.
struct RocPoint {
  double threshold = 0;
  double fpr = 0;
  double tpr = 0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
};

/// Exact ROC over every distinct score, ordered by increasing threshold. The first point is
/// threshold -inf, i.e. (1, 1); the last is the maximum score, i.e. (0, 0).
struct RocCurve {
  std::vector<RocPoint> points;
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
};

inline RocCurve roc_from_scores(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  require(scores.size() == labels.size(), "score/label count mismatch");
  RocCurve roc;
  for (auto l : labels) (l ? roc.positives : roc.negatives) += 1;
  require(roc.positives > 0 && roc.negatives > 0,
          "ROC needs at least one forged and one pristine pixel (got " + std::to_string(roc.positives) + " forged, " +
              std::to_string(roc.negatives) + " pristine)");
  for (float s : scores) require(!std::isnan(s), "ROC scores must not be NaN");

  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });

  // Walk distinct values from the top; the point at threshold v counts everything strictly above v.
  std::vector<RocPoint> desc;
  std::uint64_t tp = 0, fp = 0;
  const double P = static_cast<double>(roc.positives), N = static_cast<double>(roc.negatives);
  std::size_t i = 0;
  while (i < order.size()) {
    const float v = scores[order[i]];
    desc.push_back({v, fp / N, tp / P, tp, fp});
    while (i < order.size() && scores[order[i]] == v) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
  }
  desc.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0, tp, fp});
  roc.points.assign(desc.rbegin(), desc.rend());
  return roc;
}

namespace detail {

inline void pool(std::span<const Plane> heatmaps, std::span<const Mask> masks, std::vector<float>& scores,
                 std::vector<std::uint8_t>& labels) {
  require(heatmaps.size() == masks.size(), "heatmap/mask count mismatch");
  for (std::size_t k = 0; k < heatmaps.size(); ++k) {
    require(heatmaps[k].same_size(masks[k]), "heatmap " + heatmaps[k].size_str() + " and mask " +
                                                 masks[k].size_str() + " differ in size (image " + std::to_string(k) + ")");
    scores.insert(scores.end(), heatmaps[k].data.begin(), heatmaps[k].data.end());
    labels.insert(labels.end(), masks[k].data.begin(), masks[k].data.end());
  }
}

inline double f1_at(const RocPoint& p, std::uint64_t positives) {
  if (p.tp == 0) return 0.0;
  const double fn = static_cast<double>(positives - p.tp);
  return 2.0 * p.tp / (2.0 * p.tp + p.fp + fn);
}

}  // namespace detail

/// Pixel-level ROC with all images' pixels pooled.
inline RocCurve pooled_roc(std::span<const Plane> heatmaps, std::span<const Mask> masks) {
  std::vector<float> s;
  std::vector<std::uint8_t> l;
  detail::pool(heatmaps, masks, s, l);
  return roc_from_scores(s, l);
}

/// Trapezoidal area; equals P(forged > pristine) + P(tie) / 2.
inline double auc(const RocCurve& roc) {
  double a = 0;
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& p = roc.points[i - 1];
    const auto& q = roc.points[i];
    a += (p.fpr - q.fpr) * (p.tpr + q.tpr) / 2.0;
  }
  return a;
}

struct F1Result {
  double f1 = 0;
  double threshold = 0;
};

/// Maximum F1 over the curve's thresholds; the smallest threshold wins ties.
inline F1Result best_f1(const RocCurve& roc) {
  F1Result best{-1, 0};
  for (const auto& p : roc.points) {
    const double f = detail::f1_at(p, roc.positives);
    if (f > best.f1) best = {f, p.threshold};
  }
  return best;
}

inline F1Result f1_best_global(std::span<const Plane> heatmaps, std::span<const Mask> masks) {
  std::vector<float> s;
  std::vector<std::uint8_t> l;
  detail::pool(heatmaps, masks, s, l);
  require(std::any_of(l.begin(), l.end(), [](auto v) { return v != 0; }), "F1 needs at least one forged pixel");
  if (std::all_of(l.begin(), l.end(), [](auto v) { return v != 0; })) return {1.0, -std::numeric_limits<double>::infinity()};
  return best_f1(roc_from_scores(s, l));
}

/// Per-image best F1 (images without forged pixels are skipped with a warning).
inline std::vector<double> per_image_best_f1(std::span<const Plane> heatmaps, std::span<const Mask> masks) {
  require(heatmaps.size() == masks.size(), "heatmap/mask count mismatch");
  std::vector<double> out;
  for (std::size_t k = 0; k < heatmaps.size(); ++k) {
    const auto& m = masks[k];
    require(heatmaps[k].same_size(m), "heatmap and mask differ in size (image " + std::to_string(k) + ")");
    const auto forged = std::count_if(m.data.begin(), m.data.end(), [](auto v) { return v != 0; });
    if (forged == 0) {
      warn("image " + std::to_string(k) + " has no forged pixels; excluded from F1-oracle");
      out.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    if (static_cast<std::size_t>(forged) == m.size()) {
      out.push_back(1.0);
      continue;
    }
    out.push_back(best_f1(roc_from_scores(heatmaps[k].data, m.data)).f1);
  }
  return out;
}

/// Mean over images of each image's best F1.
inline double f1_oracle(std::span<const Plane> heatmaps, std::span<const Mask> masks) {
  const auto per = per_image_best_f1(heatmaps, masks);
  double s = 0;
  std::size_t n = 0;
  for (double f : per)
    if (!std::isnan(f)) {
      s += f;
      ++n;
    }
  require(n > 0, "F1-oracle needs at least one image with forged pixels");
  return s / static_cast<double>(n);
}

// ---------------------------------------------------------------------------------------------
// Reports

struct ImageMetrics {
  std::string name;
  double auc = std::numeric_limits<double>::quiet_NaN();
  double best_f1 = std::numeric_limits<double>::quiet_NaN();
};

struct MetricsReport {
  std::string method;
  int n_reference = 0;
  std::string dataset_hash;
  std::string generator_id;
  double auc = 0;
  double f1 = 0;
  double f1_threshold = 0;
  double f1_oracle = 0;
  std::vector<ImageMetrics> per_image;
  RocCurve roc;
};

inline MetricsReport evaluate_heatmaps(std::string method, int n_reference, std::span<const Plane> heatmaps,
                                       std::span<const Mask> masks, std::span<const std::string> names) {
  require(names.size() == heatmaps.size(), "name/heatmap count mismatch");
  MetricsReport r;
  r.method = std::move(method);
  r.n_reference = n_reference;
  r.roc = pooled_roc(heatmaps, masks);
  r.auc = auc(r.roc);
  const auto g = best_f1(r.roc);
  r.f1 = g.f1;
  r.f1_threshold = g.threshold;
  const auto per = per_image_best_f1(heatmaps, masks);
  double s = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < heatmaps.size(); ++k) {
    ImageMetrics im{names[k], std::numeric_limits<double>::quiet_NaN(), per[k]};
    const auto& m = masks[k];
    const auto forged = std::count_if(m.data.begin(), m.data.end(), [](auto v) { return v != 0; });
    if (forged > 0 && static_cast<std::size_t>(forged) < m.size()) im.auc = auc(roc_from_scores(heatmaps[k].data, m.data));
    if (!std::isnan(per[k])) {
      s += per[k];
      ++n;
    }
    r.per_image.push_back(std::move(im));
  }
  r.f1_oracle = n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

/// Indices of at most `max_points` curve points, evenly spaced and always including both ends.
inline std::vector<std::size_t> roc_sample_indices(std::size_t n, std::size_t max_points) {
  std::vector<std::size_t> idx;
  if (n <= max_points) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
  for (std::size_t k = 0; k < max_points; ++k) idx.push_back(k * (n - 1) / (max_points - 1));
  return idx;
}

/// Versioned text report, one block per (method, n_reference) cell.
inline std::string format_reports(std::span<const MetricsReport> reports, std::size_t max_roc_points = 257) {
  std::ostringstream os;
  os << "noiseprint-report 1\n";
  for (const auto& r : reports) {
    os << "\n[cell]\n"
       << "method " << r.method << '\n'
       << "n_reference " << r.n_reference << '\n'
       << "dataset " << (r.dataset_hash.empty() ? "-" : r.dataset_hash) << '\n'
       << "generator " << (r.generator_id.empty() ? "-" : r.generator_id) << '\n'
       << "auc " << format_number(r.auc) << '\n'
       << "f1 " << format_number(r.f1) << '\n'
       << "f1_threshold " << format_number(r.f1_threshold) << '\n'
       << "f1_oracle " << format_number(r.f1_oracle) << '\n'
       << "pixels " << r.roc.positives << " forged " << r.roc.negatives << " pristine\n";
    for (const auto& im : r.per_image)
      os << "image " << im.name << " auc " << format_number(im.auc) << " best_f1 " << format_number(im.best_f1) << '\n';
    const auto idx = roc_sample_indices(r.roc.points.size(), max_roc_points);
    os << "roc " << idx.size() << " of " << r.roc.points.size() << '\n';
    for (auto i : idx) {
      const auto& p = r.roc.points[i];
      os << format_number(p.threshold) << ' ' << format_number(p.fpr) << ' ' << format_number(p.tpr) << '\n';
    }
  }
  return os.str();
}

/// Summary fields and ROC samples of a report written by format_reports.
struct ParsedCell {
  std::string method;
  int n_reference = 0;
  double auc = 0, f1 = 0, f1_oracle = 0;
  std::vector<std::pair<double, double>> roc;  // (fpr, tpr)
};

inline std::vector<ParsedCell> parse_reports(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("noiseprint-report 1", 0) != 0) throw format_error("not a metrics report");
  std::vector<ParsedCell> cells;
  while (std::getline(is, line)) {
    if (line == "[cell]") {
      cells.emplace_back();
      continue;
    }
    if (cells.empty() || line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto& c = cells.back();
    if (key == "method") ls >> c.method;
    else if (key == "n_reference") ls >> c.n_reference;
    else if (key == "auc") ls >> c.auc;
    else if (key == "f1") ls >> c.f1;
    else if (key == "f1_oracle") ls >> c.f1_oracle;
    else if (key == "roc") {
      std::size_t n = 0;
      ls >> n;
      for (std::size_t k = 0; k < n && std::getline(is, line); ++k) {
        std::istringstream ps(line);
        std::string t;
        double f = 0, tp = 0;
        ps >> t >> f >> tp;
        c.roc.emplace_back(f, tp);
      }
    }
  }
  return cells;
}

/// Plots ROC curves (one colour per cell) with the diagonal for reference.
inline void render_roc_png(std::span<const ParsedCell> cells, const std::filesystem::path& path, int size = 400) {
  const int margin = 30, plot = size - 2 * margin;
  RgbImage img{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size * 3, 255)};
  auto put = [&](int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= size || y >= size) return;
    std::copy(c.begin(), c.end(), img.rgb.begin() + 3 * (static_cast<std::ptrdiff_t>(y) * size + x));
  };
  auto line = [&](double fx0, double fy0, double fx1, double fy1, std::array<std::uint8_t, 3> c) {
    const double x0 = margin + fx0 * plot, y0 = margin + (1 - fy0) * plot;
    const double x1 = margin + fx1 * plot, y1 = margin + (1 - fy1) * plot;
    const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      put(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
    }
  };
  line(0, 0, 1, 0, {0, 0, 0});
  line(0, 0, 0, 1, {0, 0, 0});
  line(1, 0, 1, 1, {0, 0, 0});
  line(0, 1, 1, 1, {0, 0, 0});
  line(0, 0, 1, 1, {180, 180, 180});
  const std::array<std::uint8_t, 3> colours[] = {{220, 30, 30}, {30, 30, 220}, {30, 160, 30},
                                                 {200, 120, 0}, {140, 0, 160}, {0, 150, 150}};
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto& roc = cells[k].roc;
    for (std::size_t i = 1; i < roc.size(); ++i)
      line(roc[i - 1].first, roc[i - 1].second, roc[i].first, roc[i].second, colours[k % 6]);
  }
  write_png(path, img);
}

}  // namespace noiseprint
