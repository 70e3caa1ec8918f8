#include <gtest/gtest.h>

#include "noiseprint/camera_sim.hpp"
#include "noiseprint/evaluation.hpp"
#include "noiseprint/localization.hpp"
#include "test_util.hpp"

using namespace noiseprint;
using testutil::random_plane;

namespace {

double masked_mean(const Plane& p, const Mask& m, bool inside) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if ((m.data[i] != 0) == inside) {
      s += p.data[i];
      ++n;
    }
  return s / static_cast<double>(n);
}

}  // namespace

TEST(NoiseprintHeatmap, IdenticalInputsGiveZero) {
  const auto r = random_plane(80, 70, 1, -1, 1);
  for (float v : noiseprint_heatmap(r, r, {32, 8}).data) EXPECT_EQ(v, 0.f);
}

TEST(NoiseprintHeatmap, ConstantOffsetGivesItsSquare) {
  const Plane r(64, 48, 0.25f), ref(64, 48, 0.f);
  for (float v : noiseprint_heatmap(r, ref, {16, 4}).data) EXPECT_NEAR(v, 0.0625f, 1e-7);
}

TEST(NoiseprintHeatmap, SymmetricInArguments) {
  const auto a = random_plane(50, 60, 2), b = random_plane(50, 60, 3);
  EXPECT_EQ(noiseprint_heatmap(a, b, {20, 5}), noiseprint_heatmap(b, a, {20, 5}));
}

TEST(NoiseprintHeatmap, SizeMismatchNamesBothSizes) {
  try {
    noiseprint_heatmap(Plane(64, 64), Plane(64, 32));
    FAIL();
  } catch (const invalid_input& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("64x64"), std::string::npos);
    EXPECT_NE(msg.find("64x32"), std::string::npos);
  }
}

TEST(Windows, EveryPixelCovered) {
  for (auto [w, h, win, stride] : {std::array{100, 77, 32, 8}, {64, 64, 64, 8}, {65, 90, 17, 5}, {40, 40, 8, 8}}) {
    const auto cov = window_coverage(w, h, {win, stride});
    for (int v : cov.data) EXPECT_GE(v, 1);
  }
}

TEST(Windows, OversizedWindowRejected) {
  EXPECT_THROW(noiseprint_heatmap(Plane(32, 32), Plane(32, 32), {64, 8}), invalid_input);
  EXPECT_THROW(noiseprint_heatmap(Plane(32, 32), Plane(32, 32), {16, 0}), invalid_input);
}

TEST(Windows, MeanAggregationMatchesDirectAverage) {
  const auto a = random_plane(45, 38, 4), b = random_plane(45, 38, 5);
  const WindowConfig cfg{12, 5};
  const auto heat = noiseprint_heatmap(a, b, cfg);
  Plane sum(45, 38);
  const auto cov = window_coverage(45, 38, cfg);
  for (int y0 : cfg.origins(38))
    for (int x0 : cfg.origins(45)) {
      double s = 0;
      for (int y = y0; y < y0 + 12; ++y)
        for (int x = x0; x < x0 + 12; ++x) s += std::pow(double(a.at(x, y)) - b.at(x, y), 2);
      for (int y = y0; y < y0 + 12; ++y)
        for (int x = x0; x < x0 + 12; ++x) sum.at(x, y) += static_cast<float>(s / 144);
    }
  for (std::size_t i = 0; i < heat.size(); ++i) EXPECT_NEAR(heat.data[i], sum.data[i] / cov.data[i], 1e-5);
}

TEST(Windows, MaxAggregationIsUpperEnvelope) {
  const auto a = random_plane(40, 40, 6), b = random_plane(40, 40, 7);
  const auto mean = noiseprint_heatmap(a, b, {16, 4, Aggregation::mean});
  const auto mx = noiseprint_heatmap(a, b, {16, 4, Aggregation::max});
  for (std::size_t i = 0; i < mean.size(); ++i) EXPECT_GE(mx.data[i], mean.data[i] - 1e-6f);
}

TEST(Windows, StrideOneAndEightAgree) {
  const auto model = make_camera_model(0, 8, 0.02, 0, 8);
  const auto other = make_camera_model(1, 8, 0.02, 0, 9);
  Plane r = tiled_pattern(model, 128, 128);
  const auto b = tiled_pattern(other, 128, 128);
  const auto m = rectangle_mask(128, 128, 40, 30, 50, 60);
  for (std::size_t i = 0; i < r.size(); ++i)
    if (m.data[i]) r.data[i] = b.data[i];
  const auto ref = tiled_pattern(model, 128, 128);
  EXPECT_GT(correlation(noiseprint_heatmap(r, ref, {32, 1}), noiseprint_heatmap(r, ref, {32, 8})), 0.98);
}

TEST(PrnuHeatmap, ZeroVarianceWindowsScoreZero) {
  const Plane img(64, 64, 0.5f), k(64, 64, 0.f);
  for (float v : prnu_heatmap_from_residual(img, random_plane(64, 64, 10), k, {16, 8}).data) EXPECT_EQ(v, 0.f);
}

TEST(PrnuHeatmap, PerfectMatchScoresMinusOne) {
  const Plane img(48, 48, 0.5f);
  const auto k = random_plane(48, 48, 11, -0.02, 0.02);
  Plane w(48, 48);
  for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = 0.5f * k.data[i];
  for (float v : prnu_heatmap_from_residual(img, w, k, {16, 8}).data) EXPECT_NEAR(v, -1.f, 1e-5);
}

TEST(PrnuHeatmap, InpaintedWindowsAreUncorrelated) {
  const int S = 192, w = 64;
  const auto model = make_camera_model(0, 8, 0.015, 0, 12);
  const auto dev = make_device(0, 0, 0.02, S, S, 13);
  Rng rng(14);
  const auto img = acquire(render_scene(rng, S, S), model, dev, 0.01, 15);
  ForgerySpec spec;
  spec.kind = ForgeryKind::inpainting;
  spec.region = rectangle_mask(S, S, 32, 32, 128, 128);
  const auto forged = forge(img, spec).image;
  const auto residual = denoise_residual(forged);
  Plane ik(S, S);
  for (std::size_t i = 0; i < ik.size(); ++i) ik.data[i] = img.data[i] * dev.prnu.data[i];
  int inside = 0, small = 0;
  for (int y0 = 32; y0 + w <= 160; y0 += 16)
    for (int x0 = 32; x0 + w <= 160; x0 += 16) {
      ++inside;
      if (std::abs(window_correlation(residual, ik, x0, y0, w)) < 3.0 / w) ++small;
    }
  EXPECT_EQ(small, inside);
  EXPECT_GT(window_correlation(denoise_residual(img), ik, 64, 64, w), 3.0 / w);
}

TEST(Threshold, Extremes) {
  const auto h = random_plane(20, 20, 20);
  const auto all = threshold(h, -std::numeric_limits<double>::infinity());
  const auto none = threshold(h, std::numeric_limits<double>::infinity());
  const auto at_max = threshold(h, *std::max_element(h.data.begin(), h.data.end()));
  for (std::size_t i = 0; i < h.size(); ++i) {
    EXPECT_EQ(all.data[i], 1);
    EXPECT_EQ(none.data[i], 0);
    EXPECT_EQ(at_max.data[i], 0);
  }
  EXPECT_THROW(threshold(h, std::nan("")), invalid_input);
}

TEST(Threshold, SweepReproducesRocCounts) {
  Plane h(30, 30);
  Rng rng(21);
  std::uniform_int_distribution<int> level(0, 40);
  for (auto& v : h.data) v = static_cast<float>(level(rng)) / 40.f;
  const auto m = rectangle_mask(30, 30, 5, 5, 12, 9);
  const auto roc = roc_from_scores(h.data, m.data);
  for (const auto& p : roc.points) {
    const auto d = threshold(h, p.threshold);
    std::uint64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.data[i]) (m.data[i] ? tp : fp) += 1;
    EXPECT_EQ(tp, p.tp);
    EXPECT_EQ(fp, p.fp);
  }
}

TEST(Render, DimensionsPaletteAndSidecar) {
  const auto dir = testutil::temp_dir("render");
  const auto h = random_plane(37, 23, 30, -2, 5);
  const auto b = render_heatmap_png(h, dir / "h.png");
  const auto img = read_png(dir / "h.png");
  ASSERT_EQ(img.width, 37);
  ASSERT_EQ(img.height, 23);
  const auto& pal = heat_palette();
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& c = pal[static_cast<std::size_t>(palette_index(h.data[i], b))];
    for (int k = 0; k < 3; ++k) ASSERT_EQ(img.rgb[3 * i + k], c[k]);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "h.png.meta"));
  EXPECT_EQ(pal[0], (std::array<std::uint8_t, 3>{0, 0, 255}));
  EXPECT_EQ(pal[255], (std::array<std::uint8_t, 3>{255, 0, 0}));
}

TEST(Render, ConstantHeatmapIsMidColourWithWarning) {
  const auto dir = testutil::temp_dir("render_const");
  std::vector<std::string> warnings;
  ScopedWarningSink sink([&](std::string_view m) { warnings.emplace_back(m); });
  render_heatmap_png(Plane(10, 10, 3.f), dir / "c.png");
  EXPECT_EQ(warnings.size(), 1u);
  const auto img = read_png(dir / "c.png");
  const auto& mid = heat_palette()[128];
  for (std::size_t i = 0; i < 100; ++i)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(img.rgb[3 * i + k], mid[k]);
}

TEST(Render, SharedBoundsPreserveRankAcrossMaps) {
  const auto a = random_plane(16, 16, 31, 0, 1), b = random_plane(16, 16, 32, 0.5, 3);
  const auto ba = heatmap_bounds(a), bb = heatmap_bounds(b);
  const HeatmapBounds shared{std::min(ba.lo, bb.lo), std::max(ba.hi, bb.hi)};
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); j += 7)
      if (a.data[i] < b.data[j]) EXPECT_LE(palette_index(a.data[i], shared), palette_index(b.data[j], shared));
  EXPECT_THROW(render_heatmap_png(Plane(4, 4, std::numeric_limits<float>::infinity()), "/tmp/never.png"), invalid_input);
}

TEST(Separation, SplicedPatternRegionIsHotter) {
  const int S = 128;
  int separated = 0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    Rng rng(derive_seed(40, t));
    const auto host = make_camera_model(0, 8, 0.015, 0, derive_seed(41, t));
    const auto donor = make_camera_model(1, 8, 0.015, 0, derive_seed(42, t));
    std::uniform_int_distribution<int> size(40, 64), pos(1, S - 65);
    const auto m = rectangle_mask(S, S, pos(rng), pos(rng), size(rng), size(rng));
    Plane r = tiled_pattern(host, S, S);
    const auto d = tiled_pattern(donor, S, S);
    std::normal_distribution<double> n(0, 0.01);
    for (std::size_t i = 0; i < r.size(); ++i) r.data[i] = (m.data[i] ? d.data[i] : r.data[i]) + static_cast<float>(n(rng));
    const auto heat = noiseprint_heatmap(r, tiled_pattern(host, S, S), {32, 8});
    if (masked_mean(heat, m, true) > masked_mean(heat, m, false)) ++separated;
  }
  EXPECT_GE(separated, trials * 9 / 10);
}
