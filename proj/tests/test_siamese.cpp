#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "noiseprint/gradcheck.hpp"
#include "noiseprint/siamese.hpp"
#include "test_util.hpp"

using namespace noiseprint;

namespace {

DatasetConfig tiny_config() {
  DatasetConfig c;
  c.n_models = 3;
  c.train_models = 2;
  c.devices_per_model = 2;
  c.images_per_device = 5;
  c.n_reference = 3;
  c.n_forged = 0;
  c.width = c.height = 64;
  c.region_min = 16;
  c.region_max = 24;
  return c;
}

std::vector<PatchSample> structured(int n_sets, int set_size) {
  std::vector<PatchSample> p;
  for (int s = 0; s < n_sets; ++s)
    for (int k = 0; k < set_size; ++k) p.push_back({s % 3, 0, static_cast<std::size_t>(k), 8 * s, 8 * (s / 3), {}});
  return p;
}

std::vector<double> oracle_distances(const std::vector<std::vector<double>>& r) {
  const std::size_t n = r.size();
  std::vector<double> d(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < r[i].size(); ++k) s += (r[i][k] - r[j][k]) * (r[i][k] - r[j][k]);
      d[i * n + j] = s / r[i].size();
    }
  return d;
}

}  // namespace

TEST(PairLabels, SingleSetOfTwo) {
  const auto l = make_pair_labels(structured(1, 2));
  int plus = 0;
  for (auto v : l.values) plus += v == 1;
  EXPECT_EQ(plus, 2);
  EXPECT_EQ(l(0, 1), 1);
  EXPECT_EQ(l(1, 0), 1);
  EXPECT_EQ(l(0, 0), 0);
  EXPECT_EQ(l.count(-1), 0u);
}

TEST(PairLabels, PaperBatchPairCounts) {
  const auto l = make_pair_labels(structured(50, 4));
  EXPECT_EQ(l.count(1) + l.count(-1), 19900u);
  EXPECT_EQ(l.count(1), 300u);
  for (int i = 0; i < l.n; ++i) {
    int pos = 0;
    for (int j = 0; j < l.n; ++j) pos += l(i, j) == 1;
    EXPECT_EQ(pos, 3);
  }
}

TEST(PairLabels, SameModelDifferentPositionIsNegative) {
  std::vector<PatchSample> p{{0, 0, 0, 0, 0, {}}, {0, 0, 1, 0, 0, {}}, {0, 0, 2, 8, 0, {}}, {0, 0, 3, 8, 0, {}}};
  const auto l = make_pair_labels(p);
  EXPECT_EQ(l(0, 1), 1);
  EXPECT_EQ(l(0, 2), -1);
  EXPECT_EQ(l(1, 3), -1);
  EXPECT_EQ(l(2, 3), 1);
  const auto ablation = make_pair_labels(p, false);
  EXPECT_EQ(ablation(0, 2), 1);
}

TEST(SampleMinibatch, HonoursSetStructure) {
  const auto ds = generate_dataset(tiny_config());
  const auto pool = make_pool(ds, Role::train);
  Rng rng(5);
  BatchSpec spec{6, 4, 16, 8};
  for (int rep = 0; rep < 20; ++rep) {
    const auto mb = sample_minibatch(pool, spec, rng);
    ASSERT_EQ(mb.patches.size(), 24u);
    for (int s = 0; s < 6; ++s) {
      std::set<std::size_t> imgs;
      for (int k = 0; k < 4; ++k) {
        const auto& p = mb.patches[s * 4 + k];
        const auto& first = mb.patches[s * 4];
        EXPECT_EQ(p.model_id, first.model_id);
        EXPECT_EQ(p.x, first.x);
        EXPECT_EQ(p.y, first.y);
        EXPECT_EQ(p.x % 8, 0);
        EXPECT_EQ(p.y % 8, 0);
        EXPECT_LE(p.x + 16, 64);
        imgs.insert(p.image_id);
        const auto& img = ds.images[p.image_id];
        EXPECT_EQ(ds.manifest.images[p.image_id].model_id, p.model_id);
        EXPECT_EQ(p.pixels[17], img.at(p.x + 1, p.y + 1));
      }
      EXPECT_EQ(imgs.size(), 4u);
    }
    // Label audit against the rule itself.
    for (int i = 0; i < 24; ++i)
      for (int j = 0; j < 24; ++j) {
        if (i == j) continue;
        const auto& a = mb.patches[i];
        const auto& b = mb.patches[j];
        EXPECT_EQ(mb.labels(i, j) == 1, a.model_id == b.model_id && a.x == b.x && a.y == b.y);
      }
  }
}

TEST(SampleMinibatch, DeterministicForSeed) {
  const auto ds = generate_dataset(tiny_config());
  const auto pool = make_pool(ds, Role::train);
  Rng a(9), b(9);
  const auto x = sample_minibatch(pool, BatchSpec{}, a), y = sample_minibatch(pool, BatchSpec{}, b);
  for (std::size_t i = 0; i < x.patches.size(); ++i) {
    EXPECT_EQ(x.patches[i].image_id, y.patches[i].image_id);
    EXPECT_EQ(x.patches[i].pixels, y.patches[i].pixels);
  }
}

TEST(SampleMinibatch, SmallModelsSkippedAndInfeasibleRejected) {
  const auto ds = generate_dataset(tiny_config());
  TrainingPool pool;
  for (auto i : ds.indices(Role::train)) {
    if (ds.manifest.images[i].model_id == 1 && pool.by_model()[1].size() >= 2) continue;
    pool.add(ds.images[i], ds.manifest.images[i].model_id, ds.manifest.images[i].device_id, i);
  }
  std::vector<std::string> warnings;
  ScopedWarningSink sink([&](std::string_view w) { warnings.emplace_back(w); });
  Rng rng(1);
  const auto mb = sample_minibatch(pool, BatchSpec{4, 4, 16, 8}, rng);
  for (const auto& p : mb.patches) EXPECT_EQ(p.model_id, 0);
  ASSERT_FALSE(warnings.empty());
  EXPECT_NE(warnings[0].find("model 1"), std::string::npos);
  EXPECT_THROW(sample_minibatch(pool, BatchSpec{4, 20, 16, 8}, rng), invalid_input);
}

TEST(PairwiseDistances, AnalyticCases) {
  std::vector<std::vector<float>> r{{0.1f, 0.2f, 0.3f, 0.4f}, {0.1f, 0.2f, 0.3f, 0.4f}, {0.35f, 0.45f, 0.55f, 0.65f}};
  const auto d = pairwise_sq_distances<float>(std::span<const std::vector<float>>(r));
  EXPECT_EQ(d[0 * 3 + 1], 0.0);
  EXPECT_NEAR(d[0 * 3 + 2], 0.0625, 1e-7);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(d[i * 3 + i], 0.0);
  std::vector<std::vector<float>> bad{{1, 2}, {1, 2, 3}};
  EXPECT_THROW(pairwise_sq_distances<float>(std::span<const std::vector<float>>(bad)), invalid_input);
}

TEST(PairwiseDistances, MatchesOracle) {
  std::vector<std::vector<double>> r;
  for (int i = 0; i < 3; ++i) r.push_back(testutil::random_tensor<double>({25}, 40 + i).values());
  const auto d = pairwise_sq_distances<double>(std::span<const std::vector<double>>(r));
  const auto o = oracle_distances(r);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d[i], o[i], 1e-12);
}

TEST(PairwiseDistances, BackwardMatchesFiniteDifferences) {
  auto data = testutil::random_tensor<double>({4 * 9}, 50).values();
  const auto w = testutil::random_tensor<double>({16}, 51).values();
  auto loss = [&] {
    const auto d = pairwise_sq_distances<double>(std::span<const double>(data), 4);
    double s = 0;
    for (std::size_t i = 0; i < 16; ++i) s += w[i] * d[i];
    return s;
  };
  const auto g = pairwise_sq_distances_backward<double>(std::span<const double>(data), 4, w);
  std::vector<std::span<double>> params{std::span<double>(data)};
  EXPECT_LT(grad_check<double>(params, loss, {g}, 1e-4).max_rel_error, 1e-6);
}

TEST(DblLoss, UniformDistancesGiveLogOfCandidates) {
  for (int m : {1, 2, 6}) {
    std::vector<PatchSample> p{{0, 0, 0, 0, 0, {}}, {0, 0, 1, 0, 0, {}}};
    for (int k = 0; k < m; ++k) p.push_back({1 + k, 0, 0, 8 * (k + 1), 0, {}});
    const auto labels = make_pair_labels(p);
    const int n = labels.n;
    std::vector<double> d(static_cast<std::size_t>(n) * n, 0.7);
    for (int i = 0; i < n; ++i) d[i * n + i] = 0;
    const auto r = dbl_loss(d, labels);
    EXPECT_EQ(r.anchors, 2u);  // only the two same-set patches have a positive partner
    EXPECT_NEAR(r.loss, std::log(m + 1.0), 1e-12);
  }
}

TEST(DblLoss, SeparatedDistancesApproachZero) {
  const auto labels = make_pair_labels(structured(3, 2));
  const int n = labels.n;
  std::vector<double> d(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) d[i * n + j] = i == j ? 0 : (labels(i, j) > 0 ? 0.0 : 60.0);
  EXPECT_LT(dbl_loss(d, labels).loss, 1e-20);
  EXPECT_GE(dbl_loss(d, labels).loss, 0.0);
}

TEST(DblLoss, NoPositivePairRejected) {
  std::vector<PatchSample> p{{0, 0, 0, 0, 0, {}}, {1, 0, 0, 0, 0, {}}};
  EXPECT_THROW(dbl_loss(std::vector<double>(4, 1.0), make_pair_labels(p)), invalid_input);
}

TEST(DblLoss, GradientIsSymmetricAndMatchesFiniteDifferences) {
  const auto labels = make_pair_labels(structured(2, 2));
  const int n = labels.n;
  auto d = testutil::random_tensor<double>({16}, 60, 0.1, 2.0).values();
  for (int i = 0; i < n; ++i) {
    d[i * n + i] = 0;
    for (int j = 0; j < i; ++j) d[i * n + j] = d[j * n + i];
  }
  for (double scale : {1.0, 7.5}) {
    const auto r = dbl_loss(d, labels, scale);
    for (int i = 0; i < n; ++i) {
      EXPECT_EQ(r.grad[i * n + i], 0.0);
      for (int j = 0; j < n; ++j) EXPECT_DOUBLE_EQ(r.grad[i * n + j], r.grad[j * n + i]);
    }
    // Perturb each unordered pair distance symmetrically.
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double eps = 1e-5, saved = d[i * n + j];
        d[i * n + j] = d[j * n + i] = saved + eps;
        const double up = dbl_loss(d, labels, scale).loss;
        d[i * n + j] = d[j * n + i] = saved - eps;
        const double down = dbl_loss(d, labels, scale).loss;
        d[i * n + j] = d[j * n + i] = saved;
        const double analytic = r.grad[i * n + j] + r.grad[j * n + i];
        EXPECT_LT(relative_error(analytic, (up - down) / (2 * eps), 1e-8), 1e-4) << i << "," << j;
      }
  }
}

TEST(DblLoss, MonotoneInPairDistances) {
  const auto labels = make_pair_labels(structured(4, 3));
  const int n = labels.n;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto d = testutil::random_tensor<double>({static_cast<std::size_t>(n * n)}, 70 + seed, 0.0, 3.0).values();
    for (int i = 0; i < n; ++i) {
      d[i * n + i] = 0;
      for (int j = 0; j < i; ++j) d[i * n + j] = d[j * n + i];
    }
    const double base = dbl_loss(d, labels).loss;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        auto e = d;
        const double delta = labels(i, j) > 0 ? -0.5 * d[i * n + j] : 0.5;
        e[i * n + j] = e[j * n + i] = d[i * n + j] + delta;
        EXPECT_LE(dbl_loss(e, labels).loss, base + 1e-12);
      }
  }
}

// Biases that feed batchnorm have an exactly zero gradient, so their numeric estimate is pure
// roundoff; the absolute floor keeps those entries from dominating the relative error.
TEST(SiameseChain, FullGradientMatchesFiniteDifferences) {
  using R = double;
  NoiseprintNet<R> net(NetArchitecture{4, 4, 3}, 80);
  Minibatch mb;
  mb.patches = structured(3, 2);
  for (std::size_t k = 0; k < mb.patches.size(); ++k) {
    const auto v = testutil::random_tensor<double>({256}, 90 + k, 0, 1).values();
    mb.patches[k].pixels.assign(v.begin(), v.end());
  }
  mb.labels = make_pair_labels(mb.patches);
  const double scale = 50.0;
  auto bg = siamese_batch_gradient(net, mb, 16, scale);
  std::vector<std::vector<double>> analytic;
  for (const auto& g : bg.grads) analytic.emplace_back(g.begin(), g.end());
  const auto x = batch_tensor<R>(mb.patches, 16);
  NoiseprintNet<R>::Cache cache;
  auto loss = [&] {
    const auto r = net.forward(x, BnMode::train, &cache);
    return dbl_loss(pairwise_sq_distances<R>(r.span(), mb.patches.size()), mb.labels, scale).loss;
  };
  const auto params = net.parameters();
  const auto rep = grad_check<R>(params, loss, analytic, 1e-5, 1e-4, [&] { return NoiseprintNet<R>::activation_signature(cache); });
  EXPECT_LT(rep.skipped, rep.checked / 20);
  EXPECT_LT(rep.max_rel_error, 1e-4) << "block " << rep.worst_block << " analytic " << rep.analytic << " numeric "
                                     << rep.numeric;
}

TEST(TrainSiamese, ZeroLearningRateLeavesWeightsUnchanged) {
  const auto ds = generate_dataset(tiny_config());
  const auto pool = make_pool(ds, Role::train);
  const Net net(NetArchitecture{3, 4, 3}, 3);
  TrainConfig cfg;
  cfg.batch = BatchSpec{3, 2, 16, 8};
  cfg.adam.learning_rate = 0;
  cfg.weight_decay = 0;
  cfg.iterations = 5;
  const auto res = train_siamese(pool, nullptr, net, cfg);
  ASSERT_FALSE(res.aborted);
  EXPECT_EQ(res.log.size(), 5u);
  auto a = const_cast<Net&>(res.net).parameters();
  auto b = const_cast<Net&>(net).parameters();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(std::equal(a[k].begin(), a[k].end(), b[k].begin()));
}

TEST(TrainSiamese, DeterministicAndLogged) {
  const auto ds = generate_dataset(tiny_config());
  const auto train = make_pool(ds, Role::train);
  const auto val = make_pool(ds, Role::reference);
  TrainConfig cfg;
  cfg.batch = BatchSpec{4, 2, 16, 8};
  cfg.adam.learning_rate = 1e-3;
  cfg.iterations = 6;
  cfg.validate_every = 3;
  cfg.validation_batches = 2;
  const auto dir = testutil::temp_dir("train");
  cfg.log_path = dir / "log.csv";
  const auto a = train_siamese(train, &val, Net(NetArchitecture{3, 4, 3}, 3), cfg);
  cfg.log_path.clear();
  const auto b = train_siamese(train, &val, Net(NetArchitecture{3, 4, 3}, 3), cfg);
  EXPECT_EQ(net_id(a.net), net_id(b.net));
  ASSERT_EQ(a.validation.size(), 3u);
  EXPECT_EQ(a.validation[0].iteration, 0);
  EXPECT_EQ(a.validation[2].iteration, 6);
  for (std::size_t k = 0; k < a.log.size(); ++k) EXPECT_EQ(a.log[k].loss, b.log[k].loss);
  const auto csv = read_text_file(dir / "log.csv");
  EXPECT_EQ(csv.rfind("iteration,loss,pos_mean,neg_mean,wall_time\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(TrainSiamese, EarliestBestCheckpointWinsTies) {
  const auto ds = generate_dataset(tiny_config());
  const auto train = make_pool(ds, Role::train);
  const auto val = make_pool(ds, Role::reference);
  TrainConfig cfg;
  cfg.batch = BatchSpec{3, 2, 16, 8};
  cfg.adam.learning_rate = 0;
  cfg.weight_decay = 0;
  cfg.iterations = 4;
  cfg.validate_every = 2;
  cfg.validation_batches = 1;
  const auto res = train_siamese(train, &val, Net(NetArchitecture{3, 4, 3}, 3), cfg);
  ASSERT_EQ(res.validation.size(), 3u);
  EXPECT_EQ(res.best_iteration, 0);
}

TEST(TrainSiamese, NonFiniteLossAbortsWithLastGoodWeights) {
  auto ds = generate_dataset(tiny_config());
  const auto pool_ok = make_pool(ds, Role::train);
  const Net start(NetArchitecture{3, 4, 3}, 3);
  for (auto i : ds.indices(Role::train))
    for (auto& v : ds.images[i].data) v = std::numeric_limits<float>::infinity();
  TrainConfig cfg;
  cfg.batch = BatchSpec{3, 2, 16, 8};
  cfg.iterations = 3;
  std::vector<std::string> warnings;
  ScopedWarningSink sink([&](std::string_view w) { warnings.emplace_back(w); });
  const auto res = train_siamese(pool_ok, nullptr, start, cfg);
  EXPECT_TRUE(res.aborted);
  EXPECT_NE(res.abort_reason.find("iteration 1"), std::string::npos) << res.abort_reason;
  EXPECT_EQ(net_id(res.net), net_id(start));
  EXPECT_FALSE(warnings.empty());
}

TEST(TrainSiamese, CheckpointResumeContinuesTheRun) {
  const auto ds = generate_dataset(tiny_config());
  const auto pool = make_pool(ds, Role::train);
  TrainConfig cfg;
  cfg.batch = BatchSpec{3, 2, 16, 8};
  cfg.adam.learning_rate = 1e-3;
  cfg.iterations = 4;
  const auto whole = train_siamese(pool, nullptr, Net(NetArchitecture{3, 4, 3}, 5), cfg);

  cfg.iterations = 2;
  const auto first = train_siamese(pool, nullptr, Net(NetArchitecture{3, 4, 3}, 5), cfg);
  std::ostringstream os;
  write_container(os, checkpoint_container(first.final_net, first.optimizer, 2));
  std::istringstream is(os.str());
  auto cp = checkpoint_from_container(read_container(is));
  EXPECT_EQ(cp.iteration, 2);
  EXPECT_EQ(cp.adam.t, 2);
  EXPECT_EQ(net_id(cp.net), net_id(first.final_net));
  cfg.first_iteration = 3;
  cfg.resume_optimizer = cp.adam;
  const auto second = train_siamese(pool, nullptr, cp.net, cfg);
  ASSERT_EQ(second.log.front().iteration, 3);
  EXPECT_EQ(second.best_iteration, 4);

  EXPECT_EQ(net_id(second.net), net_id(whole.net));
  EXPECT_EQ(second.optimizer.m, whole.optimizer.m);
  EXPECT_EQ(second.optimizer.v, whole.optimizer.v);
}

TEST(TrainSiamese, CheckpointWithoutOptimizerRejected) {
  EXPECT_THROW(checkpoint_from_container(to_container(Net(NetArchitecture{3, 4, 3}, 6))), format_error);
}
