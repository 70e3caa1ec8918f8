#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "noiseprint/adam.hpp"
#include "noiseprint/camera_sim.hpp"
#include "noiseprint/common.hpp"
#include "noiseprint/network.hpp"
#include "noiseprint/tensor.hpp"

namespace noiseprint {

/// Structure of one training minibatch: n_sets sets of set_size patches, each set taken from
/// distinct images of one camera model at one shared position.
struct BatchSpec {
  int n_sets = 16;
  int set_size = 4;
  int patch = 32;
  int position_modulus = 8;
  int models_per_batch = 0;  // 0: every set draws its model independently
  bool same_position = true;  // false labels every same-model pair positive (ablation)

  int total() const { return n_sets * set_size; }

  void validate() const {
    require(n_sets >= 1 && set_size >= 2, "batch needs at least one set of two patches");
    require(patch >= 1 && position_modulus >= 1 && models_per_batch >= 0, "invalid batch geometry");
  }
};

struct PatchSample {
  int model_id = 0;
  int device_id = 0;
  std::size_t image_id = 0;
  int x = 0;
  int y = 0;
  std::vector<float> pixels;  // patch x patch, row-major
};

/// Symmetric +1/-1 labels over a batch; the diagonal is 0 and never used.
struct PairLabels {
  int n = 0;
  std::vector<std::int8_t> values;

  explicit PairLabels(int size = 0) : n(size), values(static_cast<std::size_t>(size) * size, 0) {}
  std::int8_t operator()(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
  std::int8_t& operator()(int i, int j) { return values[static_cast<std::size_t>(i) * n + j]; }

  std::size_t count(std::int8_t label) const {
    std::size_t c = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) c += (*this)(i, j) == label;
    return c;
  }
};

inline PairLabels make_pair_labels(std::span<const PatchSample> patches, bool same_position = true) {
  const int n = static_cast<int>(patches.size());
  PairLabels l(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto& a = patches[i];
      const auto& b = patches[j];
      const bool pos = a.model_id == b.model_id && (!same_position || (a.x == b.x && a.y == b.y));
      l(i, j) = pos ? 1 : -1;
    }
  return l;
}

/// Images available for sampling, grouped by camera model. All images must share one size.
struct TrainingPool {
  std::vector<const Plane*> images;
  std::vector<int> model_ids;
  std::vector<int> device_ids;
  std::vector<std::size_t> image_ids;

  void add(const Plane& img, int model, int device, std::size_t id) {
    if (!images.empty())
      require(img.same_size(*images.front()), "training pool image " + img.size_str() + " differs from " +
                                                  images.front()->size_str());
    images.push_back(&img);
    model_ids.push_back(model);
    device_ids.push_back(device);
    image_ids.push_back(id);
  }

  std::map<int, std::vector<std::size_t>> by_model() const {
    std::map<int, std::vector<std::size_t>> g;
    for (std::size_t i = 0; i < images.size(); ++i) g[model_ids[i]].push_back(i);
    return g;
  }
};

inline TrainingPool make_pool(const Dataset& ds, Role role) {
  TrainingPool pool;
  for (auto i : ds.indices(role)) pool.add(ds.images[i], ds.manifest.images[i].model_id, ds.manifest.images[i].device_id, i);
  return pool;
}

struct Minibatch {
  std::vector<PatchSample> patches;
  PairLabels labels;
};

inline Minibatch sample_minibatch(const TrainingPool& pool, const BatchSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<int> eligible;
  for (const auto& [model, imgs] : pool.by_model()) {
    if (static_cast<int>(imgs.size()) >= spec.set_size) eligible.push_back(model);
    else
      warn("model " + std::to_string(model) + " has " + std::to_string(imgs.size()) + " images, fewer than set size " +
           std::to_string(spec.set_size) + "; skipped");
  }
  require(!eligible.empty(), "minibatch infeasible: no camera model has " + std::to_string(spec.set_size) + " images");
  const Plane& ref = *pool.images.front();
  require(ref.width >= spec.patch && ref.height >= spec.patch, "patch size exceeds the pool images");
  const int nx = (ref.width - spec.patch) / spec.position_modulus + 1;
  const int ny = (ref.height - spec.patch) / spec.position_modulus + 1;

  if (spec.models_per_batch > 0 && spec.models_per_batch < static_cast<int>(eligible.size())) {
    std::shuffle(eligible.begin(), eligible.end(), rng);
    eligible.resize(static_cast<std::size_t>(spec.models_per_batch));
    std::sort(eligible.begin(), eligible.end());
  }
  const auto groups = pool.by_model();
  Minibatch mb;
  for (int s = 0; s < spec.n_sets; ++s) {
    const int model = eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng)];
    auto imgs = groups.at(model);
    const int x = spec.position_modulus * std::uniform_int_distribution<int>(0, nx - 1)(rng);
    const int y = spec.position_modulus * std::uniform_int_distribution<int>(0, ny - 1)(rng);
    // Partial Fisher-Yates: the first set_size entries become a uniform sample without replacement.
    for (int k = 0; k < spec.set_size; ++k) {
      const auto j = std::uniform_int_distribution<std::size_t>(static_cast<std::size_t>(k), imgs.size() - 1)(rng);
      std::swap(imgs[static_cast<std::size_t>(k)], imgs[j]);
      const std::size_t idx = imgs[static_cast<std::size_t>(k)];
      const Plane& img = *pool.images[idx];
      PatchSample p{model, pool.device_ids[idx], pool.image_ids[idx], x, y, {}};
      p.pixels.reserve(static_cast<std::size_t>(spec.patch) * spec.patch);
      for (int py = y; py < y + spec.patch; ++py)
        for (int px = x; px < x + spec.patch; ++px) p.pixels.push_back(img.at(px, py));
      mb.patches.push_back(std::move(p));
    }
  }
  mb.labels = make_pair_labels(mb.patches, spec.same_position);
  return mb;
}

/// Stacks patches into a [1, N, P, P] network input.
template <class T>
Tensor<T> batch_tensor(std::span<const PatchSample> patches, int patch) {
  Tensor<T> t({1, patches.size(), static_cast<std::size_t>(patch), static_cast<std::size_t>(patch)});
  std::size_t o = 0;
  for (const auto& p : patches) {
    require(p.pixels.size() == static_cast<std::size_t>(patch) * patch, "patch has the wrong pixel count");
    for (float v : p.pixels) t.data()[o++] = static_cast<T>(v);
  }
  return t;
}

/// Symmetric n x n matrix of per-pixel mean squared differences; `data` holds n rows of m values.
template <class T>
std::vector<double> pairwise_sq_distances(std::span<const T> data, std::size_t n) {
  require(n > 0 && data.size() % n == 0, "residual batch has " + std::to_string(data.size()) +
                                             " values, not a multiple of " + std::to_string(n) + " patches");
  const std::size_t m = data.size() / n;
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const T* a = data.data() + i * m;
      const T* b = data.data() + j * m;
      double s = 0;
      for (std::size_t k = 0; k < m; ++k) {
        const double diff = double(a[k]) - double(b[k]);
        s += diff * diff;
      }
      d[i * n + j] = d[j * n + i] = s / static_cast<double>(m);
    }
  return d;
}

template <class T>
std::vector<double> pairwise_sq_distances(std::span<const std::vector<T>> residuals) {
  require(!residuals.empty(), "no residuals");
  std::vector<T> flat;
  for (const auto& r : residuals) {
    require(r.size() == residuals.front().size(), "residual shapes differ");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return pairwise_sq_distances<T>(std::span<const T>(flat), residuals.size());
}

/// Backpropagates dL/dD (entries treated as independent) to the residuals.
template <class T>
std::vector<T> pairwise_sq_distances_backward(std::span<const T> data, std::size_t n, std::span<const double> grad_d) {
  const std::size_t m = data.size() / n;
  std::vector<double> g(data.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double c = 2.0 * (grad_d[i * n + j] + grad_d[j * n + i]) / static_cast<double>(m);
      if (c == 0) continue;
      const T* a = data.data() + i * m;
      const T* b = data.data() + j * m;
      double* ga = g.data() + i * m;
      double* gb = g.data() + j * m;
      for (std::size_t k = 0; k < m; ++k) {
        const double v = c * (double(a[k]) - double(b[k]));
        ga[k] += v;
        gb[k] -= v;
      }
    }
  return std::vector<T>(g.begin(), g.end());
}

struct DblResult {
  double loss = 0;
  // dL/dD, n x n, symmetric, zero diagonal. The derivative with respect to the distance of an
  // unordered pair {i, j} is grad(i, j) + grad(j, i).
  std::vector<double> grad;
  std::size_t anchors = 0;
};

/// Distance-based logistic loss in per-anchor softmax form: for every anchor i with a positive
/// partner, L_i = -log(sum_pos exp(-s d_ij) / sum_{j != i} exp(-s d_ij)); the loss is the mean
/// over such anchors. `scale` is the temperature s.
inline DblResult dbl_loss(std::span<const double> d, const PairLabels& labels, double scale = 1.0) {
  const int n = labels.n;
  require(d.size() == static_cast<std::size_t>(n) * n, "distance matrix does not match the label matrix");
  require(scale > 0, "distance scale must be positive");
  DblResult r;
  r.grad.assign(d.size(), 0.0);
  std::vector<double> g_row(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double lo = std::numeric_limits<double>::infinity();
    bool has_pos = false;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      lo = std::min(lo, scale * d[static_cast<std::size_t>(i) * n + j]);
      has_pos |= labels(i, j) > 0;
    }
    if (!has_pos) continue;
    double zp = 0, za = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double e = std::exp(-(scale * d[static_cast<std::size_t>(i) * n + j] - lo));
      za += e;
      if (labels(i, j) > 0) zp += e;
    }
    r.loss += std::log(za) - std::log(zp);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double e = std::exp(-(scale * d[static_cast<std::size_t>(i) * n + j] - lo));
      g_row[j] = scale * ((labels(i, j) > 0 ? e / zp : 0.0) - e / za);
    }
    for (int j = 0; j < n; ++j)
      if (j != i) {
        // Distances are symmetric: the anchor's sensitivity lands on both (i, j) and (j, i).
        r.grad[static_cast<std::size_t>(i) * n + j] += g_row[j] / 2;
        r.grad[static_cast<std::size_t>(j) * n + i] += g_row[j] / 2;
      }
    ++r.anchors;
  }
  require(r.anchors > 0, "batch has no positive pair");
  const double inv = 1.0 / static_cast<double>(r.anchors);
  r.loss *= inv;
  for (auto& g : r.grad) g *= inv;
  return r;
}

struct PairStats {
  double pos_mean = 0;
  double neg_mean = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline PairStats pair_stats(std::span<const double> d, const PairLabels& labels) {
  PairStats s;
  for (int i = 0; i < labels.n; ++i)
    for (int j = i + 1; j < labels.n; ++j) {
      const double v = d[static_cast<std::size_t>(i) * labels.n + j];
      if (labels(i, j) > 0) {
        s.pos_mean += v;
        ++s.positives;
      } else {
        s.neg_mean += v;
        ++s.negatives;
      }
    }
  if (s.positives) s.pos_mean /= static_cast<double>(s.positives);
  if (s.negatives) s.neg_mean /= static_cast<double>(s.negatives);
  return s;
}

/// Loss and parameter gradients for one batch, through the network in training mode.
template <class T>
struct BatchGradient {
  DblResult dbl;
  PairStats stats;
  std::vector<std::vector<T>> grads;
};

template <class T>
BatchGradient<T> siamese_batch_gradient(NoiseprintNet<T>& net, const Minibatch& mb, int patch, double scale) {
  const auto x = batch_tensor<T>(mb.patches, patch);
  typename NoiseprintNet<T>::Cache cache;
  const auto r = net.forward(x, BnMode::train, &cache);
  const std::size_t n = mb.patches.size();
  const auto d = pairwise_sq_distances<T>(r.span(), n);
  BatchGradient<T> out;
  out.dbl = dbl_loss(d, mb.labels, scale);
  out.stats = pair_stats(d, mb.labels);
  auto gr = pairwise_sq_distances_backward<T>(r.span(), n, out.dbl.grad);
  Tensor<T> grad_r(r.shape());
  std::copy(gr.begin(), gr.end(), grad_r.data());
  out.grads = net.backward(grad_r, cache);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  BatchSpec batch;
  AdamConfig adam;
  int iterations = 2000;
  double weight_decay = 1e-5;  // L2 on convolution weights
  double distance_scale = 1.0;
  int validate_every = 100;
  int validation_batches = 8;
  std::uint64_t seed = 1;
  std::filesystem::path log_path;  // CSV; empty disables
  std::function<void(int, double)> progress;
  int first_iteration = 1;                 // > 1 when continuing from a checkpoint
  std::optional<AdamState> resume_optimizer;
};

struct TrainLogEntry {
  int iteration = 0;
  double loss = 0;
  double pos_mean = 0;
  double neg_mean = 0;
  double wall_time = 0;
};

struct ValidationRecord {
  int iteration = 0;
  double pos_mean = 0;
  double neg_mean = 0;
  double ratio = 0;  // pos_mean / neg_mean; lower separates better
};

struct TrainResult {
  Net net;  // best-validation weights (final weights when there is no validation pool)
  std::vector<TrainLogEntry> log;
  std::vector<ValidationRecord> validation;
  int best_iteration = 0;
  bool aborted = false;
  std::string abort_reason;
  Net final_net;        // weights after the last completed iteration
  AdamState optimizer;  // moments matching final_net
};

/// Positive/negative mean distances of inference-mode residuals over fixed batches.
inline ValidationRecord validate_separation(const Net& net, std::span<const Minibatch> batches, int patch) {
  double ps = 0, ns = 0;
  std::size_t pc = 0, nc = 0;
  for (const auto& mb : batches) {
    const auto r = net.infer(batch_tensor<float>(mb.patches, patch));
    const auto d = pairwise_sq_distances<float>(r.span(), mb.patches.size());
    const auto s = pair_stats(d, mb.labels);
    ps += s.pos_mean * s.positives;
    ns += s.neg_mean * s.negatives;
    pc += s.positives;
    nc += s.negatives;
  }
  ValidationRecord v;
  v.pos_mean = pc ? ps / pc : 0;
  v.neg_mean = nc ? ns / nc : 0;
  v.ratio = v.neg_mean > 0 ? v.pos_mean / v.neg_mean : std::numeric_limits<double>::infinity();
  return v;
}

inline std::vector<Minibatch> fixed_batches(const TrainingPool& pool, const BatchSpec& spec, int count, std::uint64_t seed) {
  std::vector<Minibatch> out;
  for (int k = 0; k < count; ++k) {
    Rng rng(derive_seed(seed, k));
    out.push_back(sample_minibatch(pool, spec, rng));
  }
  return out;
}

/// ADAM training of `net` with the DBL loss. Each iteration's batch is drawn from its own
/// derived seed. On a non-finite loss or gradient training stops and the last finite weights
/// are returned with `aborted` set.
inline TrainResult train_siamese(const TrainingPool& train, const TrainingPool* validation, Net net, const TrainConfig& cfg) {
  require(cfg.iterations >= 0, "iteration count must be non-negative");
  require(cfg.weight_decay >= 0, "weight decay must be non-negative");
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw format_error("cannot write training log " + cfg.log_path.string());
    log << "iteration,loss,pos_mean,neg_mean,wall_time\n";
    log.precision(9);
  }

  std::vector<Minibatch> val_batches;
  if (validation && !validation->images.empty())
    val_batches = fixed_batches(*validation, cfg.batch, cfg.validation_batches, derive_seed(cfg.seed, 0xba1));

  TrainResult res;
  require(cfg.first_iteration >= 1, "first iteration must be at least 1");
  AdamState adam = cfg.resume_optimizer ? *cfg.resume_optimizer : AdamState(cfg.adam);
  const int last_iteration = cfg.first_iteration + cfg.iterations - 1;
  double best_ratio = std::numeric_limits<double>::infinity();
  auto check_validation = [&](int it) {
    if (val_batches.empty()) return;
    auto v = validate_separation(net, val_batches, cfg.batch.patch);
    v.iteration = it;
    res.validation.push_back(v);
    if (v.ratio < best_ratio) {
      best_ratio = v.ratio;
      res.best_iteration = it;
      res.net = net;
    }
  };
  check_validation(cfg.first_iteration - 1);

  Net last_good = net;
  AdamState good_adam = adam;
  for (int it = cfg.first_iteration; it <= last_iteration; ++it) {
    Rng rng(derive_seed(cfg.seed, 0x5a3, it));
    const auto mb = sample_minibatch(train, cfg.batch, rng);
    auto bg = siamese_batch_gradient(net, mb, cfg.batch.patch, cfg.distance_scale);
    if (!std::isfinite(bg.dbl.loss)) {
      res.aborted = true;
      res.abort_reason = "non-finite loss at iteration " + std::to_string(it);
      break;
    }
    auto params = net.parameters();
    if (cfg.weight_decay > 0) {
      // Conv weights lead each layer's parameter group.
      std::size_t b = 0;
      for (int layer = 0; layer < net.depth(); ++layer) {
        auto w = params[b];
        auto& g = bg.grads[b];
        for (std::size_t k = 0; k < w.size(); ++k) g[k] += static_cast<float>(cfg.weight_decay * w[k]);
        b += net.is_middle(layer) ? 4 : 2;
      }
    }
    std::vector<std::span<const float>> grads(bg.grads.begin(), bg.grads.end());
    try {
      adam_step<float>(params, grads, adam);
    } catch (const invalid_input& e) {
      res.aborted = true;
      res.abort_reason = std::string("iteration ") + std::to_string(it) + ": " + e.what();
      break;
    }
    if (!std::all_of(params.begin(), params.end(), [](auto s) {
          return std::all_of(s.begin(), s.end(), [](float v) { return std::isfinite(v); });
        })) {
      res.aborted = true;
      res.abort_reason = "non-finite weights after iteration " + std::to_string(it);
      break;
    }
    last_good = net;
    good_adam = adam;
    const TrainLogEntry e{it, bg.dbl.loss, bg.stats.pos_mean, bg.stats.neg_mean, elapsed()};
    res.log.push_back(e);
    if (log) log << e.iteration << ',' << e.loss << ',' << e.pos_mean << ',' << e.neg_mean << ',' << e.wall_time << '\n';
    if (cfg.progress) cfg.progress(it, e.loss);
    if (cfg.validate_every > 0 && (it % cfg.validate_every == 0 || it == last_iteration)) check_validation(it);
  }
  res.final_net = last_good;
  res.optimizer = good_adam;
  if (res.aborted) {
    warn("training aborted: " + res.abort_reason);
    res.net = last_good;
    res.best_iteration = res.log.empty() ? cfg.first_iteration - 1 : res.log.back().iteration;
  } else if (val_batches.empty()) {
    res.net = net;
    res.best_iteration = last_iteration;
  }
  return res;
}

namespace detail {

// A double split into three float32 words whose sum reproduces it exactly.
inline void split_doubles(const std::vector<double>& x, std::vector<float> parts[3]) {
  for (int p = 0; p < 3; ++p) parts[p].resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double r = x[i];
    for (int p = 0; p < 3; ++p) {
      parts[p][i] = static_cast<float>(r);
      r -= parts[p][i];
    }
  }
}

}  // namespace detail

/// Weights plus ADAM moments, so a run can be continued bit-for-bit.
inline WeightsContainer checkpoint_container(const Net& net, const AdamState& adam, int iteration) {
  auto c = to_container(net);
  std::ostringstream os;
  os.precision(17);
  os << "optimizer adam t " << adam.t << " lr " << adam.config.learning_rate << " beta1 " << adam.config.beta1 << " beta2 "
     << adam.config.beta2 << " epsilon " << adam.config.epsilon;
  c.meta.push_back(os.str());
  c.meta.push_back("iteration " + std::to_string(iteration));
  for (std::size_t k = 0; k < adam.m.size(); ++k)
    for (const char* which : {"m", "v"}) {
      std::vector<float> parts[3];
      detail::split_doubles(which[0] == 'm' ? adam.m[k] : adam.v[k], parts);
      for (int p = 0; p < 3; ++p)
        c.arrays.push_back({"adam." + std::string(which) + "." + std::to_string(k) + "." + std::to_string(p),
                            {parts[p].size()}, std::move(parts[p])});
    }
  return c;
}

struct Checkpoint {
  Net net;
  AdamState adam;
  int iteration = 0;
};

inline Checkpoint checkpoint_from_container(const WeightsContainer& c) {
  Checkpoint cp{net_from_container<float>(c), {}, 0};
  std::istringstream is(c.meta_value("optimizer"));
  std::string name, k_t, k_lr, k_b1, k_b2, k_eps;
  if (!(is >> name >> k_t >> cp.adam.t >> k_lr >> cp.adam.config.learning_rate >> k_b1 >> cp.adam.config.beta1 >> k_b2 >>
        cp.adam.config.beta2 >> k_eps >> cp.adam.config.epsilon) ||
      name != "adam")
    throw format_error("checkpoint lacks a valid optimizer line");
  const auto it = c.meta_value("iteration");
  if (it.empty()) throw format_error("checkpoint lacks an iteration line");
  cp.iteration = std::stoi(it);
  if (cp.adam.t > 0) {
    const auto params = cp.net.parameters();
    auto joined = [&](const std::string& base, std::size_t n) {
      std::vector<double> x(n, 0.0);
      for (int p = 0; p < 3; ++p) {
        const auto& part = c.get(base + "." + std::to_string(p));
        if (part.data.size() != n) throw format_error("checkpoint array " + base + " does not match the network");
        for (std::size_t i = 0; i < n; ++i) x[i] += part.data[i];
      }
      return x;
    };
    for (std::size_t k = 0; k < params.size(); ++k) {
      cp.adam.m.push_back(joined("adam.m." + std::to_string(k), params[k].size()));
      cp.adam.v.push_back(joined("adam.v." + std::to_string(k), params[k].size()));
    }
  }
  return cp;
}

}  // namespace noiseprint
