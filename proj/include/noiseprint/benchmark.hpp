#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "noiseprint/camera_sim.hpp"
#include "noiseprint/common.hpp"
#include "noiseprint/evaluation.hpp"
#include "noiseprint/fingerprint.hpp"
#include "noiseprint/localization.hpp"
#include "noiseprint/network.hpp"

namespace noiseprint {

enum class Method { noiseprint, prnu };

inline std::string to_string(Method m) { return m == Method::noiseprint ? "noiseprint" : "prnu"; }

inline Method parse_method(const std::string& s) {
  if (s == "noiseprint") return Method::noiseprint;
  if (s == "prnu") return Method::prnu;
  throw invalid_input("unknown method '" + s + "' (expected noiseprint or prnu)");
}

struct BenchmarkConfig {
  std::vector<Method> methods{Method::noiseprint, Method::prnu};
  std::vector<int> n_refs{50, 10, 1};
  WindowConfig window;
  WienerConfig wiener;
};

/// Residuals are computed at most once per image and method.
class ResidualCache {
 public:
  ResidualCache(const Dataset& ds, const Net* net, const WienerConfig& wiener) : ds_(ds), net_(net), wiener_(wiener) {}

  const Plane& get(Method m, std::size_t image) {
    auto& cache = m == Method::noiseprint ? np_ : prnu_;
    auto it = cache.find(image);
    if (it != cache.end()) return it->second;
    Plane r = m == Method::noiseprint ? extract_residual(ds_.images[image], *net_) : denoise_residual(ds_.images[image], wiener_);
    return cache.emplace(image, std::move(r)).first->second;
  }

 private:
  const Dataset& ds_;
  const Net* net_;
  WienerConfig wiener_;
  std::map<std::size_t, Plane> np_, prnu_;
};

/// Reference-image indices per device, in manifest order.
inline std::map<int, std::vector<std::size_t>> references_by_device(const Dataset& ds) {
  std::map<int, std::vector<std::size_t>> out;
  for (auto i : ds.indices(Role::reference)) out[ds.manifest.images[i].device_id].push_back(i);
  return out;
}

/// Heatmaps for every forged-test image (manifest order) using the first n_ref reference images
/// of the test image's device. Returns nullopt, with a warning, if some device has too few.
inline std::optional<std::vector<Heatmap>> benchmark_heatmaps(const Dataset& ds, Method method, int n_ref,
                                                              ResidualCache& cache, const BenchmarkConfig& cfg) {
  const auto refs = references_by_device(ds);
  const auto tests = ds.indices(Role::forged_test);
  std::map<int, Plane> fingerprint;
  for (auto t : tests) {
    const int dev = ds.manifest.images[t].device_id;
    if (fingerprint.count(dev)) continue;
    const auto it = refs.find(dev);
    const std::size_t have = it == refs.end() ? 0 : it->second.size();
    if (have < static_cast<std::size_t>(n_ref)) {
      warn("skipping " + to_string(method) + " with n_ref=" + std::to_string(n_ref) + ": device " + std::to_string(dev) +
           " has only " + std::to_string(have) + " reference images");
      return std::nullopt;
    }
    std::vector<Plane> residuals, images;
    for (int k = 0; k < n_ref; ++k) {
      const auto idx = it->second[static_cast<std::size_t>(k)];
      residuals.push_back(cache.get(method, idx));
      if (method == Method::prnu) images.push_back(ds.images[idx]);
    }
    fingerprint[dev] = method == Method::noiseprint ? average_planes(residuals)
                                                    : prnu_from_residuals(images, residuals, cfg.wiener.id()).k_hat;
  }
  std::vector<Heatmap> heat;
  for (auto t : tests) {
    const Plane& fp = fingerprint.at(ds.manifest.images[t].device_id);
    const Plane& res = cache.get(method, t);
    heat.push_back(method == Method::noiseprint ? noiseprint_heatmap(res, fp, cfg.window)
                                                : prnu_heatmap_from_residual(ds.images[t], res, fp, cfg.window));
  }
  return heat;
}

/// Every (method, n_ref) cell over the forged-test set, in configuration order.
inline std::vector<MetricsReport> run_benchmark(const Dataset& ds, const Net* net, const BenchmarkConfig& cfg) {
  const auto tests = ds.indices(Role::forged_test);
  require(!tests.empty(), "dataset has no forged-test images");
  for (auto m : cfg.methods)
    if (m == Method::noiseprint) require(net != nullptr, "noiseprint method needs network weights");
  std::vector<Mask> masks;
  std::vector<std::string> names;
  for (auto t : tests) {
    masks.push_back(ds.masks[t]);
    names.push_back(ds.manifest.images[t].path);
  }
  const std::string hash = manifest_hash(ds.manifest);
  ResidualCache cache(ds, net, cfg.wiener);
  std::vector<MetricsReport> out;
  for (auto m : cfg.methods)
    for (int n : cfg.n_refs) {
      auto heat = benchmark_heatmaps(ds, m, n, cache, cfg);
      if (!heat) continue;
      auto r = evaluate_heatmaps(to_string(m), n, *heat, masks, names);
      r.dataset_hash = hash;
      r.generator_id = m == Method::noiseprint ? net_id(*net) : cfg.wiener.id();
      out.push_back(std::move(r));
    }
  return out;
}

}  // namespace noiseprint
