#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "noiseprint/adam.hpp"
#include "noiseprint/camera_sim.hpp"
#include "noiseprint/common.hpp"
#include "noiseprint/network.hpp"
#include "noiseprint/tensor.hpp"

namespace noiseprint {

struct PretrainConfig {
  double noise_sigma = 0.04;
  int iterations = 500;
  int batch = 16;
  int patch = 32;
  AdamConfig adam{1e-3};
  std::uint64_t seed = 1;
  std::function<void(int, double)> progress;
};

struct PretrainResult {
  Net net;
  std::vector<double> losses;  // per iteration, mean squared error against the true noise
};

/// Clean synthetic scenes for denoiser training.
inline std::vector<Plane> render_scenes(int count, int width, int height, std::uint64_t seed) {
  std::vector<Plane> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, 0x5ce, i));
    out.push_back(render_scene(rng, width, height));
  }
  return out;
}

/// Residual learning on additive white Gaussian noise: the network is trained to output the
/// noise it is given, so image - net(image) is the denoised image.
inline PretrainResult pretrain_denoiser(std::span<const Plane> scenes, Net net, const PretrainConfig& cfg) {
  require(!scenes.empty(), "pretraining needs at least one scene");
  require(cfg.noise_sigma >= 0, "noise sigma must be non-negative");
  require(cfg.batch >= 1 && cfg.patch >= 1 && cfg.iterations >= 0, "invalid pretraining configuration");
  for (const auto& s : scenes)
    require(s.width >= cfg.patch && s.height >= cfg.patch, "scene " + s.size_str() + " is smaller than the patch");
  PretrainResult res;
  AdamState adam(cfg.adam);
  const auto P = static_cast<std::size_t>(cfg.patch);
  for (int it = 1; it <= cfg.iterations; ++it) {
    Rng rng(derive_seed(cfg.seed, 0x9e7, it));
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    Tensor<float> x({1, static_cast<std::size_t>(cfg.batch), P, P});
    std::vector<float> target(x.size());
    std::size_t o = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      const Plane& s = scenes[std::uniform_int_distribution<std::size_t>(0, scenes.size() - 1)(rng)];
      const int x0 = std::uniform_int_distribution<int>(0, s.width - cfg.patch)(rng);
      const int y0 = std::uniform_int_distribution<int>(0, s.height - cfg.patch)(rng);
      for (int y = y0; y < y0 + cfg.patch; ++y)
        for (int xx = x0; xx < x0 + cfg.patch; ++xx, ++o) {
          const double n = cfg.noise_sigma > 0 ? noise(rng) : 0.0;
          target[o] = static_cast<float>(n);
          x.data()[o] = static_cast<float>(s.at(xx, y) + n);
        }
    }
    Net::Cache cache;
    const auto r = net.forward(x, BnMode::train, &cache);
    double loss = 0;
    Tensor<float> g(r.shape());
    const double inv = 1.0 / static_cast<double>(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double d = double(r.data()[i]) - target[i];
      loss += d * d;
      g.data()[i] = static_cast<float>(2.0 * d * inv);
    }
    loss *= inv;
    if (!std::isfinite(loss))
      throw std::runtime_error("denoiser pretraining diverged at iteration " + std::to_string(it) + " (loss " +
                               std::to_string(loss) + ", previous " +
                               (res.losses.empty() ? std::string("none") : std::to_string(res.losses.back())) + ")");
    res.losses.push_back(loss);
    auto grads = net.backward(g, cache);
    std::vector<std::span<const float>> gs(grads.begin(), grads.end());
    adam_step<float>(net.parameters(), gs, adam);
    if (cfg.progress) cfg.progress(it, loss);
  }
  res.net = std::move(net);
  return res;
}

inline double mse(const Plane& a, const Plane& b) {
  require(a.same_size(b), "MSE of planes with different sizes");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a.data[i]) - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

inline double psnr(const Plane& a, const Plane& b) { return 10.0 * std::log10(1.0 / mse(a, b)); }

/// Image minus the network's noise estimate.
inline Plane denoise(const Plane& noisy, const Net& net) {
  const Plane r = extract_residual(noisy, net);
  Plane out(noisy.width, noisy.height);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = noisy.data[i] - r.data[i];
  return out;
}

struct DenoiseEvaluation {
  double noisy_mse = 0;
  double denoised_mse = 0;
  double noisy_psnr = 0;
  double denoised_psnr = 0;
};

/// Averages over `scenes` with fresh noise of the given sigma.
inline DenoiseEvaluation evaluate_denoiser(std::span<const Plane> scenes, const Net& net, double sigma, std::uint64_t seed) {
  require(!scenes.empty(), "no evaluation scenes");
  DenoiseEvaluation e;
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    Rng rng(derive_seed(seed, k));
    std::normal_distribution<double> noise(0.0, sigma);
    Plane noisy = scenes[k];
    for (auto& v : noisy.data) v = static_cast<float>(v + noise(rng));
    const Plane den = denoise(noisy, net);
    e.noisy_mse += mse(noisy, scenes[k]);
    e.denoised_mse += mse(den, scenes[k]);
    e.noisy_psnr += psnr(noisy, scenes[k]);
    e.denoised_psnr += psnr(den, scenes[k]);
  }
  const double n = static_cast<double>(scenes.size());
  e.noisy_mse /= n;
  e.denoised_mse /= n;
  e.noisy_psnr /= n;
  e.denoised_psnr /= n;
  return e;
}

}  // namespace noiseprint
