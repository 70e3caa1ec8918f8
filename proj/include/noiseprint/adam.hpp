#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "noiseprint/common.hpp"

namespace noiseprint {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for a list of parameter blocks; zero-initialised on first use.
struct AdamState {
  AdamConfig config;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  AdamState() = default;
  explicit AdamState(AdamConfig c) : config(c) {}
};

/// One bias-corrected ADAM update over all parameter blocks. Throws before touching any
/// parameter if a gradient is non-finite.
template <class T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads, AdamState& state) {
  require(params.size() == grads.size(), "adam_step: parameter/gradient block count mismatch");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t b = 0; b < params.size(); ++b) {
      state.m[b].assign(params[b].size(), 0.0);
      state.v[b].assign(params[b].size(), 0.0);
    }
  }
  require(state.m.size() == params.size(), "adam_step: optimizer state has a different block count");
  for (std::size_t b = 0; b < params.size(); ++b) {
    require(params[b].size() == grads[b].size() && state.m[b].size() == params[b].size(),
            "adam_step: shape mismatch in parameter block " + std::to_string(b));
    for (std::size_t i = 0; i < grads[b].size(); ++i)
      if (!std::isfinite(static_cast<double>(grads[b][i])))
        throw invalid_input("adam_step: non-finite gradient in block " + std::to_string(b) + " at index " +
                            std::to_string(i));
  }

  const auto& c = state.config;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.m[b];
    auto& v = state.v[b];
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = grads[b][i];
      m[i] = c.beta1 * m[i] + (1 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1 - c.beta2) * g * g;
      const double step = c.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.epsilon);
      params[b][i] = static_cast<T>(params[b][i] - step);
    }
  }
}

}  // namespace noiseprint
