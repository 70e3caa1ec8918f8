#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "noiseprint/common.hpp"

namespace noiseprint {

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t worst_block = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbations that crossed a non-differentiable point
};

/// Relative discrepancy with an absolute floor, so entries where both gradients are ~0 do not
/// dominate the report.
inline double relative_error(double analytic, double numeric, double abs_floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), abs_floor});
}

/// Compares analytic gradients against central differences of `loss` for every scalar in
/// `params` (each perturbed in place and restored). `analytic[b][i]` pairs with `params[b][i]`.
/// If `signature` is given it is read after every loss evaluation (typically a hash of the ReLU
/// activation pattern); coordinates whose perturbations change it are skipped, since the
/// difference quotient straddles a kink there.
template <class T>
GradCheckReport grad_check(std::span<const std::span<T>> params, const std::function<double()>& loss,
                           const std::vector<std::vector<double>>& analytic, double eps, double abs_floor = 1e-8,
                           const std::function<std::uint64_t()>& signature = {}) {
  require(params.size() == analytic.size(), "grad_check: block count mismatch");
  GradCheckReport rep;
  std::uint64_t base = 0;
  if (signature) {
    loss();
    base = signature();
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    require(params[b].size() == analytic[b].size(), "grad_check: block size mismatch");
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const T saved = params[b][i];
      params[b][i] = static_cast<T>(saved + eps);
      const double up = loss();
      const bool moved_up = signature && signature() != base;
      params[b][i] = static_cast<T>(saved - eps);
      const double down = loss();
      const bool moved_down = signature && signature() != base;
      params[b][i] = saved;
      if (moved_up || moved_down) {
        ++rep.skipped;
        continue;
      }
      const double numeric = (up - down) / (2 * eps);
      const double err = relative_error(analytic[b][i], numeric, abs_floor);
      ++rep.checked;
      if (err > rep.max_rel_error || rep.checked == 1) {
        rep.max_rel_error = err;
        rep.worst_block = b;
        rep.worst_index = i;
        rep.analytic = analytic[b][i];
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace noiseprint
