#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "noiseprint/common.hpp"
#include "noiseprint/filters.hpp"
#include "noiseprint/image_io.hpp"
#include "noiseprint/network.hpp"
#include "noiseprint/tensor.hpp"

namespace noiseprint {

struct NoiseprintReference {
  Plane mean_residual;
  int n_images = 0;
  std::string net_id;
};

struct PrnuReference {
  Plane k_hat;
  int n_images = 0;
  std::string denoiser_id;
};

/// Pixel-wise mean of equally sized planes, summed in double in input order.
inline Plane average_planes(std::span<const Plane> planes) {
  require(!planes.empty(), "cannot average an empty set of planes");
  const Plane& first = planes.front();
  std::vector<double> acc(first.size(), 0.0);
  for (const auto& p : planes) {
    require(p.same_size(first), "plane size " + p.size_str() + " differs from " + first.size_str());
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p.data[i];
  }
  Plane out(first.width, first.height);
  const double n = static_cast<double>(planes.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i] / n);
  return out;
}

/// Reference from already extracted residuals.
inline NoiseprintReference noiseprint_reference_from_residuals(std::span<const Plane> residuals, std::string net_id) {
  return {average_planes(residuals), static_cast<int>(residuals.size()), std::move(net_id)};
}

/// Averages the network residuals of pristine, aligned images of one camera.
template <class T>
NoiseprintReference estimate_noiseprint_reference(std::span<const Plane> images, const NoiseprintNet<T>& net) {
  require(!images.empty(), "noiseprint reference needs at least one image");
  std::vector<Plane> residuals;
  residuals.reserve(images.size());
  for (const auto& img : images) {
    require(img.same_size(images.front()), "reference image size " + img.size_str() + " differs from " +
                                               images.front().size_str());
    residuals.push_back(extract_residual(img, net));
  }
  return noiseprint_reference_from_residuals(residuals, net_id(net));
}

/// Local adaptive Wiener filter: per pixel, the signal variance is the smallest local variance
/// over the configured windows minus the noise variance.
struct WienerConfig {
  double noise_var = 9.0 / (255.0 * 255.0);
  std::vector<int> radii{1, 2, 3};  // 3x3, 5x5, 7x7

  std::string id() const {
    std::ostringstream os;
    os << "wiener-r";
    for (std::size_t i = 0; i < radii.size(); ++i) os << (i ? "," : "") << radii[i];
    os << "-var" << noise_var;
    return os.str();
  }
};

inline Plane wiener_denoise(const Plane& image, const WienerConfig& cfg = {}) {
  require(!cfg.radii.empty() && cfg.noise_var > 0, "invalid Wiener configuration");
  std::vector<LocalMoments> moments;
  for (int r : cfg.radii) moments.push_back(local_moments(image, r));
  Plane out(image.width, image.height);
  for (std::size_t i = 0; i < image.size(); ++i) {
    double sig = moments[0].variance.data[i];
    for (const auto& m : moments) sig = std::min(sig, double(m.variance.data[i]));
    const double signal = std::max(0.0, sig - cfg.noise_var);
    const double mu = moments[0].mean.data[i];
    out.data[i] = static_cast<float>(mu + signal / (signal + cfg.noise_var) * (image.data[i] - mu));
  }
  return out;
}

/// Noise residual W = I - F(I), with its global mean removed.
inline Plane denoise_residual(const Plane& image, const WienerConfig& cfg = {}) {
  const Plane f = wiener_denoise(image, cfg);
  Plane w(image.width, image.height);
  double mean = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w.data[i] = image.data[i] - f.data[i];
    mean += w.data[i];
  }
  mean /= static_cast<double>(w.size());
  for (auto& v : w.data) v = static_cast<float>(v - mean);
  return w;
}

/// Subtracts row means, then column means.
inline void zero_mean_rows_cols(Plane& p) {
  for (int y = 0; y < p.height; ++y) {
    double s = 0;
    for (int x = 0; x < p.width; ++x) s += p.at(x, y);
    const double m = s / p.width;
    for (int x = 0; x < p.width; ++x) p.at(x, y) = static_cast<float>(p.at(x, y) - m);
  }
  for (int x = 0; x < p.width; ++x) {
    double s = 0;
    for (int y = 0; y < p.height; ++y) s += p.at(x, y);
    const double m = s / p.height;
    for (int y = 0; y < p.height; ++y) p.at(x, y) = static_cast<float>(p.at(x, y) - m);
  }
}

/// PRNU estimate K = sum(W_i I_i) / sum(I_i^2) from precomputed residuals.
inline PrnuReference prnu_from_residuals(std::span<const Plane> images, std::span<const Plane> residuals,
                                         std::string denoiser_id) {
  require(!images.empty(), "PRNU estimation needs at least one image");
  require(images.size() == residuals.size(), "PRNU estimation: image/residual count mismatch");
  const Plane& first = images.front();
  std::vector<double> num(first.size(), 0.0), den(first.size(), 0.0);
  for (std::size_t k = 0; k < images.size(); ++k) {
    const auto& img = images[k];
    const auto& w = residuals[k];
    require(img.same_size(first) && w.same_size(first), "PRNU estimation: image size " + img.size_str() +
                                                            " differs from " + first.size_str());
    for (std::size_t i = 0; i < num.size(); ++i) {
      num[i] += double(w.data[i]) * img.data[i];
      den[i] += double(img.data[i]) * img.data[i];
    }
  }
  Plane k(first.width, first.height);
  for (std::size_t i = 0; i < num.size(); ++i) k.data[i] = den[i] > 0 ? static_cast<float>(num[i] / den[i]) : 0.f;
  zero_mean_rows_cols(k);
  return {std::move(k), static_cast<int>(images.size()), std::move(denoiser_id)};
}

inline PrnuReference estimate_prnu(std::span<const Plane> images, const WienerConfig& cfg = {}) {
  std::vector<Plane> residuals;
  residuals.reserve(images.size());
  for (const auto& img : images) residuals.push_back(denoise_residual(img, cfg));
  return prnu_from_residuals(images, residuals, cfg.id());
}

// ---------------------------------------------------------------------------------------------
// Reference files: a float plane plus "<path>.meta" with one "key value" pair per line.

struct ReferenceSidecar {
  std::string type;  // noiseprint | prnu
  int n_images = 0;
  std::string generator_id;  // network id or denoiser id
  std::string source_hash;   // manifest hash
  std::map<std::string, std::string> extra;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  auto s = p;
  s += ".meta";
  return s;
}

inline void save_reference(const std::filesystem::path& path, const Plane& plane, const ReferenceSidecar& meta) {
  write_float_plane(path, plane);
  detail::atomic_write(sidecar_path(path), [&](std::ostream& os) {
    os << "type " << meta.type << '\n'
       << "n_images " << meta.n_images << '\n'
       << (meta.type == "prnu" ? "denoiser " : "net ") << meta.generator_id << '\n'
       << "source " << meta.source_hash << '\n';
    for (const auto& [k, v] : meta.extra) os << k << ' ' << v << '\n';
  });
}

inline ReferenceSidecar load_sidecar(const std::filesystem::path& plane_path) {
  std::ifstream is(sidecar_path(plane_path));
  if (!is) throw format_error("missing reference sidecar " + sidecar_path(plane_path).string());
  ReferenceSidecar s;
  std::string key, value;
  while (is >> key) {
    std::getline(is >> std::ws, value);
    if (key == "type") s.type = value;
    else if (key == "n_images") s.n_images = std::stoi(value);
    else if (key == "net" || key == "denoiser") s.generator_id = value;
    else if (key == "source") s.source_hash = value;
    else s.extra[key] = value;
  }
  if (s.type != "noiseprint" && s.type != "prnu") throw format_error("reference sidecar has unknown type '" + s.type + "'");
  return s;
}

}  // namespace noiseprint
