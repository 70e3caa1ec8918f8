#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "noiseprint/common.hpp"
#include "noiseprint/filters.hpp"
#include "noiseprint/image_io.hpp"
#include "noiseprint/manifest.hpp"
#include "noiseprint/tensor.hpp"

namespace noiseprint {

/// A camera model: a zero-mean, unit-std tileable A x A texture scaled by `alpha`, plus the
/// strength of the 8x8 block quantisation applied after acquisition.
struct CameraModelSpec {
  int model_id = 0;
  int period = 8;
  double alpha = 0.015;
  double block_q = 0;
  std::uint64_t seed = 0;
  Plane pattern;  // period x period, zero mean, unit std
};

inline CameraModelSpec make_camera_model(int model_id, int period, double alpha, double block_q, std::uint64_t seed) {
  require(period >= 1 && period <= 64, "pattern period must be in [1, 64]");
  require(alpha >= 0 && block_q >= 0, "pattern amplitude and quantisation strength must be non-negative");
  CameraModelSpec m{model_id, period, alpha, block_q, seed, Plane(period, period)};
  if (period == 1) return m;  // a constant tile is zero after mean removal
  Rng rng(derive_seed(seed, 0x7a7));
  std::normal_distribution<double> n01;
  for (auto& v : m.pattern.data) v = static_cast<float>(n01(rng));
  const double mu = plane_mean(m.pattern);
  double ss = 0;
  for (auto& v : m.pattern.data) {
    v = static_cast<float>(v - mu);
    ss += double(v) * v;
  }
  const double sd = std::sqrt(ss / static_cast<double>(m.pattern.size()));
  for (auto& v : m.pattern.data) v = static_cast<float>(v / sd);
  return m;
}

/// alpha * pattern tiled over a w x h frame, phase anchored at the origin.
inline Plane tiled_pattern(const CameraModelSpec& m, int w, int h) {
  Plane p(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) p.at(x, y) = static_cast<float>(m.alpha * m.pattern.at(x % m.period, y % m.period));
  return p;
}

/// A physical device: per-pixel multiplicative PRNU factor K ~ N(0, sigma_k^2), fixed per device.
struct DeviceSpec {
  int device_id = 0;
  int model_id = 0;
  double sigma_k = 0.02;
  std::uint64_t seed = 0;
  Plane prnu;
};

inline DeviceSpec make_device(int device_id, int model_id, double sigma_k, int w, int h, std::uint64_t seed) {
  require(sigma_k >= 0, "PRNU strength must be non-negative");
  DeviceSpec d{device_id, model_id, sigma_k, seed, Plane(w, h)};
  Rng rng(derive_seed(seed, 0x9c1));
  std::normal_distribution<double> n01;
  for (auto& v : d.prnu.data) v = static_cast<float>(sigma_k * n01(rng));
  return d;
}

namespace detail {

inline double smoothstep(double t) { return t * t * (3 - 2 * t); }

// Value noise on a lattice of `cell` pixels with smoothstep interpolation.
inline void add_value_noise(Plane& p, Rng& rng, int cell, double amplitude) {
  const int gw = (p.width + cell - 1) / cell + 2, gh = (p.height + cell - 1) / cell + 2;
  std::normal_distribution<double> n01;
  std::vector<double> g(static_cast<std::size_t>(gw) * gh);
  for (auto& v : g) v = n01(rng);
  std::uniform_real_distribution<double> off(0, cell);
  const double ox = off(rng), oy = off(rng);
  for (int y = 0; y < p.height; ++y) {
    const double fy = (y + oy) / cell;
    const int iy = static_cast<int>(fy);
    const double ty = smoothstep(fy - iy);
    for (int x = 0; x < p.width; ++x) {
      const double fx = (x + ox) / cell;
      const int ix = static_cast<int>(fx);
      const double tx = smoothstep(fx - ix);
      auto at = [&](int i, int j) { return g[static_cast<std::size_t>(j) * gw + i]; };
      const double top = at(ix, iy) * (1 - tx) + at(ix + 1, iy) * tx;
      const double bot = at(ix, iy + 1) * (1 - tx) + at(ix + 1, iy + 1) * tx;
      p.at(x, y) += static_cast<float>(amplitude * (top * (1 - ty) + bot * ty));
    }
  }
}

}  // namespace detail

/// Synthetic scene content in [0, 1]: a smooth ramp, multi-octave value noise and a few
/// hard-edged shapes. Dynamic range is stretched to at least 0.35 and the mean kept in [0.25, 0.75].
inline Plane render_scene(Rng& rng, int width, int height) {
  require(width >= 64 && height >= 64, "scenes must be at least 64x64");
  std::uniform_real_distribution<double> u01;
  Plane p(width, height, static_cast<float>(0.35 + 0.3 * u01(rng)));
  const double theta = 2 * M_PI * u01(rng), ramp = 0.05 + 0.2 * u01(rng);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      p.at(x, y) += static_cast<float>(ramp * ((x / double(width) - 0.5) * std::cos(theta) +
                                               (y / double(height) - 0.5) * std::sin(theta)));
  const double texture = 0.5 + u01(rng);
  const std::pair<int, double> octaves[] = {{64, 0.10}, {32, 0.06}, {16, 0.035}, {8, 0.02}, {4, 0.01}};
  for (auto [cell, amp] : octaves) detail::add_value_noise(p, rng, cell, amp * texture);

  const int shapes = static_cast<int>(u01(rng) * 4);
  for (int s = 0; s < shapes; ++s) {
    const double cx = u01(rng) * width, cy = u01(rng) * height;
    const double rx = 8 + u01(rng) * width / 4.0, ry = 8 + u01(rng) * height / 4.0;
    const double delta = (u01(rng) < 0.5 ? -1 : 1) * (0.08 + 0.17 * u01(rng));
    const bool disk = u01(rng) < 0.5;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        const bool inside = disk ? dx * dx + dy * dy <= 1 : std::abs(dx) <= 1 && std::abs(dy) <= 1;
        if (inside) p.at(x, y) += static_cast<float>(delta);
      }
  }

  auto [lo, hi] = std::minmax_element(p.data.begin(), p.data.end());
  const double mean = plane_mean(p), range = *hi - *lo;
  if (range < 0.35 && range > 0)
    for (auto& v : p.data) v = static_cast<float>(mean + (v - mean) * 0.35 / range);
  const double shift = std::clamp(mean, 0.25, 0.75) - mean;
  for (auto& v : p.data) v = static_cast<float>(std::clamp(v + shift, 0.0, 1.0));
  return p;
}

/// Rounds each 8x8 block onto a lattice of step q anchored at the block mean, then restores
/// the block mean exactly. q = 0 is a no-op.
inline void block_quantize(Plane& img, double q) {
  if (q <= 0) return;
  for (int by = 0; by < img.height; by += 8)
    for (int bx = 0; bx < img.width; bx += 8) {
      const int x1 = std::min(bx + 8, img.width), y1 = std::min(by + 8, img.height);
      const double n = (x1 - bx) * (y1 - by);
      double mu = 0;
      for (int y = by; y < y1; ++y)
        for (int x = bx; x < x1; ++x) mu += img.at(x, y);
      mu /= n;
      double mu2 = 0;
      for (int y = by; y < y1; ++y)
        for (int x = bx; x < x1; ++x) {
          float& v = img.at(x, y);
          v = static_cast<float>(mu + q * std::nearbyint((v - mu) / q));
          mu2 += v;
        }
      const double fix = mu - mu2 / n;
      for (int y = by; y < y1; ++y)
        for (int x = bx; x < x1; ++x) img.at(x, y) = static_cast<float>(std::clamp(img.at(x, y) + fix, 0.0, 1.0));
    }
}

/// I = clip(scene * (1 + K) + alpha * pattern + N(0, sigma_n^2), 0, 1), then block quantisation.
inline Plane acquire(const Plane& scene, const CameraModelSpec& model, const DeviceSpec& device, double sigma_n,
                     std::uint64_t noise_seed) {
  require(scene.same_size(device.prnu), "scene " + scene.size_str() + " does not match device sensor " +
                                            device.prnu.size_str());
  require(device.model_id == model.model_id, "device belongs to a different camera model");
  Rng rng(noise_seed);
  std::normal_distribution<double> n01;
  Plane img(scene.width, scene.height);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      double v = scene.at(x, y) * (1.0 + device.prnu.at(x, y));
      v += model.alpha * model.pattern.at(x % model.period, y % model.period);
      if (sigma_n > 0) v += sigma_n * n01(rng);
      img.at(x, y) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  block_quantize(img, model.block_q);
  return img;
}

// ---------------------------------------------------------------------------------------------
// Forgeries

struct ForgerySpec {
  ForgeryKind kind = ForgeryKind::splicing;
  Mask region;
  int donor_device = -1;  // splicing: informational
  int dx = 0, dy = 0;     // splicing/copymove: forged(p) = source(p - d)
  int smoothing_radius = 8;
};

struct ForgeryResult {
  Plane image;
  Mask mask;
};

inline Mask rectangle_mask(int w, int h, int x0, int y0, int rw, int rh) {
  Mask m(w, h);
  for (int y = std::max(0, y0); y < std::min(h, y0 + rh); ++y)
    for (int x = std::max(0, x0); x < std::min(w, x0 + rw); ++x) m.at(x, y) = 1;
  return m;
}

inline Mask ellipse_mask(int w, int h, int x0, int y0, int rw, int rh) {
  Mask m(w, h);
  const double cx = x0 + (rw - 1) / 2.0, cy = y0 + (rh - 1) / 2.0;
  for (int y = std::max(0, y0); y < std::min(h, y0 + rh); ++y)
    for (int x = std::max(0, x0); x < std::min(w, x0 + rw); ++x) {
      const double ex = (x - cx) / (rw / 2.0), ey = (y - cy) / (rh / 2.0);
      if (ex * ex + ey * ey <= 1.0) m.at(x, y) = 1;
    }
  return m;
}

namespace detail {

// Fills masked pixels by repeated normalised box filtering from the known surround, then
// smooths the filled area; the result carries neither pattern nor PRNU.
inline Plane inpaint(const Plane& img, const Mask& mask, int r) {
  Plane out = img;
  Plane known(img.width, img.height);
  for (std::size_t i = 0; i < img.size(); ++i) known.data[i] = mask.data[i] ? 0.f : 1.f;
  bool pending = true;
  while (pending) {
    Plane weighted(img.width, img.height);
    for (std::size_t i = 0; i < img.size(); ++i) weighted.data[i] = out.data[i] * known.data[i];
    const IntegralImage num(weighted), den(known);
    pending = false;
    Plane next_known = known;
    for (int y = 0; y < img.height; ++y) {
      const int y0 = std::max(0, y - r), y1 = std::min(img.height, y + r + 1);
      for (int x = 0; x < img.width; ++x) {
        if (known.at(x, y) > 0) continue;
        const int x0 = std::max(0, x - r), x1 = std::min(img.width, x + r + 1);
        const double d = den.sum(x0, y0, x1, y1);
        if (d > 0) {
          out.at(x, y) = static_cast<float>(num.sum(x0, y0, x1, y1) / d);
          next_known.at(x, y) = 1;
        } else {
          pending = true;
        }
      }
    }
    known = std::move(next_known);
  }
  for (int pass = 0; pass < 3; ++pass) {
    const Plane smooth = box_mean(out, r);
    for (std::size_t i = 0; i < out.size(); ++i)
      if (mask.data[i]) out.data[i] = smooth.data[i];
  }
  return out;
}

}  // namespace detail

/// Applies a forgery. Pixels outside the mask are copied bit-for-bit from `target`.
inline ForgeryResult forge(const Plane& target, const ForgerySpec& spec, const Plane* donor = nullptr) {
  const Mask& m = spec.region;
  require(m.same_size(target), "forgery mask " + m.size_str() + " does not match image " + target.size_str());
  bool any = false;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      any = true;
      require(x > 0 && y > 0 && x < m.width - 1 && y < m.height - 1, "forgery region touches the image border");
      if (spec.kind == ForgeryKind::splicing || spec.kind == ForgeryKind::copymove) {
        const int sx = x - spec.dx, sy = y - spec.dy;
        require(sx >= 0 && sy >= 0 && sx < m.width && sy < m.height, "forgery source region is out of bounds");
      }
    }
  require(any, "forgery mask is empty");

  ForgeryResult r{target, m};
  switch (spec.kind) {
    case ForgeryKind::splicing: {
      require(donor != nullptr, "splicing needs a donor image");
      require(donor->same_size(target), "donor image " + donor->size_str() + " does not match target " + target.size_str());
      for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
          if (m.at(x, y)) r.image.at(x, y) = donor->at(x - spec.dx, y - spec.dy);
      break;
    }
    case ForgeryKind::copymove:
      for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
          if (m.at(x, y)) r.image.at(x, y) = target.at(x - spec.dx, y - spec.dy);
      break;
    case ForgeryKind::inpainting:
      require(spec.smoothing_radius >= 1, "inpainting radius must be positive");
      r.image = detail::inpaint(target, m, spec.smoothing_radius);
      break;
    case ForgeryKind::none:
      throw invalid_input("forgery kind must be splicing, copymove or inpainting");
  }
  return r;
}

// ---------------------------------------------------------------------------------------------
// Dataset generation

struct DatasetConfig {
  int n_models = 6;
  int train_models = 4;
  int devices_per_model = 2;
  int images_per_device = 60;
  int n_reference = 50;  // per held-out device; the remainder becomes validation
  int n_forged = 50;
  int width = 256;
  int height = 256;
  double sigma_k = 0.02;
  double alpha = 0.015;
  double sigma_n = 0.01;
  double block_q = 0.01;        // "weak" quantisation, applied to every other model
  std::vector<int> periods{4, 8};  // assigned round-robin over models
  int region_min = 48;
  int region_max = 112;
  std::uint64_t seed = 1;

  void validate() const {
    require(n_models >= 2 && train_models >= 1 && train_models < n_models, "need at least one train and one held-out model");
    require(devices_per_model >= 1 && images_per_device >= 1, "device and image counts must be positive");
    require(n_reference >= 1 && n_reference <= images_per_device, "n_reference must be in [1, images_per_device]");
    require(n_forged >= 0, "n_forged must be non-negative");
    require(width >= 64 && height >= 64, "images must be at least 64x64");
    require(!periods.empty(), "at least one pattern period is required");
    require(region_min >= 8 && region_max >= region_min && region_max * 2 < std::min(width, height),
            "forgery region size range does not fit the image");
  }
};

/// A fully materialised dataset: specs, images and masks parallel to `manifest.images`.
struct Dataset {
  Manifest manifest;
  std::vector<CameraModelSpec> models;
  std::vector<DeviceSpec> devices;
  std::vector<Plane> images;
  std::vector<Mask> masks;

  const CameraModelSpec& model(int id) const {
    for (const auto& m : models)
      if (m.model_id == id) return m;
    throw invalid_input("unknown model " + std::to_string(id));
  }
  const DeviceSpec& device(int id) const {
    for (const auto& d : devices)
      if (d.device_id == id) return d;
    throw invalid_input("unknown device " + std::to_string(id));
  }
  std::vector<std::size_t> indices(Role r) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.images.size(); ++i)
      if (manifest.images[i].role == r) out.push_back(i);
    return out;
  }
};

namespace detail {

inline std::string indexed_name(const std::string& prefix, int a, int b, int idx) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s/m%d_d%d_%03d.pgm", prefix.c_str(), a, b, idx);
  return buf;
}

inline std::string numbered(const std::string& prefix, int idx, const char* suffix) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s%03d%s", prefix.c_str(), idx, suffix);
  return buf;
}

inline Mask random_region(Rng& rng, const DatasetConfig& c, int& x0, int& y0, int& rw, int& rh) {
  std::uniform_int_distribution<int> size(c.region_min, c.region_max);
  rw = size(rng);
  rh = size(rng);
  std::uniform_int_distribution<int> px(1, c.width - rw - 1), py(1, c.height - rh - 1);
  x0 = px(rng);
  y0 = py(rng);
  return std::uniform_real_distribution<double>()(rng) < 0.5 ? rectangle_mask(c.width, c.height, x0, y0, rw, rh)
                                                              : ellipse_mask(c.width, c.height, x0, y0, rw, rh);
}

}  // namespace detail

inline std::vector<std::pair<std::string, std::string>> dataset_settings(const DatasetConfig& c) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  std::string periods;
  for (std::size_t i = 0; i < c.periods.size(); ++i) periods += (i ? "," : "") + std::to_string(c.periods[i]);
  return {{"width", std::to_string(c.width)},       {"height", std::to_string(c.height)},
          {"sigma_n", num(c.sigma_n)},              {"sigma_k", num(c.sigma_k)},
          {"alpha", num(c.alpha)},                  {"block_q", num(c.block_q)},
          {"periods", periods},                     {"n_reference", std::to_string(c.n_reference)},
          {"n_forged", std::to_string(c.n_forged)}, {"seed", std::to_string(c.seed)},
          {"luminance", "0.299,0.587,0.114"}};
}

/// Generates every model, device, image and forgery described by `c`. Train models' devices
/// only get the train role; held-out devices get reference, validation and test images.
inline Dataset generate_dataset(const DatasetConfig& c) {
  c.validate();
  Dataset ds;
  ds.manifest.settings = dataset_settings(c);
  int dev_id = 0;
  for (int m = 0; m < c.n_models; ++m) {
    const int period = c.periods[static_cast<std::size_t>(m) % c.periods.size()];
    const double q = (m % 2 == 1) ? c.block_q : 0.0;
    const auto mseed = derive_seed(c.seed, 1, m);
    ds.models.push_back(make_camera_model(m, period, c.alpha, q, mseed));
    ds.manifest.models.push_back({m, period, c.alpha, q, mseed, m >= c.train_models});
    for (int d = 0; d < c.devices_per_model; ++d, ++dev_id) {
      const auto dseed = derive_seed(c.seed, 2, dev_id);
      ds.devices.push_back(make_device(dev_id, m, c.sigma_k, c.width, c.height, dseed));
      ds.manifest.devices.push_back({dev_id, m, c.sigma_k, dseed});
    }
  }

  auto shoot = [&](const DeviceSpec& dev, std::uint64_t seed) {
    Rng scene_rng(derive_seed(seed, 10));
    const Plane scene = render_scene(scene_rng, c.width, c.height);
    return acquire(scene, ds.model(dev.model_id), dev, c.sigma_n, derive_seed(seed, 11));
  };
  auto add = [&](ImageRecord rec, Plane img, Mask mask = {}) {
    quantize_like_pgm(img, 16);
    ds.manifest.images.push_back(std::move(rec));
    ds.images.push_back(std::move(img));
    ds.masks.push_back(std::move(mask));
  };

  std::vector<const DeviceSpec*> held_out;
  for (const auto& dev : ds.devices) {
    const bool train = dev.model_id < c.train_models;
    if (!train) held_out.push_back(&dev);
    for (int i = 0; i < c.images_per_device; ++i) {
      const auto seed = derive_seed(c.seed, 3, dev.device_id, i);
      const Role role = train ? Role::train : (i < c.n_reference ? Role::reference : Role::validation);
      add({detail::indexed_name("images", dev.model_id, dev.device_id, i), role, dev.model_id, dev.device_id, seed, {},
           ForgeryKind::none, {}},
          shoot(dev, seed));
    }
  }

  const ForgeryKind kinds[] = {ForgeryKind::splicing, ForgeryKind::copymove, ForgeryKind::inpainting};
  for (int k = 0; k < c.n_forged; ++k) {
    const DeviceSpec& dev = *held_out[static_cast<std::size_t>(k) % held_out.size()];
    const auto seed = derive_seed(c.seed, 4, k);
    Rng rng(derive_seed(seed, 20));
    Plane target = shoot(dev, seed);
    ForgerySpec spec;
    spec.kind = kinds[k % 3];
    int x0, y0, rw, rh;
    spec.region = detail::random_region(rng, c, x0, y0, rw, rh);
    Plane donor;
    if (spec.kind == ForgeryKind::splicing) {
      std::vector<const DeviceSpec*> others;
      for (const auto& d : ds.devices)
        if (d.model_id != dev.model_id) others.push_back(&d);
      const DeviceSpec& dd = *others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
      spec.donor_device = dd.device_id;
      donor = shoot(dd, derive_seed(seed, 21));
      const int sx = std::uniform_int_distribution<int>(0, c.width - rw)(rng);
      const int sy = std::uniform_int_distribution<int>(0, c.height - rh)(rng);
      spec.dx = x0 - sx;
      spec.dy = y0 - sy;
    } else if (spec.kind == ForgeryKind::copymove) {
      for (int attempt = 0;; ++attempt) {
        const int sx = std::uniform_int_distribution<int>(0, c.width - rw)(rng);
        const int sy = std::uniform_int_distribution<int>(0, c.height - rh)(rng);
        if (std::abs(x0 - sx) >= rw / 2 || std::abs(y0 - sy) >= rh / 2 || attempt > 100) {
          spec.dx = x0 - sx;
          spec.dy = y0 - sy;
          break;
        }
      }
    }
    auto forged = forge(target, spec, spec.kind == ForgeryKind::splicing ? &donor : nullptr);
    const std::string src = detail::numbered("tests/t", k, ".pgm");
    add({src, Role::pristine_test, dev.model_id, dev.device_id, seed, {}, ForgeryKind::none, {}}, std::move(target));
    add({detail::numbered("forged/f", k, ".pgm"), Role::forged_test, dev.model_id, dev.device_id, seed,
         detail::numbered("masks/f", k, "_mask.pgm"), spec.kind, src},
        std::move(forged.image), std::move(forged.mask));
  }
  ds.manifest.check_camera_disjointness();
  return ds;
}

/// Writes images (16-bit PGM), masks (8-bit PGM) and manifest.txt under `dir`.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const char* sub : {"images", "tests", "forged", "masks"}) fs::create_directories(dir / sub);
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& rec = ds.manifest.images[i];
    write_pgm(dir / rec.path, ds.images[i], 16);
    if (!rec.mask_path.empty()) write_mask_pgm(dir / rec.mask_path, ds.masks[i]);
  }
  save_manifest(dir / "manifest.txt", ds.manifest);
}

inline int setting_int(const Manifest& m, const std::string& key) {
  const auto v = m.setting(key);
  if (v.empty()) throw format_error("manifest lacks setting '" + key + "'");
  return std::stoi(v);
}

/// Loads a dataset written by write_dataset; model and device specs are regenerated from their seeds.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.manifest = load_manifest(manifest_path);
  const int w = setting_int(ds.manifest, "width"), h = setting_int(ds.manifest, "height");
  for (const auto& m : ds.manifest.models) ds.models.push_back(make_camera_model(m.model_id, m.period, m.alpha, m.block_q, m.seed));
  for (const auto& d : ds.manifest.devices) ds.devices.push_back(make_device(d.device_id, d.model_id, d.sigma_k, w, h, d.seed));
  for (const auto& rec : ds.manifest.images) {
    ds.images.push_back(read_image(ds.manifest.resolve(rec.path)));
    ds.masks.push_back(rec.mask_path.empty() ? Mask{} : read_mask_pgm(ds.manifest.resolve(rec.mask_path)));
  }
  return ds;
}

}  // namespace noiseprint
