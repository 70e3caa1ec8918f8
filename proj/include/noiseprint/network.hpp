#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "noiseprint/common.hpp"
#include "noiseprint/container.hpp"
#include "noiseprint/layers.hpp"
#include "noiseprint/tensor.hpp"

namespace noiseprint {

/// DnCNN-style stack: conv+ReLU, (depth-2) x conv+BN+ReLU, linear conv. Single channel in and out.
struct NetArchitecture {
  int depth = 8;
  int width = 16;
  int kernel = 3;

  int receptive_field() const { return depth * (kernel - 1) + 1; }
  /// Pixels of context on each side that influence one output pixel.
  int halo() const { return depth * (kernel - 1) / 2; }

  void validate() const {
    require(depth >= 2, "network depth must be at least 2, got " + std::to_string(depth));
    require(width >= 1, "network width must be positive");
    require(kernel >= 1 && kernel % 2 == 1, "kernel size must be odd");
  }

  friend bool operator==(const NetArchitecture&, const NetArchitecture&) = default;
};

template <class T>
class NoiseprintNet {
 public:
  struct Cache {
    std::vector<Tensor<T>> conv_inputs;
    std::vector<Tensor<T>> pre_relu;
    std::vector<BatchNormCache<T>> bn;
  };

  NoiseprintNet() = default;

  /// He-initialised weights (normal, std sqrt(2 / fan_in)), zero biases, identity batchnorm.
  NoiseprintNet(const NetArchitecture& arch, std::uint64_t seed) : arch_(arch) {
    arch.validate();
    Rng rng(seed);
    for (int i = 0; i < arch.depth; ++i) {
      const int in = i == 0 ? 1 : arch.width;
      const int out = i == arch.depth - 1 ? 1 : arch.width;
      ConvLayer<T> conv(in, out, arch.kernel);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(conv.fan_in())));
      for (auto& w : conv.weight.values()) w = static_cast<T>(dist(rng));
      convs_.push_back(std::move(conv));
      if (is_middle(i)) norms_.emplace_back(static_cast<std::size_t>(arch.width));
    }
  }

  const NetArchitecture& architecture() const { return arch_; }
  int depth() const { return arch_.depth; }
  bool is_middle(int layer) const { return layer > 0 && layer < arch_.depth - 1; }

  std::vector<ConvLayer<T>>& convs() { return convs_; }
  const std::vector<ConvLayer<T>>& convs() const { return convs_; }
  std::vector<BatchNormLayer<T>>& norms() { return norms_; }
  const std::vector<BatchNormLayer<T>>& norms() const { return norms_; }
  BatchNormLayer<T>& norm_of(int layer) { return norms_.at(static_cast<std::size_t>(layer - 1)); }
  const BatchNormLayer<T>& norm_of(int layer) const { return norms_.at(static_cast<std::size_t>(layer - 1)); }

  /// Trainable parameter blocks in a fixed order: per layer conv weight, conv bias and, for
  /// middle layers, batchnorm gamma and beta.
  std::vector<std::span<T>> parameters() {
    std::vector<std::span<T>> p;
    for (int i = 0; i < arch_.depth; ++i) {
      p.push_back(convs_[i].weight.span());
      p.push_back(convs_[i].bias.span());
      if (is_middle(i)) {
        p.push_back(std::span<T>(norm_of(i).gamma));
        p.push_back(std::span<T>(norm_of(i).beta));
      }
    }
    return p;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto s : parameters()) n += s.size();
    return n;
  }

  /// Forward pass over a [1, N, H, W] batch. Training mode uses batch statistics and updates
  /// the running batchnorm estimates; `cache` receives what backward() needs.
  Tensor<T> forward(const Tensor<T>& x, BnMode mode, Cache* cache = nullptr) {
    if (mode == BnMode::infer) return infer(x);
    check_input(x);
    if (cache) {
      cache->conv_inputs.assign(static_cast<std::size_t>(arch_.depth), {});
      cache->pre_relu.assign(static_cast<std::size_t>(arch_.depth), {});
      cache->bn.assign(static_cast<std::size_t>(arch_.depth), {});
    }
    Tensor<T> h = x;
    for (int i = 0; i < arch_.depth; ++i) {
      Tensor<T> a = conv2d_forward(h, convs_[i]);
      if (cache) cache->conv_inputs[i] = std::move(h);
      if (i == arch_.depth - 1) return a;
      if (is_middle(i)) a = batchnorm_forward(a, norm_of(i), BnMode::train, cache ? &cache->bn[i] : nullptr);
      h = relu_forward(a);
      if (cache) cache->pre_relu[i] = std::move(a);
    }
    return h;
  }

  /// Hash of which ReLU inputs were positive in a cached training forward pass.
  static std::uint64_t activation_signature(const Cache& c) {
    std::string bits;
    for (const auto& a : c.pre_relu)
      for (std::size_t i = 0; i < a.size(); ++i) bits.push_back(a[i] > T(0) ? '1' : '0');
    return fnv1a(bits);
  }

  /// Inference forward pass; batchnorm uses running statistics.
  Tensor<T> infer(const Tensor<T>& x) const {
    check_input(x);
    Tensor<T> h = x;
    for (int i = 0; i < arch_.depth; ++i) {
      Tensor<T> a = conv2d_forward(h, convs_[i]);
      if (i == arch_.depth - 1) return a;
      if (is_middle(i)) a = batchnorm_infer(a, norm_of(i));
      h = relu_forward(a);
    }
    return h;
  }

  /// Gradients of all parameter blocks (same order as parameters()) for a training-mode forward.
  std::vector<std::vector<T>> backward(const Tensor<T>& grad_out, const Cache& cache) const {
    require(cache.conv_inputs.size() == static_cast<std::size_t>(arch_.depth), "backward: missing forward cache");
    std::vector<std::vector<T>> per_layer_w(arch_.depth), per_layer_b(arch_.depth), gam(arch_.depth), bet(arch_.depth);
    Tensor<T> g = grad_out;
    for (int i = arch_.depth - 1; i >= 0; --i) {
      if (i != arch_.depth - 1) {
        g = relu_backward(g, cache.pre_relu[i]);
        if (is_middle(i)) {
          auto bg = batchnorm_backward(g, cache.bn[i], norm_of(i));
          gam[i] = std::move(bg.gamma);
          bet[i] = std::move(bg.beta);
          g = std::move(bg.input);
        }
      }
      auto cg = conv2d_backward(g, cache.conv_inputs[i], convs_[i]);
      per_layer_w[i] = std::move(cg.weight.values());
      per_layer_b[i] = std::move(cg.bias.values());
      g = std::move(cg.input);
    }
    std::vector<std::vector<T>> out;
    for (int i = 0; i < arch_.depth; ++i) {
      out.push_back(std::move(per_layer_w[i]));
      out.push_back(std::move(per_layer_b[i]));
      if (is_middle(i)) {
        out.push_back(std::move(gam[i]));
        out.push_back(std::move(bet[i]));
      }
    }
    return out;
  }

  template <class U>
  NoiseprintNet<U> cast() const {
    NoiseprintNet<U> n;
    n.arch_ = arch_;
    for (const auto& c : convs_) {
      ConvLayer<U> u(c.in_ch, c.out_ch, c.k);
      u.weight = c.weight.template cast<U>();
      u.bias = c.bias.template cast<U>();
      n.convs_.push_back(std::move(u));
    }
    for (const auto& b : norms_) {
      BatchNormLayer<U> u(b.channels(), b.epsilon, b.momentum);
      u.gamma.assign(b.gamma.begin(), b.gamma.end());
      u.beta.assign(b.beta.begin(), b.beta.end());
      u.running_mean.assign(b.running_mean.begin(), b.running_mean.end());
      u.running_var.assign(b.running_var.begin(), b.running_var.end());
      n.norms_.push_back(std::move(u));
    }
    return n;
  }

 private:
  template <class U>
  friend class NoiseprintNet;

  void check_input(const Tensor<T>& x) const {
    require(x.rank() == 4 && x.dim(0) == 1, "network input must be [1, N, H, W], got " + shape_str(x.shape()));
    require(x.dim(2) >= static_cast<std::size_t>(arch_.kernel) && x.dim(3) >= static_cast<std::size_t>(arch_.kernel),
            "input " + std::to_string(x.dim(3)) + "x" + std::to_string(x.dim(2)) + " is smaller than the " +
                std::to_string(arch_.kernel) + "x" + std::to_string(arch_.kernel) + " kernel support");
  }

  static Tensor<T> batchnorm_infer(const Tensor<T>& x, const BatchNormLayer<T>& bn) {
    const auto d = activation_dims(x);
    const std::size_t m = d.per_channel();
    Tensor<T> y(x.shape());
    for (std::size_t c = 0; c < d.channels; ++c) {
      const double inv_std = 1.0 / std::sqrt(static_cast<double>(bn.running_var[c]) + bn.epsilon);
      const double scale = bn.gamma[c] * inv_std;
      const double shift = bn.beta[c] - bn.running_mean[c] * scale;
      const T* xs = x.data() + c * m;
      T* ys = y.data() + c * m;
      for (std::size_t i = 0; i < m; ++i) ys[i] = static_cast<T>(xs[i] * scale + shift);
    }
    return y;
  }

  NetArchitecture arch_;
  std::vector<ConvLayer<T>> convs_;
  std::vector<BatchNormLayer<T>> norms_;
};

using Net = NoiseprintNet<float>;

/// Same-size residual of a single-channel image.
template <class T>
Plane extract_residual(const Plane& image, const NoiseprintNet<T>& net) {
  require(all_finite(image), "extract_residual: image contains non-finite values");
  return tensor_to_plane(net.infer(plane_to_tensor<T>(image)));
}

struct TilingPolicy {
  int tile = 128;
  int overlap = 16;
};

/// Tile-by-tile extraction. Each output pixel comes from the tile whose core (tile minus the
/// overlap margin) contains it, i.e. the tile with the nearest centre; no blending.
template <class T>
Plane tiled_extract(const Plane& image, const NoiseprintNet<T>& net, const TilingPolicy& policy) {
  const int halo = net.architecture().halo();
  require(policy.overlap >= halo, "tiling overlap " + std::to_string(policy.overlap) + " is below the network halo " +
                                      std::to_string(halo) + " (receptive field " +
                                      std::to_string(net.architecture().receptive_field()) + ")");
  const int core = policy.tile - 2 * policy.overlap;
  require(core > 0, "tile size must exceed twice the overlap");
  if (image.width <= policy.tile && image.height <= policy.tile) return extract_residual(image, net);

  Plane out(image.width, image.height);
  for (int cy = 0; cy < image.height; cy += core) {
    for (int cx = 0; cx < image.width; cx += core) {
      const int cx1 = std::min(cx + core, image.width), cy1 = std::min(cy + core, image.height);
      int x0 = std::max(0, cx - policy.overlap), y0 = std::max(0, cy - policy.overlap);
      int x1 = std::min(image.width, cx1 + policy.overlap), y1 = std::min(image.height, cy1 + policy.overlap);
      // Keep tiles at least kernel-sized near the far border.
      x0 = std::max(0, std::min(x0, x1 - net.architecture().kernel));
      y0 = std::max(0, std::min(y0, y1 - net.architecture().kernel));
      Plane tile(x1 - x0, y1 - y0);
      for (int y = y0; y < y1; ++y)
        std::copy_n(&image.at(x0, y), tile.width, &tile.at(0, y - y0));
      const Plane res = extract_residual(tile, net);
      for (int y = cy; y < cy1; ++y)
        for (int x = cx; x < cx1; ++x) out.at(x, y) = res.at(x - x0, y - y0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Persistence

template <class T>
WeightsContainer to_container(const NoiseprintNet<T>& net, const std::string& id = {}) {
  const auto& a = net.architecture();
  WeightsContainer c;
  c.meta.push_back("architecture depth " + std::to_string(a.depth) + " width " + std::to_string(a.width) +
                   " kernel " + std::to_string(a.kernel));
  if (!id.empty()) c.meta.push_back("id " + id);
  auto to_f = [](const auto& v) { return std::vector<float>(v.begin(), v.end()); };
  for (int i = 0; i < a.depth; ++i) {
    const auto& conv = net.convs()[i];
    std::ostringstream desc;
    desc << "layer " << i << " conv in " << conv.in_ch << " out " << conv.out_ch << " k " << conv.k;
    if (net.is_middle(i)) {
      const auto& bn = net.norm_of(i);
      desc << " batchnorm eps " << bn.epsilon << " momentum " << bn.momentum << " relu";
    } else {
      desc << (i == a.depth - 1 ? " linear" : " relu");
    }
    c.meta.push_back(desc.str());
    const std::string p = "layer" + std::to_string(i);
    c.arrays.push_back({p + ".conv.weight", conv.weight.shape(), to_f(conv.weight.values())});
    c.arrays.push_back({p + ".conv.bias", conv.bias.shape(), to_f(conv.bias.values())});
    if (net.is_middle(i)) {
      const auto& bn = net.norm_of(i);
      const std::vector<std::size_t> s{bn.channels()};
      c.arrays.push_back({p + ".bn.gamma", s, to_f(bn.gamma)});
      c.arrays.push_back({p + ".bn.beta", s, to_f(bn.beta)});
      c.arrays.push_back({p + ".bn.running_mean", s, to_f(bn.running_mean)});
      c.arrays.push_back({p + ".bn.running_var", s, to_f(bn.running_var)});
    }
  }
  return c;
}

inline NetArchitecture architecture_of(const WeightsContainer& c) {
  std::istringstream is(c.meta_value("architecture"));
  NetArchitecture a;
  std::string k1, k2, k3;
  if (!(is >> k1 >> a.depth >> k2 >> a.width >> k3 >> a.kernel) || k1 != "depth" || k2 != "width" || k3 != "kernel")
    throw format_error("weights file lacks a valid architecture line");
  return a;
}

/// Copies stored parameters into `net`, which must have the same architecture. Errors name the
/// first layer that disagrees.
template <class T>
void load_parameters(NoiseprintNet<T>& net, const WeightsContainer& c) {
  const auto& a = net.architecture();
  auto copy_into = [&](int layer, const std::string& name, std::span<T> dst, const std::vector<std::size_t>& shape) {
    const auto* arr = c.find(name);
    if (!arr)
      throw format_error("layer " + std::to_string(layer) + ": stored weights have no '" + name +
                         "' (network expects depth " + std::to_string(a.depth) + ")");
    if (arr->shape != shape)
      throw format_error("layer " + std::to_string(layer) + ": '" + name + "' has shape " + shape_str(arr->shape) +
                         ", network expects " + shape_str(shape));
    std::copy(arr->data.begin(), arr->data.end(), dst.begin());
  };
  for (int i = 0; i < a.depth; ++i) {
    auto& conv = net.convs()[i];
    const std::string p = "layer" + std::to_string(i);
    copy_into(i, p + ".conv.weight", conv.weight.span(), conv.weight.shape());
    copy_into(i, p + ".conv.bias", conv.bias.span(), conv.bias.shape());
    const bool stored_bn = c.find(p + ".bn.gamma") != nullptr;
    if (stored_bn != net.is_middle(i))
      throw format_error("layer " + std::to_string(i) + ": batchnorm presence differs between stored weights and network");
    if (net.is_middle(i)) {
      auto& bn = net.norm_of(i);
      const std::vector<std::size_t> s{bn.channels()};
      copy_into(i, p + ".bn.gamma", std::span<T>(bn.gamma), s);
      copy_into(i, p + ".bn.beta", std::span<T>(bn.beta), s);
      copy_into(i, p + ".bn.running_mean", std::span<T>(bn.running_mean), s);
      copy_into(i, p + ".bn.running_var", std::span<T>(bn.running_var), s);
    }
  }
  if (c.find("layer" + std::to_string(a.depth) + ".conv.weight"))
    throw format_error("layer " + std::to_string(a.depth) + ": stored weights are deeper than the network (depth " +
                       std::to_string(a.depth) + ")");
}

template <class T = float>
NoiseprintNet<T> net_from_container(const WeightsContainer& c) {
  NoiseprintNet<T> net(architecture_of(c), 0);
  load_parameters(net, c);
  return net;
}

/// Initialises `net` from pre-trained denoiser weights; the architecture must match.
template <class T>
NoiseprintNet<T> init_from_denoiser(NoiseprintNet<T> net, const WeightsContainer& denoiser) {
  load_parameters(net, denoiser);
  return net;
}

template <class T>
void save_net(const std::filesystem::path& path, const NoiseprintNet<T>& net, const std::string& id = {}) {
  save_container(path, to_container(net, id));
}

inline Net load_net(const std::filesystem::path& path) { return net_from_container<float>(load_container(path)); }

/// Content hash of the parameters, used as a network identifier in sidecars.
template <class T>
std::string net_id(const NoiseprintNet<T>& net) {
  std::ostringstream os;
  write_container(os, to_container(net));
  return hex64(fnv1a(os.str()));
}

}  // namespace noiseprint
