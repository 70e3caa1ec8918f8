#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "noiseprint/common.hpp"

namespace noiseprint {

/// Binary container used for network weights and optimizer checkpoints.
///
/// Layout: a text header
///
///     NOISEPRINT-WEIGHTS 1
///     <free-form metadata lines, "key value...">
///     array <name> <rank> <dim0> ... <dimN>
///     ...
///     end
///
/// followed by the arrays as raw little-endian float32 in declared order.
struct WeightsContainer {
  static constexpr const char* kMagic = "NOISEPRINT-WEIGHTS";
  static constexpr int kVersion = 1;

  struct Array {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> data;
  };

  std::vector<std::string> meta;
  std::vector<Array> arrays;

  const Array* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }

  const Array& get(const std::string& name) const {
    const Array* a = find(name);
    if (!a) throw format_error("weights file has no array named '" + name + "'");
    return *a;
  }

  /// First metadata line starting with `key `, without the key.
  std::string meta_value(const std::string& key) const {
    for (const auto& line : meta)
      if (line.rfind(key + " ", 0) == 0) return line.substr(key.size() + 1);
    return {};
  }
};

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

inline void write_f32_le(std::ostream& os, const float* data, std::size_t n) {
  std::vector<std::uint32_t> buf(n);
  std::memcpy(buf.data(), data, n * sizeof(float));
  for (auto& w : buf) w = to_le(w);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
}

inline void read_f32_le(std::istream& is, float* data, std::size_t n) {
  std::vector<std::uint32_t> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is || static_cast<std::size_t>(is.gcount()) != n * sizeof(float)) throw format_error("truncated float payload");
  for (auto& w : buf) w = to_le(w);
  std::memcpy(data, buf.data(), n * sizeof(float));
}

// Writes through a temporary so a failed write never leaves a partial file behind.
template <class Fn>
void atomic_write(const std::filesystem::path& path, Fn&& body) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw format_error("cannot open " + tmp.string() + " for writing");
    body(os);
    os.flush();
    if (!os) {
      std::filesystem::remove(tmp);
      throw format_error("write failed for " + path.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline void write_container(std::ostream& os, const WeightsContainer& c) {
  os << WeightsContainer::kMagic << ' ' << WeightsContainer::kVersion << '\n';
  for (const auto& m : c.meta) os << m << '\n';
  for (const auto& a : c.arrays) {
    os << "array " << a.name << ' ' << a.shape.size();
    std::size_t n = 1;
    for (auto d : a.shape) {
      os << ' ' << d;
      n *= d;
    }
    os << '\n';
    if (n != a.data.size()) throw format_error("array '" + a.name + "' data does not match its shape");
  }
  os << "end\n";
  for (const auto& a : c.arrays) detail::write_f32_le(os, a.data.data(), a.data.size());
}

inline WeightsContainer read_container(std::istream& is) {
  WeightsContainer c;
  std::string line;
  if (!std::getline(is, line)) throw format_error("empty weights file");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != WeightsContainer::kMagic) throw format_error("not a weights file (bad magic)");
    if (version != WeightsContainer::kVersion)
      throw format_error("unsupported weights format version " + std::to_string(version));
  }
  bool ended = false;
  while (std::getline(is, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("array ", 0) == 0) {
      std::istringstream ls(line.substr(6));
      WeightsContainer::Array a;
      std::size_t rank = 0;
      if (!(ls >> a.name >> rank)) throw format_error("malformed array declaration: " + line);
      std::size_t n = 1;
      for (std::size_t i = 0; i < rank; ++i) {
        std::size_t d = 0;
        if (!(ls >> d)) throw format_error("malformed array shape: " + line);
        a.shape.push_back(d);
        n *= d;
      }
      a.data.resize(n);
      c.arrays.push_back(std::move(a));
    } else {
      c.meta.push_back(line);
    }
  }
  if (!ended) throw format_error("weights header not terminated");
  for (auto& a : c.arrays) detail::read_f32_le(is, a.data.data(), a.data.size());
  if (is.peek() != std::char_traits<char>::eof()) throw format_error("trailing bytes after weights payload");
  return c;
}

inline void save_container(const std::filesystem::path& path, const WeightsContainer& c) {
  detail::atomic_write(path, [&](std::ostream& os) { write_container(os, c); });
}

inline WeightsContainer load_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error("cannot open weights file " + path.string());
  return read_container(is);
}

}  // namespace noiseprint
