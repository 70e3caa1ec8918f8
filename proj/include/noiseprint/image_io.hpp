#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "noiseprint/container.hpp"
#include "noiseprint/tensor.hpp"

namespace noiseprint {

namespace detail {

inline std::string read_pnm_token(std::istream& is) {
  std::string tok;
  char ch;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

struct PgmRaw {
  int width = 0, height = 0, maxval = 0;
  std::vector<std::uint16_t> values;
};

inline PgmRaw read_pgm_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error("cannot open " + path.string());
  if (read_pnm_token(is) != "P5") throw format_error(path.string() + " is not a binary PGM (P5)");
  PgmRaw r;
  try {
    r.width = std::stoi(read_pnm_token(is));
    r.height = std::stoi(read_pnm_token(is));
    r.maxval = std::stoi(read_pnm_token(is));
  } catch (const std::exception&) {
    throw format_error("malformed PGM header in " + path.string());
  }
  if (r.width <= 0 || r.height <= 0 || r.maxval <= 0 || r.maxval > 65535)
    throw format_error("invalid PGM header in " + path.string());
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  r.values.resize(n);
  if (r.maxval < 256) {
    std::vector<unsigned char> buf(n);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) throw format_error("truncated PGM " + path.string());
    std::copy(buf.begin(), buf.end(), r.values.begin());
  } else {
    std::vector<unsigned char> buf(2 * n);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(2 * n));
    if (static_cast<std::size_t>(is.gcount()) != 2 * n) throw format_error("truncated PGM " + path.string());
    for (std::size_t i = 0; i < n; ++i) r.values[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
  }
  return r;
}

inline void write_pgm_raw(const std::filesystem::path& path, int w, int h, int maxval,
                          const std::vector<std::uint16_t>& values) {
  atomic_write(path, [&](std::ostream& os) {
    os << "P5\n" << w << ' ' << h << '\n' << maxval << '\n';
    if (maxval < 256) {
      std::vector<unsigned char> buf(values.begin(), values.end());
      os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    } else {
      std::vector<unsigned char> buf(2 * values.size());
      for (std::size_t i = 0; i < values.size(); ++i) {
        buf[2 * i] = static_cast<unsigned char>(values[i] >> 8);
        buf[2 * i + 1] = static_cast<unsigned char>(values[i] & 0xff);
      }
      os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
  });
}

}  // namespace detail

inline float pgm_level(std::uint16_t q, int maxval) { return static_cast<float>(q * (1.0 / maxval)); }

inline std::uint16_t pgm_quantize(float v, int maxval) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * maxval));
}

/// Rounds a plane to the values a PGM of the given depth stores, so in-memory data matches
/// what a write/read round trip yields.
inline void quantize_like_pgm(Plane& p, int bits = 16) {
  const int maxval = bits == 8 ? 255 : 65535;
  for (auto& v : p.data) v = pgm_level(pgm_quantize(v, maxval), maxval);
}

/// Reads an 8- or 16-bit binary PGM into [0, 1].
inline Plane read_pgm(const std::filesystem::path& path) {
  const auto raw = detail::read_pgm_raw(path);
  Plane p(raw.width, raw.height);
  for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = pgm_level(raw.values[i], raw.maxval);
  return p;
}

/// Writes a [0, 1] plane as binary PGM with 8 or 16 bits per sample (values are clamped).
inline void write_pgm(const std::filesystem::path& path, const Plane& p, int bits = 16) {
  require(bits == 8 || bits == 16, "PGM depth must be 8 or 16 bits");
  const int maxval = bits == 8 ? 255 : 65535;
  std::vector<std::uint16_t> v(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) v[i] = pgm_quantize(p.data[i], maxval);
  detail::write_pgm_raw(path, p.width, p.height, maxval, v);
}

/// Binary masks are 8-bit PGM with 255 = forged; any nonzero sample reads back as 1.
inline void write_mask_pgm(const std::filesystem::path& path, const Mask& m) {
  std::vector<std::uint16_t> v(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) v[i] = m.data[i] ? 255 : 0;
  detail::write_pgm_raw(path, m.width, m.height, 255, v);
}

inline Mask read_mask_pgm(const std::filesystem::path& path) {
  const auto raw = detail::read_pgm_raw(path);
  Mask m(raw.width, raw.height);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = raw.values[i] ? 1 : 0;
  return m;
}

// Float planes: "FLOATPLANE 1\n<width> <height>\n" then little-endian float32 rows.
inline void write_float_plane(const std::filesystem::path& path, const Plane& p) {
  detail::atomic_write(path, [&](std::ostream& os) {
    os << "FLOATPLANE 1\n" << p.width << ' ' << p.height << '\n';
    detail::write_f32_le(os, p.data.data(), p.data.size());
  });
}

inline Plane read_float_plane(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error("cannot open " + path.string());
  std::string magic;
  int version = 0, w = 0, h = 0;
  is >> magic >> version >> w >> h;
  if (magic != "FLOATPLANE" || version != 1) throw format_error(path.string() + " is not a float plane");
  if (w <= 0 || h <= 0) throw format_error("invalid float plane size in " + path.string());
  is.get();  // newline after header
  Plane p(w, h);
  detail::read_f32_le(is, p.data.data(), p.data.size());
  return p;
}

/// Loads either format, dispatching on the file header.
inline Plane read_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error("cannot open " + path.string());
  char head[2] = {0, 0};
  is.read(head, 2);
  if (head[0] == 'P' && head[1] == '5') return read_pgm(path);
  return read_float_plane(path);
}

struct RgbImage {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major
};

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  require(img.rgb.size() == static_cast<std::size_t>(img.width) * img.height * 3, "RGB buffer size mismatch");
  detail::atomic_write(path, [&](std::ostream& os) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_write_struct(&png, &info);
      throw format_error("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw format_error("libpng failed writing " + path.string());
    }
    png_set_write_fn(
        png, &os,
        [](png_structp p, png_bytep data, png_size_t len) {
          static_cast<std::ostream*>(png_get_io_ptr(p))->write(reinterpret_cast<const char*>(data),
                                                                static_cast<std::streamsize>(len));
        },
        [](png_structp p) { static_cast<std::ostream*>(png_get_io_ptr(p))->flush(); });
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
      png_write_row(png, const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  });
}

inline RgbImage read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw format_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw format_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw format_error("libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_expand(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY || png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  RgbImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    png_read_row(png, img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace noiseprint
