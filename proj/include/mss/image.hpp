#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <span>
#include <vector>

#include "mss/common.hpp"
#include "mss/tensor.hpp"

namespace mss {

/// Single-channel image, row-major float pixels scaled to [0,1] at rest.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {
    if (h < 1 || w < 1)
      throw shape_error("image extents must be >= 1, got " +
                        std::to_string(h) + "x" + std::to_string(w));
  }

  float& at(int y, int x) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  float at(int y, int x) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
};

namespace detail {
inline void png_warn_silent(png_structp, png_const_charp) {}
}  // namespace detail

/// Reads an 8- or 16-bit grayscale PNG; samples divided by the max value of
/// the source bit depth.
inline GrayImage load_png_gray(const std::filesystem::path& path) {
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw io_error("cannot open image: " + path.string());

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    std::fclose(fp);
    throw corrupt_error("not a PNG file: " + path.string());
  }

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw io_error("libpng initialization failed");
  }
  png_set_error_fn(png, png_get_error_ptr(png), nullptr,
                   detail::png_warn_silent);

  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw corrupt_error("PNG decode failure: " + path.string());
  }

  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (color_type != PNG_COLOR_TYPE_GRAY || (bit_depth != 8 && bit_depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw validation_error(
        "expected 8- or 16-bit grayscale PNG, got color type " +
        std::to_string(color_type) + " depth " + std::to_string(bit_depth) +
        ": " + path.string());
  }

  if (bit_depth == 16) png_set_swap(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  raw.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  GrayImage img(static_cast<int>(h), static_cast<int>(w));
  if (bit_depth == 8) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        img.pixels[y * w + x] = raw[y * rowbytes + x] / 255.0f;
  } else {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        std::uint16_t v;
        std::memcpy(&v, raw.data() + y * rowbytes + 2 * x, 2);
        img.pixels[y * w + x] = v / 65535.0f;
      }
  }
  return img;
}

/// Writes a grayscale PNG at the requested bit depth; pixels are clamped to
/// [0,1] and quantized by rounding.
inline void save_png_gray(const std::filesystem::path& path,
                          const GrayImage& img, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16)
    throw validation_error("PNG bit depth must be 8 or 16, got " +
                           std::to_string(bit_depth));
  if (img.height < 1 || img.width < 1 ||
      img.pixels.size() !=
          static_cast<std::size_t>(img.height) * img.width)
    throw shape_error("malformed image buffer");

  const std::size_t n = img.pixels.size();
  const std::size_t rowbytes =
      static_cast<std::size_t>(img.width) * (bit_depth == 8 ? 1 : 2);
  std::vector<std::uint8_t> raw(rowbytes * img.height);
  const float maxv = bit_depth == 8 ? 255.0f : 65535.0f;
  for (std::size_t i = 0; i < n; ++i) {
    float v = img.pixels[i];
    v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    const auto q = static_cast<std::uint32_t>(std::lround(v * maxv));
    if (bit_depth == 8) {
      raw[i] = static_cast<std::uint8_t>(q);
    } else {
      const auto q16 = static_cast<std::uint16_t>(q);
      std::memcpy(raw.data() + 2 * i, &q16, 2);
    }
  }

  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw io_error("cannot open image for writing: " + path.string());

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw io_error("libpng initialization failed");
  }
  png_set_error_fn(png, png_get_error_ptr(png), nullptr,
                   detail::png_warn_silent);

  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = raw.data() + y * rowbytes;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw io_error("PNG encode failure: " + path.string());
  }

  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw io_error("close failure on " + path.string());
}

/// Bilinear resize with half-pixel center alignment. Lerp form keeps
/// constant images exactly constant.
inline GrayImage resize_bilinear(const GrayImage& src, int out_h, int out_w) {
  if (src.height < 1 || src.width < 1)
    throw shape_error("resize source extents must be >= 1");
  if (out_h < 1 || out_w < 1)
    throw shape_error("resize target extents must be >= 1");
  if (out_h == src.height && out_w == src.width) return src;

  GrayImage dst(out_h, out_w);
  const double sy_scale = static_cast<double>(src.height) / out_h;
  const double sx_scale = static_cast<double>(src.width) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double sy = (oy + 0.5) * sy_scale - 0.5;
    if (sy < 0) sy = 0;
    int y0 = static_cast<int>(sy);
    if (y0 > src.height - 1) y0 = src.height - 1;
    const int y1 = y0 + 1 > src.height - 1 ? src.height - 1 : y0 + 1;
    const double fy = sy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      double sx = (ox + 0.5) * sx_scale - 0.5;
      if (sx < 0) sx = 0;
      int x0 = static_cast<int>(sx);
      if (x0 > src.width - 1) x0 = src.width - 1;
      const int x1 = x0 + 1 > src.width - 1 ? src.width - 1 : x0 + 1;
      const double fx = sx - x0;
      const double v00 = src.at(y0, x0), v01 = src.at(y0, x1);
      const double v10 = src.at(y1, x0), v11 = src.at(y1, x1);
      const double top = v00 + fx * (v01 - v00);
      const double bot = v10 + fx * (v11 - v10);
      dst.at(oy, ox) = static_cast<float>(top + fy * (bot - top));
    }
  }
  return dst;
}

inline GrayImage resize_image(const GrayImage& src, int target = 256) {
  return resize_bilinear(src, target, target);
}

inline GrayImage flip_image(const GrayImage& src, bool flip_x, bool flip_y) {
  GrayImage dst(src.height, src.width);
  for (int y = 0; y < src.height; ++y) {
    const int sy = flip_y ? src.height - 1 - y : y;
    for (int x = 0; x < src.width; ++x)
      dst.at(y, x) = src.at(sy, flip_x ? src.width - 1 - x : x);
  }
  return dst;
}

inline constexpr float kImagenetMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kImagenetStd[3] = {0.229f, 0.224f, 0.225f};

/// Replicates the gray channel |mean| times and applies (x - mean)/std
/// channel-wise; channel count is defined by the constant vectors.
inline Tensor normalize_image(const GrayImage& img,
                              std::span<const float> mean,
                              std::span<const float> std_dev) {
  if (mean.empty() || mean.size() != std_dev.size())
    throw validation_error(
        "normalization mean/std lengths must match and be nonzero, got " +
        std::to_string(mean.size()) + " and " + std::to_string(std_dev.size()));
  for (std::size_t c = 0; c < std_dev.size(); ++c)
    if (!(std_dev[c] > 0.0f))
      throw validation_error("normalization std must be positive, got " +
                             std::to_string(std_dev[c]) + " at channel " +
                             std::to_string(c));
  const int channels = static_cast<int>(mean.size());
  Tensor t({channels, img.height, img.width});
  const std::size_t plane = img.pixels.size();
  for (int c = 0; c < channels; ++c) {
    float* out = t.data() + static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i)
      out[i] = (img.pixels[i] - mean[c]) / std_dev[c];
  }
  return t;
}

}  // namespace mss
