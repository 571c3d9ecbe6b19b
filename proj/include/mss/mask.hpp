#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mss/common.hpp"
#include "mss/serialize.hpp"

namespace mss {

/// Multi-label segmentation mask: one binary plane per class; a pixel may be
/// set in several planes at once.
struct MultiHotMask {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;  // [C,H,W], plane-major

  MultiHotMask() = default;
  MultiHotMask(int c, int h, int w)
      : channels(c),
        height(h),
        width(w),
        values(static_cast<std::size_t>(c) * h * w, 0) {
    if (c < 1 || h < 1 || w < 1)
      throw shape_error("mask extents must be >= 1, got " + std::to_string(c) +
                        "x" + std::to_string(h) + "x" + std::to_string(w));
  }

  std::uint8_t& at(int c, int y, int x) {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::uint8_t at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  std::uint8_t* plane(int c) {
    return values.data() + static_cast<std::size_t>(c) * height * width;
  }
  const std::uint8_t* plane(int c) const {
    return values.data() + static_cast<std::size_t>(c) * height * width;
  }

  bool is_binary() const {
    for (auto v : values)
      if (v > 1) return false;
    return true;
  }

  bool operator==(const MultiHotMask& o) const = default;
};

namespace detail {
inline constexpr char kMaskMagic[4] = {'M', 'S', 'S', 'M'};
inline constexpr std::uint8_t kMaskVersion = 1;
// Guards against absurd headers before allocating C*H*W bytes.
inline constexpr std::uint64_t kMaxMaskBytes = 1ull << 31;
}  // namespace detail

inline void save_mask(const MultiHotMask& mask,
                      const std::vector<std::string>& class_names,
                      const std::filesystem::path& path) {
  if (static_cast<std::size_t>(mask.channels) != class_names.size())
    throw validation_error("mask has " + std::to_string(mask.channels) +
                           " channels but " + std::to_string(class_names.size()) +
                           " class names were given");
  if (mask.channels > 255)
    throw validation_error("mask container supports at most 255 channels");
  if (!mask.is_binary())
    throw validation_error("mask values must be 0 or 1");

  ByteWriter w;
  w.bytes(detail::kMaskMagic, 4);
  w.u8(detail::kMaskVersion);
  w.u32(static_cast<std::uint32_t>(mask.height));
  w.u32(static_cast<std::uint32_t>(mask.width));
  w.u8(static_cast<std::uint8_t>(mask.channels));
  for (const auto& name : class_names) w.str16(name);
  w.bytes(mask.values.data(), mask.values.size());
  w.append_crc32();
  write_file_bytes(path, w.data());
}

struct LoadedMask {
  MultiHotMask mask;
  std::vector<std::string> class_names;
};

inline LoadedMask load_mask(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 4 + 1 + 4 + 4 + 1 + 4)
    throw corrupt_error("mask container too short: " + path.string());

  // CRC covers everything before the trailing 4 bytes.
  const std::size_t body_len = bytes.size() - 4;
  const std::uint32_t want_crc =
      crc32_of(std::span<const std::uint8_t>(bytes.data(), body_len));
  std::uint32_t got_crc = 0;
  for (int i = 0; i < 4; ++i)
    got_crc |= static_cast<std::uint32_t>(bytes[body_len + i]) << (8 * i);
  if (want_crc != got_crc)
    throw corrupt_error("mask container CRC mismatch: " + path.string());

  ByteReader r(std::span<const std::uint8_t>(bytes.data(), body_len));
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, detail::kMaskMagic, 4) != 0)
    throw corrupt_error("bad mask container magic: " + path.string());
  const std::uint8_t version = r.u8();
  if (version != detail::kMaskVersion)
    throw corrupt_error("unsupported mask container version " +
                        std::to_string(version) + ": " + path.string());
  const std::uint32_t h = r.u32();
  const std::uint32_t w = r.u32();
  const std::uint8_t c = r.u8();
  if (h < 1 || w < 1 || c < 1)
    throw corrupt_error("mask container has zero extent: " + path.string());
  const std::uint64_t payload =
      static_cast<std::uint64_t>(c) * h * w;
  if (payload > detail::kMaxMaskBytes)
    throw validation_error("mask dimensions overflow sanity cap: " +
                           std::to_string(c) + "x" + std::to_string(h) + "x" +
                           std::to_string(w));

  LoadedMask out;
  out.class_names.reserve(c);
  for (int i = 0; i < c; ++i) out.class_names.push_back(r.str16());
  out.mask = MultiHotMask(static_cast<int>(c), static_cast<int>(h),
                          static_cast<int>(w));
  if (r.remaining() != payload)
    throw corrupt_error("mask payload length mismatch: expected " +
                        std::to_string(payload) + " bytes, have " +
                        std::to_string(r.remaining()));
  r.raw(out.mask.values.data(), payload);
  for (std::size_t i = 0; i < out.mask.values.size(); ++i)
    if (out.mask.values[i] > 1)
      throw corrupt_error("mask value out of {0,1} at byte " +
                          std::to_string(i));
  return out;
}

/// Nearest-neighbor per channel; integer center mapping keeps it exact.
inline MultiHotMask resize_mask(const MultiHotMask& src, int target) {
  if (target < 1) throw shape_error("resize target extents must be >= 1");
  if (src.height == target && src.width == target) return src;

  MultiHotMask dst(src.channels, target, target);
  std::vector<int> src_y(target), src_x(target);
  for (int o = 0; o < target; ++o) {
    long long sy = (2ll * o + 1) * src.height / (2ll * target);
    long long sx = (2ll * o + 1) * src.width / (2ll * target);
    src_y[o] = static_cast<int>(sy < src.height ? sy : src.height - 1);
    src_x[o] = static_cast<int>(sx < src.width ? sx : src.width - 1);
  }
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < target; ++y)
      for (int x = 0; x < target; ++x)
        dst.at(c, y, x) = src.at(c, src_y[y], src_x[x]);
  return dst;
}

inline MultiHotMask flip_mask(const MultiHotMask& src, bool flip_x,
                              bool flip_y) {
  MultiHotMask dst(src.channels, src.height, src.width);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < src.height; ++y) {
      const int sy = flip_y ? src.height - 1 - y : y;
      for (int x = 0; x < src.width; ++x)
        dst.at(c, y, x) = src.at(c, sy, flip_x ? src.width - 1 - x : x);
    }
  return dst;
}

}  // namespace mss
