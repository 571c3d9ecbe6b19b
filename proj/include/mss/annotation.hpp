#pragma once

#include <json.hpp>

#include <algorithm>
#include <string>
#include <variant>
#include <vector>

#include "mss/common.hpp"
#include "mss/serialize.hpp"

namespace mss {

/// Ordered class vocabulary; order defines mask channel indices everywhere.
struct ClassSet {
  std::vector<std::string> names;

  static ClassSet defaults() {
    return ClassSet{{"dark", "busbar", "crack", "non-cell"}};
  }

  explicit ClassSet(std::vector<std::string> n) : names(std::move(n)) {
    if (names.empty()) throw validation_error("class set must be nonempty");
    for (std::size_t i = 0; i < names.size(); ++i)
      for (std::size_t j = i + 1; j < names.size(); ++j)
        if (names[i] == names[j])
          throw validation_error("duplicate class name '" + names[i] + "'");
  }

  int size() const { return static_cast<int>(names.size()); }

  int index_of(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : static_cast<int>(it - names.begin());
  }
};

struct Point {
  double x = 0;
  double y = 0;
};

struct PolygonGeom {
  std::vector<Point> points;
};

struct PolylineGeom {
  std::vector<Point> points;
  double thickness = 1;
};

/// Dense binary patch blitted at an integer origin; bits stored unpacked.
struct BitmapGeom {
  int origin_x = 0;
  int origin_y = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;  // row-major, h*w values in {0,1}
};

struct AnnotationObject {
  std::string class_name;
  std::variant<PolygonGeom, PolylineGeom, BitmapGeom> geometry;
};

struct Annotation {
  std::string image;
  int height = 0;
  int width = 0;
  std::vector<AnnotationObject> objects;
};

namespace detail {

using ojson = nlohmann::ordered_json;

inline const ojson& require_field(const ojson& j, const char* key,
                                  const std::string& where) {
  if (!j.contains(key))
    throw parse_error("missing field '" + std::string(key) + "' in " + where);
  return j.at(key);
}

inline std::vector<Point> parse_points(const ojson& arr,
                                       const std::string& where) {
  if (!arr.is_array())
    throw parse_error("'" + where + "' must be an array of [x,y] pairs");
  std::vector<Point> pts;
  pts.reserve(arr.size());
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() ||
        !p[1].is_number())
      throw parse_error("malformed point in " + where +
                        ": expected [x,y] numbers");
    pts.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return pts;
}

// Rows are byte-aligned, bits MSB-first (PBM-style packing).
inline std::size_t packed_row_bytes(int width) {
  return (static_cast<std::size_t>(width) + 7) / 8;
}

inline std::vector<std::uint8_t> unpack_bits(
    const std::vector<std::uint8_t>& packed, int height, int width,
    const std::string& where) {
  const std::size_t bpr = packed_row_bytes(width);
  if (packed.size() != bpr * height)
    throw parse_error("bitmap data in " + where + " has " +
                      std::to_string(packed.size()) + " bytes, expected " +
                      std::to_string(bpr * height));
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      bits[static_cast<std::size_t>(y) * width + x] =
          (packed[y * bpr + x / 8] >> (7 - x % 8)) & 1;
  return bits;
}

inline std::vector<std::uint8_t> pack_bits(
    const std::vector<std::uint8_t>& bits, int height, int width) {
  const std::size_t bpr = packed_row_bytes(width);
  std::vector<std::uint8_t> packed(bpr * height, 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (bits[static_cast<std::size_t>(y) * width + x])
        packed[y * bpr + x / 8] |= static_cast<std::uint8_t>(1u << (7 - x % 8));
  return packed;
}

}  // namespace detail

/// Parses and fully validates one annotation document. Polygon/polyline
/// coordinates are clamped into the image rectangle; bitmaps must fit.
inline Annotation parse_annotation(const std::string& text,
                                   const ClassSet& classes) {
  detail::ojson doc;
  try {
    doc = detail::ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error(std::string("annotation is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw parse_error("annotation root must be an object");

  Annotation ann;
  const auto& image = detail::require_field(doc, "image", "annotation");
  if (!image.is_string()) throw parse_error("'image' must be a string");
  ann.image = image.get<std::string>();

  for (const char* key : {"height", "width"}) {
    const auto& v = detail::require_field(doc, key, "annotation");
    if (!v.is_number_integer() || v.get<long long>() < 1)
      throw parse_error(std::string("'") + key + "' must be a positive integer");
  }
  ann.height = doc.at("height").get<int>();
  ann.width = doc.at("width").get<int>();

  const auto& objects = detail::require_field(doc, "objects", "annotation");
  if (!objects.is_array()) throw parse_error("'objects' must be an array");

  auto clamp_points = [&](std::vector<Point>& pts) {
    for (auto& p : pts) {
      p.x = std::clamp(p.x, 0.0, static_cast<double>(ann.width));
      p.y = std::clamp(p.y, 0.0, static_cast<double>(ann.height));
    }
  };

  int idx = 0;
  for (const auto& obj : objects) {
    const std::string where = "objects[" + std::to_string(idx++) + "]";
    if (!obj.is_object()) throw parse_error(where + " must be an object");

    AnnotationObject out;
    const auto& cls = detail::require_field(obj, "class", where);
    if (!cls.is_string()) throw parse_error(where + ".class must be a string");
    out.class_name = cls.get<std::string>();
    if (classes.index_of(out.class_name) < 0)
      throw validation_error("unknown class '" + out.class_name + "' in " +
                             where);

    const int geoms = obj.contains("polygon") + obj.contains("polyline") +
                      obj.contains("bitmap");
    if (geoms != 1)
      throw parse_error(where +
                        " must carry exactly one of polygon/polyline/bitmap");

    if (obj.contains("polygon")) {
      PolygonGeom g;
      g.points = detail::parse_points(obj.at("polygon"), where + ".polygon");
      if (g.points.size() < 3)
        throw validation_error(where + ".polygon needs at least 3 points");
      clamp_points(g.points);
      out.geometry = std::move(g);
    } else if (obj.contains("polyline")) {
      PolylineGeom g;
      g.points = detail::parse_points(obj.at("polyline"), where + ".polyline");
      if (g.points.size() < 2)
        throw validation_error(where + ".polyline needs at least 2 points");
      const auto& th = detail::require_field(obj, "thickness", where);
      if (!th.is_number() || !(th.get<double>() >= 1.0))
        throw validation_error(where + ".thickness must be >= 1");
      g.thickness = th.get<double>();
      clamp_points(g.points);
      out.geometry = std::move(g);
    } else {
      BitmapGeom g;
      const auto& bm = obj.at("bitmap");
      if (!bm.is_object()) throw parse_error(where + ".bitmap must be an object");
      const auto& origin = detail::require_field(bm, "origin", where + ".bitmap");
      if (!origin.is_array() || origin.size() != 2 ||
          !origin[0].is_number_integer() || !origin[1].is_number_integer())
        throw parse_error(where + ".bitmap.origin must be [x,y] integers");
      g.origin_x = origin[0].get<int>();
      g.origin_y = origin[1].get<int>();
      for (const char* key : {"height", "width"}) {
        const auto& v = detail::require_field(bm, key, where + ".bitmap");
        if (!v.is_number_integer() || v.get<long long>() < 1)
          throw parse_error(where + ".bitmap." + key +
                            " must be a positive integer");
      }
      g.height = bm.at("height").get<int>();
      g.width = bm.at("width").get<int>();
      const auto& data = detail::require_field(bm, "data", where + ".bitmap");
      if (!data.is_string())
        throw parse_error(where + ".bitmap.data must be a base64 string");
      g.bits = detail::unpack_bits(base64_decode(data.get<std::string>()),
                                   g.height, g.width, where);
      if (g.origin_x < 0 || g.origin_y < 0 ||
          g.origin_x + g.width > ann.width ||
          g.origin_y + g.height > ann.height)
        throw validation_error(where + " geometry out of range: bitmap " +
                               std::to_string(g.width) + "x" +
                               std::to_string(g.height) + " at (" +
                               std::to_string(g.origin_x) + "," +
                               std::to_string(g.origin_y) +
                               ") exceeds image bounds");
      out.geometry = std::move(g);
    }
    ann.objects.push_back(std::move(out));
  }
  return ann;
}

/// Serializes an annotation back to its canonical JSON form (2-space indent,
/// stable key order) so emitted corpora are byte-deterministic.
inline std::string write_annotation(const Annotation& ann) {
  detail::ojson doc;
  doc["image"] = ann.image;
  doc["height"] = ann.height;
  doc["width"] = ann.width;
  doc["objects"] = detail::ojson::array();
  for (const auto& obj : ann.objects) {
    detail::ojson o;
    o["class"] = obj.class_name;
    if (const auto* poly = std::get_if<PolygonGeom>(&obj.geometry)) {
      auto pts = detail::ojson::array();
      for (const auto& p : poly->points) pts.push_back({p.x, p.y});
      o["polygon"] = std::move(pts);
    } else if (const auto* line = std::get_if<PolylineGeom>(&obj.geometry)) {
      auto pts = detail::ojson::array();
      for (const auto& p : line->points) pts.push_back({p.x, p.y});
      o["polyline"] = std::move(pts);
      o["thickness"] = line->thickness;
    } else {
      const auto& bm = std::get<BitmapGeom>(obj.geometry);
      detail::ojson b;
      b["origin"] = {bm.origin_x, bm.origin_y};
      b["height"] = bm.height;
      b["width"] = bm.width;
      const auto packed = detail::pack_bits(bm.bits, bm.height, bm.width);
      b["data"] = base64_encode(packed);
      o["bitmap"] = std::move(b);
    }
    doc["objects"].push_back(std::move(o));
  }
  return doc.dump(2) + "\n";
}

}  // namespace mss
