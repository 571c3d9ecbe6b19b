#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mss/annotation.hpp"
#include "mss/mask.hpp"

namespace mss {
namespace detail {

/// Nonzero-winding scanline fill sampled at pixel centers (x+0.5, y+0.5).
inline void fill_polygon(std::uint8_t* plane, int h, int w,
                         const std::vector<Point>& pts) {
  const std::size_t n = pts.size();
  std::vector<std::pair<double, int>> crossings;
  for (int y = 0; y < h; ++y) {
    const double yc = y + 0.5;
    crossings.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Point& a = pts[i];
      const Point& b = pts[(i + 1) % n];
      if (a.y == b.y) continue;
      int dir;
      if (a.y < b.y) {
        if (!(a.y <= yc && yc < b.y)) continue;
        dir = 1;
      } else {
        if (!(b.y <= yc && yc < a.y)) continue;
        dir = -1;
      }
      const double x = a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y);
      crossings.emplace_back(x, dir);
    }
    if (crossings.empty()) continue;
    std::sort(crossings.begin(), crossings.end());
    int winding = 0;
    std::size_t k = 0;
    for (int x = 0; x < w; ++x) {
      const double xc = x + 0.5;
      while (k < crossings.size() && crossings[k].first <= xc)
        winding += crossings[k++].second;
      if (winding != 0) plane[static_cast<std::size_t>(y) * w + x] = 1;
    }
  }
}

/// Round brush: a pixel is set when its center lies within thickness/2 of
/// any segment of the polyline.
inline void stroke_polyline(std::uint8_t* plane, int h, int w,
                            const std::vector<Point>& pts, double thickness) {
  const double r = thickness / 2.0;
  const double r2 = r * r;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const Point& a = pts[i];
    const Point& b = pts[i + 1];
    const int y_lo = std::max(0, static_cast<int>(std::floor(
                                     std::min(a.y, b.y) - r - 0.5)));
    const int y_hi = std::min(h - 1, static_cast<int>(std::ceil(
                                         std::max(a.y, b.y) + r - 0.5)));
    const int x_lo = std::max(0, static_cast<int>(std::floor(
                                     std::min(a.x, b.x) - r - 0.5)));
    const int x_hi = std::min(w - 1, static_cast<int>(std::ceil(
                                         std::max(a.x, b.x) + r - 0.5)));
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    for (int y = y_lo; y <= y_hi; ++y) {
      const double yc = y + 0.5;
      for (int x = x_lo; x <= x_hi; ++x) {
        const double xc = x + 0.5;
        double t = 0.0;
        if (len2 > 0.0)
          t = std::clamp(((xc - a.x) * dx + (yc - a.y) * dy) / len2, 0.0, 1.0);
        const double px = a.x + t * dx - xc;
        const double py = a.y + t * dy - yc;
        if (px * px + py * py <= r2)
          plane[static_cast<std::size_t>(y) * w + x] = 1;
      }
    }
  }
}

inline void blit_bitmap(std::uint8_t* plane, int h, int w,
                        const BitmapGeom& bm) {
  (void)h;
  for (int y = 0; y < bm.height; ++y)
    for (int x = 0; x < bm.width; ++x)
      if (bm.bits[static_cast<std::size_t>(y) * bm.width + x])
        plane[static_cast<std::size_t>(bm.origin_y + y) * w +
              (bm.origin_x + x)] = 1;
}

}  // namespace detail

/// Burns every annotated object into its class plane. Overlapping objects of
/// different classes set multiple planes at the same pixel.
inline MultiHotMask rasterize(const Annotation& ann, const ClassSet& classes) {
  MultiHotMask mask(classes.size(), ann.height, ann.width);
  for (const auto& obj : ann.objects) {
    const int c = classes.index_of(obj.class_name);
    if (c < 0)
      throw validation_error("unknown class '" + obj.class_name +
                             "' reached rasterize");
    std::uint8_t* plane = mask.plane(c);
    if (const auto* poly = std::get_if<PolygonGeom>(&obj.geometry))
      detail::fill_polygon(plane, ann.height, ann.width, poly->points);
    else if (const auto* line = std::get_if<PolylineGeom>(&obj.geometry))
      detail::stroke_polyline(plane, ann.height, ann.width, line->points,
                              line->thickness);
    else
      detail::blit_bitmap(plane, ann.height, ann.width,
                          std::get<BitmapGeom>(obj.geometry));
  }
  return mask;
}

}  // namespace mss
