#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mss/common.hpp"
#include "mss/mask.hpp"

namespace mss {

struct Pixel {
  int y = 0, x = 0;
  bool operator==(const Pixel&) const = default;
  bool operator<(const Pixel& o) const {
    return y != o.y ? y < o.y : x < o.x;
  }
};

struct BoundingBox {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // inclusive
};

struct Component {
  int label = 0;  // dense, from 1, in row-major first-pixel order
  std::int64_t area = 0;
  std::int64_t perimeter = 0;  // exposed 4-neighborhood edges
  BoundingBox bbox;
  double centroid_y = 0, centroid_x = 0;
  double slope = 0;  // principal-axis angle, radians in [-pi/2, pi/2)
};

/// Geometry of one pixel set. Perimeter counts the pixel edges whose
/// 4-neighbor is outside the set (or outside the image); slope is the
/// orientation of the first principal axis of the coordinate covariance,
/// with x = column and y = row. Isotropic sets (including single pixels)
/// get slope 0.
inline Component component_geometry(const std::vector<Pixel>& pixels) {
  if (pixels.empty())
    throw validation_error("component_geometry: empty pixel set");
  std::set<Pixel> members(pixels.begin(), pixels.end());
  if (members.size() != pixels.size())
    throw validation_error("component_geometry: duplicate pixels");

  Component c;
  c.area = static_cast<std::int64_t>(pixels.size());
  c.bbox = {pixels[0].y, pixels[0].x, pixels[0].y, pixels[0].x};
  double sy = 0, sx = 0;
  for (const Pixel& p : pixels) {
    c.bbox.y0 = std::min(c.bbox.y0, p.y);
    c.bbox.x0 = std::min(c.bbox.x0, p.x);
    c.bbox.y1 = std::max(c.bbox.y1, p.y);
    c.bbox.x1 = std::max(c.bbox.x1, p.x);
    sy += p.y;
    sx += p.x;
    for (const Pixel n : {Pixel{p.y - 1, p.x}, Pixel{p.y + 1, p.x},
                          Pixel{p.y, p.x - 1}, Pixel{p.y, p.x + 1}})
      if (!members.count(n)) ++c.perimeter;
  }
  const double n = static_cast<double>(pixels.size());
  c.centroid_y = sy / n;
  c.centroid_x = sx / n;

  double cxx = 0, cyy = 0, cxy = 0;
  for (const Pixel& p : pixels) {
    const double dy = p.y - c.centroid_y;
    const double dx = p.x - c.centroid_x;
    cxx += dx * dx;
    cyy += dy * dy;
    cxy += dx * dy;
  }
  double theta = 0.5 * std::atan2(2.0 * cxy, cxx - cyy);
  if (theta >= M_PI / 2) theta -= M_PI;  // fold into [-pi/2, pi/2)
  c.slope = theta;
  return c;
}

struct Labeling {
  int height = 0, width = 0;
  std::vector<int> labels;  // 0 = background, else component label
  std::vector<Component> components;
};

/// Labels connected regions of a binary plane. Labels are dense from 1 and
/// ordered by each component's first pixel in a row-major scan, so the result
/// is deterministic.
inline Labeling connected_components(const std::uint8_t* plane, int height,
                                     int width, int connectivity = 8) {
  if (height < 1 || width < 1)
    throw shape_error("connected_components: plane is " +
                      std::to_string(height) + "x" + std::to_string(width));
  if (connectivity != 4 && connectivity != 8)
    throw validation_error("connectivity must be 4 or 8, got " +
                           std::to_string(connectivity));
  const std::size_t total = static_cast<std::size_t>(height) * width;
  for (std::size_t i = 0; i < total; ++i)
    if (plane[i] > 1)
      throw validation_error("plane is not binary: value " +
                             std::to_string(plane[i]) + " at index " +
                             std::to_string(i));

  Labeling out;
  out.height = height;
  out.width = width;
  out.labels.assign(total, 0);
  std::vector<int> stack;
  std::vector<Pixel> pixels;
  for (int y0 = 0; y0 < height; ++y0)
    for (int x0 = 0; x0 < width; ++x0) {
      const int start = y0 * width + x0;
      if (!plane[start] || out.labels[start]) continue;
      const int label = static_cast<int>(out.components.size()) + 1;
      out.labels[start] = label;
      stack.assign(1, start);
      pixels.clear();
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        const int cy = cur / width, cx = cur % width;
        pixels.push_back({cy, cx});
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            if (connectivity == 4 && dy != 0 && dx != 0) continue;
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= height || nx < 0 || nx >= width) continue;
            const int ni = ny * width + nx;
            if (plane[ni] && !out.labels[ni]) {
              out.labels[ni] = label;
              stack.push_back(ni);
            }
          }
      }
      Component c = component_geometry(pixels);
      c.label = label;
      out.components.push_back(c);
    }
  return out;
}

inline Labeling connected_components(const MultiHotMask& mask, int channel,
                                     int connectivity = 8) {
  if (channel < 0 || channel >= mask.channels)
    throw shape_error("channel " + std::to_string(channel) +
                      " out of range for a " + std::to_string(mask.channels) +
                      "-channel mask");
  return connected_components(mask.plane(channel), mask.height, mask.width,
                              connectivity);
}

// ---------------------------------------------------------------------------
// Distribution summaries

struct DistStats {
  std::size_t n = 0;
  double mean = 0, median = 0, sd = 0;  // sample SD (n-1); 0 when n < 2
  double q1 = 0, q3 = 0;
};

namespace detail {

/// Linear-interpolation quantile on a sorted vector (the common "type 7"
/// definition: h = (n-1)q).
inline double quantile_sorted(const std::vector<double>& xs, double q) {
  const double h = (static_cast<double>(xs.size()) - 1.0) * q;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

}  // namespace detail

inline DistStats dist_stats(std::vector<double> xs) {
  if (xs.empty()) throw validation_error("dist_stats: empty sample");
  DistStats s;
  s.n = xs.size();
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  std::sort(xs.begin(), xs.end());
  s.q1 = detail::quantile_sorted(xs, 0.25);
  s.median = detail::quantile_sorted(xs, 0.50);
  s.q3 = detail::quantile_sorted(xs, 0.75);
  return s;
}

// ---------------------------------------------------------------------------
// Crack-count comparison across sources (ground truth vs model variants)

struct MaskSet {
  std::string source;                                       // e.g. "gt"
  std::vector<std::pair<std::string, MultiHotMask>> masks;  // (image id, mask)
};

struct ImageComponents {
  std::string image, source;
  std::vector<Component> components;  // after any min-area filter
};

struct CountRow {
  std::string image, source;
  int count = 0;
};

struct CrackSummary {
  std::vector<CountRow> rows;              // image-major, sources in order
  std::vector<ImageComponents> details;    // same order as rows
  std::map<std::string, DistStats> stats;  // per source
};

/// Counts crack components per image for every source over aligned corpora.
/// All sources must cover the same image ids; components smaller than
/// `min_area` pixels are dropped before counting. Per-image work may run in
/// parallel; the output order is fixed either way.
inline CrackSummary crack_count_summary(const std::vector<MaskSet>& sources,
                                        int crack_channel,
                                        int connectivity = 8, int min_area = 0,
                                        int jobs = 1) {
  if (sources.empty()) throw validation_error("crack_count_summary: no sources");
  std::vector<MaskSet> sorted = sources;
  for (auto& s : sorted)
    std::sort(s.masks.begin(), s.masks.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  const MaskSet& ref = sorted.front();
  for (std::size_t i = 1; i < ref.masks.size(); ++i)
    if (ref.masks[i].first == ref.masks[i - 1].first)
      throw validation_error("duplicate image id '" + ref.masks[i].first +
                             "' in source '" + ref.source + "'");
  for (const auto& s : sorted) {
    if (s.masks.size() != ref.masks.size())
      throw validation_error("source '" + s.source + "' has " +
                             std::to_string(s.masks.size()) +
                             " images, expected " +
                             std::to_string(ref.masks.size()));
    for (std::size_t i = 0; i < s.masks.size(); ++i)
      if (s.masks[i].first != ref.masks[i].first)
        throw validation_error("sources disagree on image ids: '" +
                               s.masks[i].first + "' in '" + s.source +
                               "' vs '" + ref.masks[i].first + "' in '" +
                               ref.source + "'");
  }

  const std::size_t n_images = ref.masks.size();
  const std::size_t n_sources = sorted.size();
  std::vector<ImageComponents> slots(n_images * n_sources);
  parallel_for(slots.size(), jobs, [&](std::size_t w) {
    const std::size_t i = w / n_sources;
    const MaskSet& s = sorted[w % n_sources];
    Labeling lab =
        connected_components(s.masks[i].second, crack_channel, connectivity);
    ImageComponents& ic = slots[w];
    ic.image = s.masks[i].first;
    ic.source = s.source;
    for (auto& c : lab.components)
      if (c.area >= min_area) ic.components.push_back(c);
  });

  CrackSummary out;
  std::map<std::string, std::vector<double>> counts_by_source;
  for (auto& ic : slots) {
    const int count = static_cast<int>(ic.components.size());
    out.rows.push_back({ic.image, ic.source, count});
    counts_by_source[ic.source].push_back(count);
    out.details.push_back(std::move(ic));
  }
  for (auto& [source, counts] : counts_by_source)
    out.stats[source] = dist_stats(std::move(counts));
  return out;
}

// ---------------------------------------------------------------------------
// Exports

inline std::string counts_csv(const CrackSummary& s) {
  std::string out = "image,source,count\n";
  for (const auto& r : s.rows)
    out += r.image + "," + r.source + "," + std::to_string(r.count) + "\n";
  return out;
}

inline std::string components_csv(const CrackSummary& s) {
  std::string out =
      "image,source,label,area,perimeter,bbox_y0,bbox_x0,bbox_y1,bbox_x1,"
      "centroid_y,centroid_x,slope\n";
  char line[256];
  for (const auto& d : s.details)
    for (const auto& c : d.components) {
      std::snprintf(line, sizeof(line),
                    ",%d,%lld,%lld,%d,%d,%d,%d,%.9f,%.9f,%.9f\n", c.label,
                    static_cast<long long>(c.area),
                    static_cast<long long>(c.perimeter), c.bbox.y0, c.bbox.x0,
                    c.bbox.y1, c.bbox.x1, c.centroid_y, c.centroid_x, c.slope);
      out += d.image + "," + d.source + line;
    }
  return out;
}

inline std::string stats_text(const CrackSummary& s) {
  std::string out;
  char line[200];
  for (const auto& [source, st] : s.stats) {
    std::snprintf(line, sizeof(line),
                  "%-12s n %4zu  mean %.6f  median %.6f  sd %.6f  q1 %.6f  "
                  "q3 %.6f\n",
                  source.c_str(), st.n, st.mean, st.median, st.sd, st.q1,
                  st.q3);
    out += line;
  }
  return out;
}

}  // namespace mss
