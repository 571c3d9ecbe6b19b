#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mss/annotation.hpp"
#include "mss/common.hpp"
#include "mss/image.hpp"
#include "mss/mask.hpp"
#include "mss/random.hpp"
#include "mss/raster.hpp"
#include "mss/serialize.hpp"

namespace mss {

/// Knobs for the deterministic EL-cell lookalike generator.
struct SynthConfig {
  int size = 128;
  int busbar_count = 2;
  int busbar_width = 6;
  int crack_min = 1;
  int crack_max = 3;
  double crack_step = 3.0;
  double crack_turn_std = 0.35;   // radians, heading change per step
  double crack_thickness = 2.0;
  double blob_prob = 0.7;         // fill probability per blob slot (2 slots)
  int blob_rmin = 2;
  int blob_rmax = 5;
  int corner_radius = 10;         // rounded-rectangle crop -> non-cell
  double noise_std = 0.02;
  double background = 0.55;
  std::uint64_t seed = 0;

  void validate() const {
    if (size < 16)
      throw validation_error("synth size must be >= 16, got " +
                             std::to_string(size));
    if (busbar_count < 0 || busbar_width < 1)
      throw validation_error("busbar count/width out of range");
    if (busbar_count > 0 &&
        size / (busbar_count + 1) < busbar_width + 4)
      throw validation_error("busbars would overlap: " +
                             std::to_string(busbar_count) + " bands of " +
                             std::to_string(busbar_width) +
                             "px do not fit in " + std::to_string(size));
    if (crack_min < 0 || crack_max < crack_min)
      throw validation_error("crack count range invalid");
    if (!(crack_thickness >= 1.0))
      throw validation_error("crack thickness must be >= 1");
    if (crack_max > 0 &&
        size / crack_max < static_cast<int>(crack_thickness) + 6)
      throw validation_error("too many cracks for image size: strips of " +
                             std::to_string(size / crack_max) +
                             "px cannot hold disjoint strokes");
    if (!(crack_step >= 1.0) || crack_turn_std < 0)
      throw validation_error("crack walk parameters out of range");
    if (blob_prob < 0.0 || blob_prob > 1.0)
      throw validation_error("blob probability must be in [0,1], got " +
                             std::to_string(blob_prob));
    if (blob_rmin < 1 || blob_rmax < blob_rmin)
      throw validation_error("blob radius range invalid");
    if (blob_prob > 0 && size < 4 * blob_rmax + 8)
      throw validation_error("image too small for blobs of radius " +
                             std::to_string(blob_rmax));
    if (corner_radius < 2 || 2 * corner_radius > size)
      throw validation_error("corner radius out of range");
    if (noise_std < 0)
      throw validation_error("noise std must be >= 0");
    if (!(background > 0.0) || background > 1.0)
      throw validation_error("background level must be in (0,1]");
  }
};

struct SynthSample {
  std::string id;
  GrayImage image;
  MultiHotMask mask;
  Annotation annotation;
  std::vector<int> component_counts;       // per class, 8-connectivity
  std::vector<std::uint64_t> pixel_counts; // per class activations
};

namespace detail {

// Intensity multipliers per defect; cracks on busbars stack multiplicatively
// so overlaps read darker than either alone.
inline constexpr double kDarkLevel = 0.55;
inline constexpr double kBusbarLevel = 0.50;
inline constexpr double kCrackLevel = 0.40;

inline BitmapGeom disc_bitmap(int cx, int cy, int r) {
  BitmapGeom bm;
  bm.origin_x = cx - r;
  bm.origin_y = cy - r;
  bm.height = 2 * r + 1;
  bm.width = 2 * r + 1;
  bm.bits.assign(static_cast<std::size_t>(bm.height) * bm.width, 0);
  for (int y = 0; y < bm.height; ++y)
    for (int x = 0; x < bm.width; ++x) {
      const int dx = x - r, dy = y - r;
      if (dx * dx + dy * dy <= r * r)
        bm.bits[static_cast<std::size_t>(y) * bm.width + x] = 1;
    }
  return bm;
}

inline BitmapGeom corner_bitmap(int size, int r, bool right, bool bottom) {
  BitmapGeom bm;
  bm.origin_x = right ? size - r : 0;
  bm.origin_y = bottom ? size - r : 0;
  bm.height = r;
  bm.width = r;
  bm.bits.assign(static_cast<std::size_t>(r) * r, 0);
  const double cx = right ? size - r : r;
  const double cy = bottom ? size - r : r;
  for (int y = 0; y < r; ++y)
    for (int x = 0; x < r; ++x) {
      const double px = bm.origin_x + x + 0.5;
      const double py = bm.origin_y + y + 0.5;
      const double dx = px - cx, dy = py - cy;
      if (dx * dx + dy * dy > static_cast<double>(r) * r)
        bm.bits[static_cast<std::size_t>(y) * r + x] = 1;
    }
  return bm;
}

}  // namespace detail

/// Fully determined by (config.seed, index). Busbars are evenly spaced
/// vertical bands; cracks are random walks crossing the full width (and so
/// every band); blobs and rounded corners land on their own planes. The mask
/// is the rasterization of the emitted annotation, never a separate drawing.
inline SynthSample generate_sample(const SynthConfig& cfg, int index) {
  cfg.validate();
  const ClassSet classes = ClassSet::defaults();
  Rng rng(mix_seed(cfg.seed, 0x53594E5448ull ^ static_cast<std::uint64_t>(index)));
  const int S = cfg.size;

  SynthSample out;
  char name[32];
  std::snprintf(name, sizeof(name), "synth%04d", index);
  out.id = name;

  Annotation& ann = out.annotation;
  ann.image = out.id + std::string(".png");
  ann.height = S;
  ann.width = S;

  // non-cell corners
  for (int corner = 0; corner < 4; ++corner)
    ann.objects.push_back({"non-cell",
                           detail::corner_bitmap(S, cfg.corner_radius,
                                                 corner & 1, corner & 2)});

  // busbars: vertical bands at even spacing
  for (int b = 0; b < cfg.busbar_count; ++b) {
    const double cx = static_cast<double>(S) * (b + 1) / (cfg.busbar_count + 1);
    const double x0 = cx - cfg.busbar_width / 2.0;
    const double x1 = cx + cfg.busbar_width / 2.0;
    ann.objects.push_back(
        {"busbar", PolygonGeom{{{x0, 0}, {x1, 0},
                                {x1, double(S)}, {x0, double(S)}}}});
  }

  // cracks: one random walk per horizontal strip, spanning the full width
  const int n_cracks =
      cfg.crack_min + static_cast<int>(rng.below(
                          static_cast<std::uint64_t>(cfg.crack_max) -
                          cfg.crack_min + 1));
  const double margin = cfg.crack_thickness / 2.0 + 2.0;
  for (int i = 0; i < n_cracks; ++i) {
    const double lo = static_cast<double>(S) * i / n_cracks + margin;
    const double hi = static_cast<double>(S) * (i + 1) / n_cracks - margin;
    PolylineGeom line;
    line.thickness = cfg.crack_thickness;
    double x = 0.0;
    double y = lo + rng.uniform() * (hi - lo);
    double heading = 0.0;
    line.points.push_back({x, y});
    while (x < S) {
      heading += rng.normal(0.0, cfg.crack_turn_std);
      const double cap = 1.0471975511965976;  // 60 degrees
      if (heading > cap) heading = cap;
      if (heading < -cap) heading = -cap;
      x += cfg.crack_step * std::cos(heading);
      y += cfg.crack_step * std::sin(heading);
      if (y < lo) y = lo;
      if (y > hi) y = hi;
      if (x > S) x = S;
      line.points.push_back({x, y});
    }
    ann.objects.push_back({"crack", std::move(line)});
  }

  // dark blobs: two slots in disjoint half-planes so components never merge
  int n_blobs = 0;
  for (int slot = 0; slot < 2; ++slot) {
    if (rng.uniform() >= cfg.blob_prob) continue;
    const int r =
        cfg.blob_rmin + static_cast<int>(rng.below(
                            static_cast<std::uint64_t>(cfg.blob_rmax) -
                            cfg.blob_rmin + 1));
    const int x_lo = slot == 0 ? r + 1 : S / 2 + r + 2;
    const int x_hi = slot == 0 ? S / 2 - r - 2 : S - r - 2;
    const int y_lo = r + 1, y_hi = S - r - 2;
    const int cx = x_lo + static_cast<int>(rng.below(
                              static_cast<std::uint64_t>(x_hi) - x_lo + 1));
    const int cy = y_lo + static_cast<int>(rng.below(
                              static_cast<std::uint64_t>(y_hi) - y_lo + 1));
    ann.objects.push_back({"dark", detail::disc_bitmap(cx, cy, r)});
    ++n_blobs;
  }

  out.mask = rasterize(ann, classes);

  // paint the image straight from the mask planes
  out.image = GrayImage(S, S);
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  const std::uint8_t* dark = out.mask.plane(classes.index_of("dark"));
  const std::uint8_t* busbar = out.mask.plane(classes.index_of("busbar"));
  const std::uint8_t* crack = out.mask.plane(classes.index_of("crack"));
  const std::uint8_t* noncell = out.mask.plane(classes.index_of("non-cell"));
  for (std::size_t p = 0; p < plane; ++p) {
    double v = cfg.background;
    if (dark[p]) v *= detail::kDarkLevel;
    if (busbar[p]) v *= detail::kBusbarLevel;
    if (crack[p]) v *= detail::kCrackLevel;
    if (noncell[p]) v = 0.0;
    out.image.pixels[p] = static_cast<float>(v);
  }
  if (cfg.noise_std > 0) {
    for (std::size_t p = 0; p < plane; ++p) {
      double v = out.image.pixels[p] + rng.normal(0.0, cfg.noise_std);
      out.image.pixels[p] =
          static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
    }
  }

  out.component_counts = {n_blobs, cfg.busbar_count, n_cracks, 4};
  out.pixel_counts.assign(4, 0);
  for (int c = 0; c < 4; ++c) {
    const std::uint8_t* pl = out.mask.plane(c);
    for (std::size_t p = 0; p < plane; ++p) out.pixel_counts[c] += pl[p];
  }
  return out;
}

struct CorpusSummary {
  int count = 0;
  std::vector<std::string> ids;
  std::vector<std::vector<int>> component_counts;  // [n][class]
  std::vector<std::uint64_t> class_pixels;         // totals per class
  std::uint64_t total_pixels = 0;
  std::uint32_t digest = 0;
};

/// Emits images/ + annotations/ + masks/ + ground_truth.json; byte-identical
/// for a given config.
inline CorpusSummary generate_corpus(const SynthConfig& cfg, int n,
                                     const std::filesystem::path& out_dir,
                                     int jobs = 1) {
  cfg.validate();
  if (n < 1)
    throw validation_error("corpus size must be >= 1, got " +
                           std::to_string(n));
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "annotations");
  fs::create_directories(out_dir / "masks");

  const ClassSet classes = ClassSet::defaults();
  std::vector<SynthSample> samples(n);
  parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t i) {
    SynthSample s = generate_sample(cfg, static_cast<int>(i));
    save_png_gray(out_dir / "images" / (s.id + ".png"), s.image, 8);
    write_text_file(out_dir / "annotations" / (s.id + ".json"),
                    write_annotation(s.annotation));
    save_mask(s.mask, classes.names, out_dir / "masks" / (s.id + ".mssm"));
    s.image = GrayImage();  // drop pixels, keep bookkeeping
    s.mask = MultiHotMask();
    samples[i] = std::move(s);
  });

  CorpusSummary sum;
  sum.count = n;
  sum.class_pixels.assign(classes.size(), 0);
  nlohmann::ordered_json gt;
  gt["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : samples) {
    sum.ids.push_back(s.id);
    sum.component_counts.push_back(s.component_counts);
    for (int c = 0; c < classes.size(); ++c)
      sum.class_pixels[c] += s.pixel_counts[c];
    sum.total_pixels += static_cast<std::uint64_t>(cfg.size) * cfg.size;
    nlohmann::ordered_json row;
    row["id"] = s.id;
    for (int c = 0; c < classes.size(); ++c) {
      row["components"][classes.names[c]] = s.component_counts[c];
      row["pixels"][classes.names[c]] = s.pixel_counts[c];
    }
    gt["samples"].push_back(std::move(row));
  }
  for (int c = 0; c < classes.size(); ++c)
    gt["class_pixels"][classes.names[c]] = sum.class_pixels[c];
  gt["total_pixels"] = sum.total_pixels;
  write_text_file(out_dir / "ground_truth.json", gt.dump(2) + "\n");

  sum.digest = digest_directory(out_dir);
  return sum;
}

}  // namespace mss
