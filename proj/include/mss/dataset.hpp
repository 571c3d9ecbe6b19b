#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mss/annotation.hpp"
#include "mss/common.hpp"
#include "mss/image.hpp"
#include "mss/mask.hpp"
#include "mss/random.hpp"
#include "mss/raster.hpp"
#include "mss/tensor.hpp"

namespace mss {

enum class AugVariant { none, flip_x, flip_y, flip_xy };

inline const char* to_string(AugVariant v) {
  switch (v) {
    case AugVariant::none: return "none";
    case AugVariant::flip_x: return "flip_x";
    case AugVariant::flip_y: return "flip_y";
    case AugVariant::flip_xy: return "flip_xy";
  }
  return "?";
}

inline AugVariant variant_from_string(const std::string& s) {
  if (s == "none") return AugVariant::none;
  if (s == "flip_x") return AugVariant::flip_x;
  if (s == "flip_y") return AugVariant::flip_y;
  if (s == "flip_xy") return AugVariant::flip_xy;
  throw parse_error("unknown augmentation variant '" + s + "'");
}

inline std::pair<bool, bool> variant_flags(AugVariant v) {
  return {v == AugVariant::flip_x || v == AugVariant::flip_xy,
          v == AugVariant::flip_y || v == AugVariant::flip_xy};
}

struct SampleRecord {
  std::string id;
  std::string source;
  std::string base_id;
  AugVariant variant = AugVariant::none;
  Tensor image;       // [C,H,W]
  MultiHotMask mask;  // one plane per class
};

/// Flips H (dim 1) and/or W (dim 2) of a [C,H,W] tensor.
inline Tensor flip_tensor_hw(const Tensor& t, bool flip_x, bool flip_y) {
  require_rank(t, 3, "flip_tensor_hw input");
  const int c = t.extent(0), h = t.extent(1), w = t.extent(2);
  Tensor out(t.shape());
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y) {
      const int sy = flip_y ? h - 1 - y : y;
      const float* src =
          t.data() + (static_cast<std::size_t>(ci) * h + sy) * w;
      float* dst = out.data() + (static_cast<std::size_t>(ci) * h + y) * w;
      if (flip_x)
        for (int x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
      else
        std::copy(src, src + w, dst);
    }
  return out;
}

inline std::string variant_suffix(AugVariant v) {
  switch (v) {
    case AugVariant::none: return "_none";
    case AugVariant::flip_x: return "_fx";
    case AugVariant::flip_y: return "_fy";
    case AugVariant::flip_xy: return "_fxy";
  }
  return "_?";
}

/// Expands one base record into the 4 flip variants (including the
/// untouched original). Image and mask flip identically.
inline std::vector<SampleRecord> flip_augment(const SampleRecord& rec) {
  if (rec.variant != AugVariant::none)
    throw validation_error("record '" + rec.id +
                           "' is already an augmented variant (" +
                           to_string(rec.variant) + ")");
  std::vector<SampleRecord> out;
  out.reserve(4);
  for (AugVariant v : {AugVariant::none, AugVariant::flip_x,
                       AugVariant::flip_y, AugVariant::flip_xy}) {
    const auto [fx, fy] = variant_flags(v);
    SampleRecord r;
    r.id = rec.base_id + variant_suffix(v);
    r.source = rec.source;
    r.base_id = rec.base_id;
    r.variant = v;
    r.image = flip_tensor_hw(rec.image, fx, fy);
    r.mask = flip_mask(rec.mask, fx, fy);
    out.push_back(std::move(r));
  }
  return out;
}

struct SplitResult {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};

/// 4:1 split over BASE image ids (augmentation happens after, so every
/// variant follows its base). Output lists are sorted; membership is decided
/// by a seeded shuffle.
inline SplitResult split_dataset(std::vector<std::string> base_ids,
                                 std::uint64_t seed) {
  const std::size_t n = base_ids.size();
  if (n < 5)
    throw validation_error("need at least 5 base images to split 4:1, got " +
                           std::to_string(n));
  std::sort(base_ids.begin(), base_ids.end());
  for (std::size_t i = 1; i < n; ++i)
    if (base_ids[i] == base_ids[i - 1])
      throw validation_error("duplicate base id '" + base_ids[i] + "'");

  Rng rng(mix_seed(seed, 0x5EED5711ull));
  fisher_yates(base_ids, rng);
  const std::size_t val_count = (n + 2) / 5;  // round(n/5)
  SplitResult out;
  out.val_ids.assign(base_ids.begin(), base_ids.begin() + val_count);
  out.train_ids.assign(base_ids.begin() + val_count, base_ids.end());
  std::sort(out.val_ids.begin(), out.val_ids.end());
  std::sort(out.train_ids.begin(), out.train_ids.end());
  return out;
}

struct DatasetStats {
  std::size_t record_count = 0;
  std::uint64_t total_pixels = 0;
  double cardinality = 0;            // label activations per pixel
  double density = 0;                // cardinality / |classes|
  double single_label_fraction = 0;  // pixels with exactly one active label
  std::vector<double> per_image_frequency;
  std::vector<double> per_pixel_frequency;
  std::vector<double> imbalance_ratio;
  double mean_imbalance_ratio = 0;
};

/// ratio_c = freq_c / max_c freq_c; 1 for the most frequent class. An
/// all-zero frequency vector yields all-zero ratios.
inline std::vector<double> imbalance_from_frequencies(
    const std::vector<double>& freqs) {
  if (freqs.empty()) throw validation_error("empty frequency vector");
  const double top = *std::max_element(freqs.begin(), freqs.end());
  std::vector<double> ratios(freqs.size(), 0.0);
  if (top > 0)
    for (std::size_t i = 0; i < freqs.size(); ++i) ratios[i] = freqs[i] / top;
  return ratios;
}

inline DatasetStats compute_dataset_stats(std::span<const MultiHotMask> masks,
                                          const ClassSet& classes) {
  if (masks.empty()) throw validation_error("empty corpus: no masks to count");
  const int c = classes.size();

  std::uint64_t total_pixels = 0;
  std::uint64_t total_activations = 0;
  std::uint64_t single_label_pixels = 0;
  std::vector<std::uint64_t> class_activations(c, 0);
  std::vector<std::uint64_t> images_with_class(c, 0);

  for (const auto& mask : masks) {
    if (mask.channels != c)
      throw shape_error("mask has " + std::to_string(mask.channels) +
                        " channels, class set has " + std::to_string(c));
    const std::size_t plane = static_cast<std::size_t>(mask.height) * mask.width;
    total_pixels += plane;
    std::vector<bool> active(c, false);
    for (std::size_t p = 0; p < plane; ++p) {
      int labels = 0;
      for (int ci = 0; ci < c; ++ci) {
        if (mask.values[static_cast<std::size_t>(ci) * plane + p]) {
          ++labels;
          ++class_activations[ci];
          active[ci] = true;
        }
      }
      total_activations += labels;
      if (labels == 1) ++single_label_pixels;
    }
    for (int ci = 0; ci < c; ++ci)
      if (active[ci]) ++images_with_class[ci];
  }

  DatasetStats s;
  s.record_count = masks.size();
  s.total_pixels = total_pixels;
  s.cardinality = static_cast<double>(total_activations) / total_pixels;
  s.density = s.cardinality / c;
  s.single_label_fraction =
      static_cast<double>(single_label_pixels) / total_pixels;
  s.per_image_frequency.resize(c);
  s.per_pixel_frequency.resize(c);
  for (int ci = 0; ci < c; ++ci) {
    s.per_image_frequency[ci] =
        static_cast<double>(images_with_class[ci]) / masks.size();
    s.per_pixel_frequency[ci] =
        static_cast<double>(class_activations[ci]) / total_pixels;
  }
  s.imbalance_ratio = imbalance_from_frequencies(s.per_pixel_frequency);
  s.mean_imbalance_ratio = 0;
  for (double r : s.imbalance_ratio) s.mean_imbalance_ratio += r;
  s.mean_imbalance_ratio /= c;
  return s;
}

inline DatasetStats compute_dataset_stats(
    const std::vector<SampleRecord>& records, const ClassSet& classes) {
  std::vector<MultiHotMask> masks;
  masks.reserve(records.size());
  for (const auto& r : records) masks.push_back(r.mask);
  return compute_dataset_stats(masks, classes);
}

inline nlohmann::ordered_json stats_to_json(const DatasetStats& s,
                                            const ClassSet& classes) {
  nlohmann::ordered_json j;
  j["record_count"] = s.record_count;
  j["total_pixels"] = s.total_pixels;
  j["cardinality"] = s.cardinality;
  j["density"] = s.density;
  j["single_label_fraction"] = s.single_label_fraction;
  j["classes"] = nlohmann::ordered_json::object();
  for (int c = 0; c < classes.size(); ++c) {
    nlohmann::ordered_json k;
    k["per_image_frequency"] = s.per_image_frequency[c];
    k["per_pixel_frequency"] = s.per_pixel_frequency[c];
    k["imbalance_ratio"] = s.imbalance_ratio[c];
    j["classes"][classes.names[c]] = std::move(k);
  }
  j["mean_imbalance_ratio"] = s.mean_imbalance_ratio;
  return j;
}

struct ManifestEntry {
  std::string id;
  std::string base_id;
  std::string source;
  AugVariant variant = AugVariant::none;
  std::string image_path;  // relative to the manifest's directory
  std::string mask_path;
};

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<ManifestEntry>& entries) {
  nlohmann::ordered_json j;
  j["records"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json r;
    r["id"] = e.id;
    r["base_id"] = e.base_id;
    r["source"] = e.source;
    r["variant"] = to_string(e.variant);
    r["image"] = e.image_path;
    r["mask"] = e.mask_path;
    j["records"].push_back(std::move(r));
  }
  write_text_file(path, j.dump(2) + "\n");
}

inline std::vector<ManifestEntry> read_manifest(
    const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error("manifest " + path.string() + " is not valid JSON: " +
                      e.what());
  }
  if (!j.is_object() || !j.contains("records") || !j.at("records").is_array())
    throw parse_error("manifest " + path.string() +
                      " must be an object with a 'records' array");
  std::vector<ManifestEntry> out;
  for (const auto& r : j.at("records")) {
    ManifestEntry e;
    for (const char* key : {"id", "base_id", "source", "variant", "image",
                            "mask"})
      if (!r.contains(key) || !r.at(key).is_string())
        throw parse_error("manifest record missing string field '" +
                          std::string(key) + "'");
    e.id = r.at("id").get<std::string>();
    e.base_id = r.at("base_id").get<std::string>();
    e.source = r.at("source").get<std::string>();
    e.variant = variant_from_string(r.at("variant").get<std::string>());
    e.image_path = r.at("image").get<std::string>();
    e.mask_path = r.at("mask").get<std::string>();
    out.push_back(std::move(e));
  }
  std::sort(out.begin(), out.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) {
              return a.id < b.id;
            });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].id == out[i - 1].id)
      throw validation_error("duplicate record id '" + out[i].id +
                             "' in manifest " + path.string());
  return out;
}

/// Loads one prepared record: PNG image -> replicate/normalize, mask from
/// container. mean/std length defines the tensor channel count.
inline SampleRecord load_record(const std::filesystem::path& manifest_dir,
                                const ManifestEntry& entry,
                                std::span<const float> mean,
                                std::span<const float> std_dev) {
  SampleRecord rec;
  rec.id = entry.id;
  rec.source = entry.source;
  rec.base_id = entry.base_id;
  rec.variant = entry.variant;
  const GrayImage img = load_png_gray(manifest_dir / entry.image_path);
  rec.image = normalize_image(img, mean, std_dev);
  auto loaded = load_mask(manifest_dir / entry.mask_path);
  rec.mask = std::move(loaded.mask);
  if (rec.mask.height != img.height || rec.mask.width != img.width)
    throw shape_error("record '" + entry.id + "': mask " +
                      std::to_string(rec.mask.height) + "x" +
                      std::to_string(rec.mask.width) + " does not match image " +
                      std::to_string(img.height) + "x" +
                      std::to_string(img.width));
  return rec;
}

struct PrepareConfig {
  std::filesystem::path corpus_dir;
  std::filesystem::path out_dir;
  int target_size = 256;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string source_tag = "corpus";
  ClassSet classes = ClassSet::defaults();
};

struct PrepareResult {
  std::size_t base_count = 0;
  std::size_t train_records = 0;
  std::size_t val_records = 0;
  DatasetStats stats;  // over all augmented records
};

/// Full pipeline: parse + rasterize + resize + augment + split. Emits 16-bit
/// PNGs, mask containers, train/val manifests, and a stats file.
inline PrepareResult prepare_corpus(const PrepareConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path ann_dir = cfg.corpus_dir / "annotations";
  const fs::path img_dir = cfg.corpus_dir / "images";
  if (!fs::is_directory(ann_dir))
    throw io_error("missing annotations directory: " + ann_dir.string());
  if (!fs::is_directory(img_dir))
    throw io_error("missing images directory: " + img_dir.string());

  std::vector<fs::path> ann_files;
  for (const auto& entry : fs::directory_iterator(ann_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      ann_files.push_back(entry.path());
  std::sort(ann_files.begin(), ann_files.end());
  if (ann_files.size() < 5)
    throw validation_error("need at least 5 annotated images, found " +
                           std::to_string(ann_files.size()));

  std::vector<std::string> base_ids;
  base_ids.reserve(ann_files.size());
  for (const auto& f : ann_files) base_ids.push_back(f.stem().string());
  const SplitResult split = split_dataset(base_ids, cfg.seed);

  fs::create_directories(cfg.out_dir / "images");
  fs::create_directories(cfg.out_dir / "masks");

  struct BaseOutput {
    std::vector<ManifestEntry> entries;
    std::vector<MultiHotMask> masks;
  };
  std::vector<BaseOutput> outputs(ann_files.size());

  parallel_for(ann_files.size(), cfg.jobs, [&](std::size_t i) {
    const std::string base = ann_files[i].stem().string();
    Annotation ann;
    try {
      ann = parse_annotation(read_text_file(ann_files[i]), cfg.classes);
    } catch (const validation_error& e) {
      throw parse_error("annotation " + ann_files[i].string() + ": " +
                        e.what());
    }
    const GrayImage raw = load_png_gray(img_dir / ann.image);
    if (raw.height != ann.height || raw.width != ann.width)
      throw validation_error("annotation '" + base + "' declares " +
                             std::to_string(ann.width) + "x" +
                             std::to_string(ann.height) + " but image is " +
                             std::to_string(raw.width) + "x" +
                             std::to_string(raw.height));
    const MultiHotMask full_mask = rasterize(ann, cfg.classes);
    const GrayImage img = resize_image(raw, cfg.target_size);
    const MultiHotMask mask = resize_mask(full_mask, cfg.target_size);

    for (AugVariant v : {AugVariant::none, AugVariant::flip_x,
                         AugVariant::flip_y, AugVariant::flip_xy}) {
      const auto [fx, fy] = variant_flags(v);
      const std::string id = base + variant_suffix(v);
      const GrayImage vi = flip_image(img, fx, fy);
      const MultiHotMask vm = flip_mask(mask, fx, fy);
      const std::string image_rel = "images/" + id + ".png";
      const std::string mask_rel = "masks/" + id + ".mssm";
      save_png_gray(cfg.out_dir / image_rel, vi, 16);
      save_mask(vm, cfg.classes.names, cfg.out_dir / mask_rel);
      outputs[i].entries.push_back(
          {id, base, cfg.source_tag, v, image_rel, mask_rel});
      outputs[i].masks.push_back(vm);
    }
  });

  std::vector<ManifestEntry> train_entries, val_entries;
  std::vector<MultiHotMask> all_masks;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const std::string& base = outputs[i].entries.front().base_id;
    const bool in_val = std::binary_search(split.val_ids.begin(),
                                           split.val_ids.end(), base);
    auto& side = in_val ? val_entries : train_entries;
    for (auto& e : outputs[i].entries) side.push_back(std::move(e));
    for (auto& m : outputs[i].masks) all_masks.push_back(std::move(m));
  }
  auto by_id = [](const ManifestEntry& a, const ManifestEntry& b) {
    return a.id < b.id;
  };
  std::sort(train_entries.begin(), train_entries.end(), by_id);
  std::sort(val_entries.begin(), val_entries.end(), by_id);

  write_manifest(cfg.out_dir / "train_manifest.json", train_entries);
  write_manifest(cfg.out_dir / "val_manifest.json", val_entries);

  PrepareResult res;
  res.base_count = ann_files.size();
  res.train_records = train_entries.size();
  res.val_records = val_entries.size();
  res.stats = compute_dataset_stats(all_masks, cfg.classes);
  write_text_file(cfg.out_dir / "stats.json",
                  stats_to_json(res.stats, cfg.classes).dump(2) + "\n");
  return res;
}

}  // namespace mss
