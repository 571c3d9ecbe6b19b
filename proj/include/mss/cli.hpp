#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include "mss/analyze.hpp"
#include "mss/annotation.hpp"
#include "mss/common.hpp"
#include "mss/dataset.hpp"
#include "mss/eval.hpp"
#include "mss/image.hpp"
#include "mss/synth.hpp"
#include "mss/train.hpp"
#include "mss/unet.hpp"

namespace mss {

struct NormalizeConfig {
  std::vector<float> mean = {kImagenetMean[0], kImagenetMean[1],
                             kImagenetMean[2]};
  std::vector<float> std_dev = {kImagenetStd[0], kImagenetStd[1],
                                kImagenetStd[2]};
};

/// Union of every module's knobs, loaded from one JSON file and then
/// selectively overridden by command-line flags.
struct RunConfig {
  std::uint64_t seed = 0;
  int jobs = 1;
  double threshold = 0.5;
  ClassSet classes = ClassSet::defaults();
  SynthConfig synth;      // synth.seed is replaced by `seed` at run time
  int synth_count = 8;
  int target_size = 256;  // prepare output resolution
  std::string source_tag = "corpus";
  UNetConfig network;
  TrainConfig training;
  NormalizeConfig normalize;
  int connectivity = 8;
  int min_area = 0;
};

namespace detail {

inline void expect_keys(const nlohmann::json& obj, const std::string& section,
                        std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw validation_error("config: unknown key '" +
                             (section.empty() ? it.key()
                                              : section + "." + it.key()) +
                             "'");
  }
}

template <typename T>
void get_if(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

inline void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v))
    throw numeric_error(what + " is not finite (NaN or infinity)");
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text,
                                  const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error("config " + origin + " is not valid JSON: " + e.what());
  }
  if (!j.is_object())
    throw parse_error("config " + origin + " must be a JSON object");

  RunConfig rc;
  detail::expect_keys(j, "",
                      {"seed", "jobs", "threshold", "classes", "synth",
                       "prepare", "network", "training", "normalize",
                       "analyze"});
  detail::get_if(j, "seed", rc.seed);
  detail::get_if(j, "jobs", rc.jobs);
  detail::get_if(j, "threshold", rc.threshold);
  if (j.contains("classes"))
    rc.classes = ClassSet(j.at("classes").get<std::vector<std::string>>());

  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    detail::expect_keys(
        s, "synth",
        {"count", "size", "busbar_count", "busbar_width", "crack_min",
         "crack_max", "crack_step", "crack_turn_std", "crack_thickness",
         "blob_prob", "blob_rmin", "blob_rmax", "corner_radius", "noise_std",
         "background"});
    detail::get_if(s, "count", rc.synth_count);
    detail::get_if(s, "size", rc.synth.size);
    detail::get_if(s, "busbar_count", rc.synth.busbar_count);
    detail::get_if(s, "busbar_width", rc.synth.busbar_width);
    detail::get_if(s, "crack_min", rc.synth.crack_min);
    detail::get_if(s, "crack_max", rc.synth.crack_max);
    detail::get_if(s, "crack_step", rc.synth.crack_step);
    detail::get_if(s, "crack_turn_std", rc.synth.crack_turn_std);
    detail::get_if(s, "crack_thickness", rc.synth.crack_thickness);
    detail::get_if(s, "blob_prob", rc.synth.blob_prob);
    detail::get_if(s, "blob_rmin", rc.synth.blob_rmin);
    detail::get_if(s, "blob_rmax", rc.synth.blob_rmax);
    detail::get_if(s, "corner_radius", rc.synth.corner_radius);
    detail::get_if(s, "noise_std", rc.synth.noise_std);
    detail::get_if(s, "background", rc.synth.background);
  }

  if (j.contains("prepare")) {
    const auto& p = j.at("prepare");
    detail::expect_keys(p, "prepare", {"target_size", "source_tag"});
    detail::get_if(p, "target_size", rc.target_size);
    detail::get_if(p, "source_tag", rc.source_tag);
  }

  if (j.contains("network")) {
    const auto& n = j.at("network");
    detail::expect_keys(n, "network",
                        {"in_channels", "out_channels", "depth", "base_width",
                         "input_size"});
    detail::get_if(n, "in_channels", rc.network.in_channels);
    detail::get_if(n, "out_channels", rc.network.out_channels);
    detail::get_if(n, "depth", rc.network.depth);
    detail::get_if(n, "base_width", rc.network.base_width);
    detail::get_if(n, "input_size", rc.network.input_size);
  }

  if (j.contains("training")) {
    const auto& t = j.at("training");
    detail::expect_keys(t, "training",
                        {"learning_rate", "max_epochs", "patience",
                         "batch_size", "lr_grid", "outer_folds", "optimizer"});
    detail::get_if(t, "learning_rate", rc.training.learning_rate);
    detail::get_if(t, "max_epochs", rc.training.max_epochs);
    detail::get_if(t, "patience", rc.training.patience);
    detail::get_if(t, "batch_size", rc.training.batch_size);
    detail::get_if(t, "lr_grid", rc.training.lr_grid);
    detail::get_if(t, "outer_folds", rc.training.outer_folds);
    if (t.contains("optimizer"))
      rc.training.optimizer =
          optimizer_from_string(t.at("optimizer").get<std::string>());
  }

  if (j.contains("normalize")) {
    const auto& n = j.at("normalize");
    detail::expect_keys(n, "normalize", {"mean", "std"});
    detail::get_if(n, "mean", rc.normalize.mean);
    detail::get_if(n, "std", rc.normalize.std_dev);
    if (rc.normalize.mean.size() != rc.normalize.std_dev.size())
      throw validation_error("config: normalize.mean and normalize.std must "
                             "have the same length");
  }

  if (j.contains("analyze")) {
    const auto& a = j.at("analyze");
    detail::expect_keys(a, "analyze", {"connectivity", "min_area"});
    detail::get_if(a, "connectivity", rc.connectivity);
    detail::get_if(a, "min_area", rc.min_area);
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw io_error("config file not found: " + path.string());
  return parse_run_config(read_text_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Shared plumbing

namespace detail {

inline std::vector<SampleRecord> load_records(
    const std::filesystem::path& data_dir, const std::string& manifest,
    const NormalizeConfig& norm, int jobs) {
  const auto entries = read_manifest(data_dir / manifest);
  std::vector<SampleRecord> recs(entries.size());
  parallel_for(entries.size(), jobs, [&](std::size_t i) {
    recs[i] = load_record(data_dir, entries[i],
                          std::span<const float>(norm.mean),
                          std::span<const float>(norm.std_dev));
  });
  return recs;
}

inline void require_new_dir(const std::filesystem::path& dir,
                            const char* what) {
  if (std::filesystem::exists(dir))
    throw io_error(std::string(what) + " already exists: " + dir.string() +
                   " (run directories are append-only)");
}

inline void check_curves_finite(const FitResult& fit) {
  for (double v : fit.train_curve) require_finite(v, "train loss");
  for (double v : fit.val_curve) require_finite(v, "validation loss");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands. Each throws on failure; the driver maps exception types to
// exit codes.

inline CorpusSummary cmd_synth(const RunConfig& rc,
                               const std::filesystem::path& out, int count) {
  if (count < 1)
    throw usage_error("--n must be >= 1, got " + std::to_string(count));
  SynthConfig sc = rc.synth;
  sc.seed = rc.seed;
  const CorpusSummary sum = generate_corpus(sc, count, out, rc.jobs);
  std::printf("synth: %d images -> %s\n", sum.count, out.string().c_str());
  std::printf("digest %08x\n", sum.digest);
  return sum;
}

inline PrepareResult cmd_prepare(const RunConfig& rc,
                                 const std::filesystem::path& corpus,
                                 const std::filesystem::path& out) {
  PrepareConfig pc;
  pc.corpus_dir = corpus;
  pc.out_dir = out;
  pc.target_size = rc.target_size;
  pc.seed = rc.seed;
  pc.jobs = rc.jobs;
  pc.source_tag = rc.source_tag;
  pc.classes = rc.classes;
  const PrepareResult res = prepare_corpus(pc);
  std::printf("prepare: %zu bases -> %zu train / %zu val records\n",
              res.base_count, res.train_records, res.val_records);
  return res;
}

inline FitResult cmd_train(const RunConfig& rc,
                           const std::filesystem::path& data,
                           const std::filesystem::path& out,
                           const std::filesystem::path& resume = {}) {
  detail::require_new_dir(out, "run directory");
  const auto train_recs =
      detail::load_records(data, "train_manifest.json", rc.normalize, rc.jobs);
  const auto val_recs =
      detail::load_records(data, "val_manifest.json", rc.normalize, rc.jobs);

  UNetModel model = resume.empty()
                        ? build_unet(rc.network, mix_seed(rc.seed, 0x1417C0DEull))
                        : load_weights(resume);
  TrainConfig tc = rc.training;
  tc.seed = rc.seed;
  tc.jobs = rc.jobs;
  FitResult res = fit(model, train_recs, val_recs, tc);
  detail::check_curves_finite(res);
  write_run_dir(out, model.config, tc, res, model);
  std::printf("train: %d epochs, best epoch %d, val bce %.9f -> %s\n",
              res.epochs_run, res.best_epoch + 1, res.best_val,
              out.string().c_str());
  return res;
}

inline CvResult cmd_cv(const RunConfig& rc, const std::filesystem::path& data,
                       const std::filesystem::path& out) {
  detail::require_new_dir(out, "run directory");
  std::vector<SampleRecord> bases;
  for (const char* manifest : {"train_manifest.json", "val_manifest.json"})
    for (auto& r :
         detail::load_records(data, manifest, rc.normalize, rc.jobs))
      if (r.variant == AugVariant::none) bases.push_back(std::move(r));

  TrainConfig tc = rc.training;
  tc.seed = rc.seed;
  tc.jobs = rc.jobs;
  const CvResult cv = nested_cv(rc.network, bases, tc);
  for (const auto& f : cv.folds) {
    for (double v : f.train_curve) detail::require_finite(v, "train loss");
    for (double v : f.val_curve) detail::require_finite(v, "validation loss");
  }

  std::filesystem::create_directories(out);
  write_text_file(out / "config.json",
                  config_snapshot(rc.network, tc).dump(2) + "\n");
  write_text_file(out / "cv_summary.txt", cv_report(cv));
  for (const auto& f : cv.folds) {
    FitResult curves;
    curves.train_curve = f.train_curve;
    curves.val_curve = f.val_curve;
    char name[32];
    std::snprintf(name, sizeof(name), "fold_%d_curves.csv", f.fold);
    write_text_file(out / name, curves_csv(curves));
  }
  std::fputs(cv_report(cv).c_str(), stdout);
  return cv;
}

inline void cmd_predict(const RunConfig& rc, const std::filesystem::path& data,
                        const std::string& manifest,
                        const std::filesystem::path& weights,
                        const std::filesystem::path& out) {
  const UNetModel model = load_weights(weights);
  if (model.config.out_channels != rc.classes.size())
    throw validation_error("weights produce " +
                           std::to_string(model.config.out_channels) +
                           " channels but the class set has " +
                           std::to_string(rc.classes.size()));
  const auto recs = detail::load_records(data, manifest, rc.normalize, rc.jobs);
  if (recs.empty()) throw validation_error("predict: empty manifest");
  std::filesystem::create_directories(out);

  parallel_for(recs.size(), rc.jobs, [&](std::size_t i) {
    const SampleRecord& r = recs[i];
    const Tensor probs =
        predict_probabilities(model, detail::as_batch(r.image));
    for (std::size_t k = 0; k < probs.size(); ++k)
      if (!std::isfinite(probs[k]))
        throw numeric_error("prediction for '" + r.id +
                            "' contains a non-finite probability");
    const int c = probs.extent(1), h = probs.extent(2), w = probs.extent(3);
    for (int ch = 0; ch < c; ++ch) {
      GrayImage img(h, w);
      const float* src =
          probs.data() + static_cast<std::size_t>(ch) * h * w;
      std::copy(src, src + img.pixels.size(), img.pixels.begin());
      save_png_gray(out / (r.id + "_prob_" + rc.classes.names[ch] + ".png"),
                    img, 16);
    }
    save_mask(binarize(probs, rc.threshold), rc.classes.names,
              out / (r.id + "_pred.mssm"));
  });
  std::printf("predict: %zu records x %d channels -> %s\n", recs.size(),
              rc.classes.size(), out.string().c_str());
}

inline MetricSuite cmd_evaluate(const RunConfig& rc,
                                const std::filesystem::path& data,
                                const std::string& manifest,
                                const std::filesystem::path& weights,
                                const std::filesystem::path& pred,
                                const std::filesystem::path& report_out = {}) {
  if (weights.empty() == pred.empty())
    throw usage_error("evaluate needs exactly one of --weights or --pred");
  const auto recs = detail::load_records(data, manifest, rc.normalize, rc.jobs);

  MetricSuite suite;
  bool with_bce = false;
  if (!weights.empty()) {
    const UNetModel model = load_weights(weights);
    const EvalResult res = evaluate_corpus(model, recs, rc.threshold, rc.jobs);
    detail::require_finite(res.overall.bce, "corpus bce");
    suite = res.overall;
    with_bce = true;
  } else {
    if (recs.empty()) throw validation_error("evaluate: empty corpus");
    ConfusionCounts total;
    for (const auto& r : recs) {
      const MultiHotMask pm = load_mask(pred / (r.id + "_pred.mssm")).mask;
      total += confusion(pm, r.mask);
    }
    suite = metric_suite(total);
  }
  const std::string report = format_report(suite, rc.classes.names, with_bce);
  std::fputs(report.c_str(), stdout);
  if (!report_out.empty()) write_text_file(report_out, report);
  return suite;
}

inline CrackSummary cmd_analyze(const RunConfig& rc,
                                const std::filesystem::path& data,
                                const std::string& manifest,
                                const std::filesystem::path& pred,
                                const std::filesystem::path& out,
                                int crack_channel = -1) {
  if (crack_channel < 0) {
    crack_channel = rc.classes.index_of("crack");
    if (crack_channel < 0)
      throw validation_error(
          "no 'crack' class in the class set; pass --channel explicitly");
  }
  const auto recs = detail::load_records(data, manifest, rc.normalize, rc.jobs);
  if (recs.empty()) throw validation_error("analyze: empty corpus");

  std::vector<MaskSet> sources(1);
  sources[0].source = "gt";
  for (const auto& r : recs) sources[0].masks.emplace_back(r.id, r.mask);
  if (!pred.empty()) {
    MaskSet mp;
    mp.source = "model";
    for (const auto& r : recs)
      mp.masks.emplace_back(r.id, load_mask(pred / (r.id + "_pred.mssm")).mask);
    sources.push_back(std::move(mp));
  }

  const CrackSummary sum = crack_count_summary(
      sources, crack_channel, rc.connectivity, rc.min_area, rc.jobs);
  std::filesystem::create_directories(out);
  write_text_file(out / "counts.csv", counts_csv(sum));
  write_text_file(out / "components.csv", components_csv(sum));
  write_text_file(out / "stats.txt", stats_text(sum));
  std::fputs(stats_text(sum).c_str(), stdout);
  return sum;
}

}  // namespace mss
