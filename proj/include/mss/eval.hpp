#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mss/common.hpp"
#include "mss/dataset.hpp"
#include "mss/mask.hpp"
#include "mss/serialize.hpp"
#include "mss/tensor.hpp"
#include "mss/unet.hpp"

namespace mss {

/// Thresholds per-channel probabilities into a multi-hot mask. The boundary
/// is inclusive: p == threshold counts as active. Channels are independent,
/// so a pixel can be set in several planes at once.
inline MultiHotMask binarize(const Tensor& probs, double threshold = 0.5) {
  const Tensor* p = &probs;
  if (probs.rank() == 4) {
    if (probs.extent(0) != 1)
      throw shape_error("binarize expects a single image, got batch of " +
                        std::to_string(probs.extent(0)));
  } else if (probs.rank() != 3) {
    throw shape_error("binarize expects [C,H,W] probabilities, got " +
                      shape_string(probs.shape()));
  }
  const int off = p->rank() == 4 ? 1 : 0;
  const int c = p->extent(off), h = p->extent(off + 1), w = p->extent(off + 2);
  MultiHotMask m(c, h, w);
  for (std::size_t i = 0; i < p->size(); ++i) {
    const float v = (*p)[i];
    if (v < 0.0f || v > 1.0f)
      throw validation_error("probability " + std::to_string(v) +
                             " outside [0,1]");
    m.values[i] = static_cast<double>(v) >= threshold ? 1 : 0;
  }
  return m;
}

struct ClassCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ClassCounts& operator+=(const ClassCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

struct ConfusionCounts {
  std::vector<ClassCounts> per_class;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    if (per_class.empty()) per_class.resize(o.per_class.size());
    if (per_class.size() != o.per_class.size())
      throw shape_error("confusion counts disagree on class count");
    for (std::size_t c = 0; c < per_class.size(); ++c)
      per_class[c] += o.per_class[c];
    return *this;
  }
};

inline ConfusionCounts confusion(const MultiHotMask& pred,
                                 const MultiHotMask& gt) {
  if (pred.channels != gt.channels || pred.height != gt.height ||
      pred.width != gt.width)
    throw shape_error("confusion: prediction is " +
                      std::to_string(pred.channels) + "x" +
                      std::to_string(pred.height) + "x" +
                      std::to_string(pred.width) + ", ground truth is " +
                      std::to_string(gt.channels) + "x" +
                      std::to_string(gt.height) + "x" +
                      std::to_string(gt.width));
  ConfusionCounts out;
  out.per_class.resize(pred.channels);
  const std::size_t plane =
      static_cast<std::size_t>(pred.height) * pred.width;
  for (int c = 0; c < pred.channels; ++c) {
    ClassCounts& k = out.per_class[c];
    const std::uint8_t* p = pred.plane(c);
    const std::uint8_t* g = gt.plane(c);
    for (std::size_t i = 0; i < plane; ++i) {
      if (p[i] && g[i])
        ++k.tp;
      else if (p[i] && !g[i])
        ++k.fp;
      else if (!p[i] && g[i])
        ++k.fn;
      else
        ++k.tn;
    }
  }
  return out;
}

struct ClassMetrics {
  double accuracy = 0, precision = 0, recall = 0, dice = 0, iou = 0;
};

struct MetricSuite {
  std::vector<ClassMetrics> per_class;
  ClassMetrics macro;
  double bce = 0.0;  // corpus BCE; filled by evaluate_corpus
};

/// Ratio with the zero-denominator convention used throughout: an undefined
/// metric (nothing to get wrong) scores 1.0. A class absent from both
/// prediction and ground truth therefore gets a perfect score instead of
/// punishing a correct "nothing here".
inline double safe_ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline MetricSuite metric_suite(const ConfusionCounts& counts) {
  if (counts.per_class.empty())
    throw validation_error("metric_suite: no classes");
  MetricSuite suite;
  suite.per_class.reserve(counts.per_class.size());
  for (const ClassCounts& k : counts.per_class) {
    ClassMetrics m;
    m.accuracy = safe_ratio(k.tp + k.tn, k.total());
    m.precision = safe_ratio(k.tp, k.tp + k.fp);
    m.recall = safe_ratio(k.tp, k.tp + k.fn);
    m.dice = safe_ratio(2 * k.tp, 2 * k.tp + k.fp + k.fn);
    m.iou = safe_ratio(k.tp, k.tp + k.fp + k.fn);
    suite.per_class.push_back(m);
  }
  const double n = static_cast<double>(suite.per_class.size());
  for (const ClassMetrics& m : suite.per_class) {
    suite.macro.accuracy += m.accuracy / n;
    suite.macro.precision += m.precision / n;
    suite.macro.recall += m.recall / n;
    suite.macro.dice += m.dice / n;
    suite.macro.iou += m.iou / n;
  }
  return suite;
}

struct ImageEval {
  std::string id;
  MetricSuite suite;
};

struct EvalResult {
  MetricSuite overall;   // counts aggregated globally, then macro-averaged
  ConfusionCounts counts;
  std::vector<ImageEval> per_image;
};

namespace detail {

inline Tensor as_batch(const Tensor& chw) {
  require_rank(chw, 3, "sample image");
  Tensor b({1, chw.extent(0), chw.extent(1), chw.extent(2)});
  std::copy(chw.data(), chw.data() + chw.size(), b.data());
  return b;
}

inline Tensor mask_to_targets(const MultiHotMask& m) {
  Tensor t({1, m.channels, m.height, m.width});
  for (std::size_t i = 0; i < m.values.size(); ++i)
    t[i] = static_cast<float>(m.values[i]);
  return t;
}

}  // namespace detail

inline EvalResult evaluate_corpus(const UNetModel& model,
                                  const std::vector<SampleRecord>& records,
                                  double threshold = 0.5, int jobs = 1) {
  if (records.empty()) throw validation_error("evaluate_corpus: empty corpus");

  struct Slot {
    ConfusionCounts counts;
    double bce = 0.0;
  };
  std::vector<Slot> slots(records.size());
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    const SampleRecord& r = records[i];
    Tensor batch = detail::as_batch(r.image);
    Tensor logits = unet_forward(model, batch);
    Tensor targets = detail::mask_to_targets(r.mask);
    slots[i].bce = bce_with_logits(logits, targets);
    MultiHotMask pred = binarize(sigmoid(logits), threshold);
    slots[i].counts = confusion(pred, r.mask);
  });

  EvalResult out;
  double bce_sum = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.counts += slots[i].counts;
    bce_sum += slots[i].bce;
    MetricSuite s = metric_suite(slots[i].counts);
    s.bce = slots[i].bce;
    out.per_image.push_back({records[i].id, std::move(s)});
  }
  out.overall = metric_suite(out.counts);
  out.overall.bce = bce_sum / static_cast<double>(records.size());
  return out;
}

/// Per-class table plus macro row, fixed formatting so reports diff cleanly.
/// The trailing BCE line is optional: mask-vs-mask comparisons have no
/// probabilities to score.
inline std::string format_report(const MetricSuite& suite,
                                 const std::vector<std::string>& class_names,
                                 bool include_bce = true) {
  if (class_names.size() != suite.per_class.size())
    throw validation_error("report: " + std::to_string(class_names.size()) +
                           " names for " +
                           std::to_string(suite.per_class.size()) + " classes");
  std::string s;
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s %9s %9s %9s %9s %9s\n", "class",
                "accuracy", "precision", "recall", "dice", "iou");
  s += line;
  auto row = [&](const std::string& name, const ClassMetrics& m) {
    std::snprintf(line, sizeof(line), "%-10s %9.6f %9.6f %9.6f %9.6f %9.6f\n",
                  name.c_str(), m.accuracy, m.precision, m.recall, m.dice,
                  m.iou);
    s += line;
  };
  for (std::size_t c = 0; c < suite.per_class.size(); ++c)
    row(class_names[c], suite.per_class[c]);
  row("macro", suite.macro);
  if (include_bce) {
    std::snprintf(line, sizeof(line), "bce %.9f\n", suite.bce);
    s += line;
  }
  return s;
}

inline void write_report(const MetricSuite& suite,
                         const std::vector<std::string>& class_names,
                         const std::filesystem::path& path,
                         bool include_bce = true) {
  write_text_file(path, format_report(suite, class_names, include_bce));
}

}  // namespace mss
