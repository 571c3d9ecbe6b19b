// Acceptance gate: each numbered criterion runs standalone and prints exactly
// one [PASS]/[FAIL] line with its key measurements.
//
//   acceptance <1..10>
//
// Exit code 0 on pass, 1 on fail, 2 on bad usage.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mss/analyze.hpp"
#include "mss/dataset.hpp"
#include "mss/eval.hpp"
#include "mss/gradcheck.hpp"
#include "mss/ops.hpp"
#include "mss/serialize.hpp"
#include "mss/synth.hpp"
#include "mss/train.hpp"
#include "mss/unet.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace mss;
using test_support::calibrate_for_gradcheck;
using test_support::cell_signature;
using test_support::count_components_flood;
using test_support::random_binary_tensor;
using test_support::random_tensor;
using test_support::weighted_sum;

namespace {

/// Collects requirement outcomes plus measurements for the summary line.
struct Gate {
  std::vector<std::string> failures;
  std::string info;

  void require(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) {
    if (!info.empty()) info += ", ";
    info += s;
  }
  bool pass() const { return failures.empty(); }
  std::string detail() const {
    std::string s;
    for (std::size_t i = 0; i < failures.size() && i < 4; ++i) {
      if (i) s += "; ";
      s += failures[i];
    }
    if (failures.size() > 4)
      s += "; +" + std::to_string(failures.size() - 4) + " more";
    return s;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* format, ...) {
  char buf[256];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("mss_acceptance_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// ---------------------------------------------------------------------------
// Criterion 1: gradient correctness

/// Per-layer checks drive the library's own finite-difference verifier with
/// inputs kept away from ReLU/argmax kinks, so every probe is informative.
void layer_checks(Gate& g, std::uint64_t seed, double tol) {
  const auto run = [&](const char* layer, const std::function<double()>& fn,
                       std::span<const GradCheckTarget> targets) {
    const auto report = finite_difference_check(fn, targets, 1e-3, tol);
    for (const auto& e : report.entries)
      g.require(e.pass, fmt("seed %llu %s.%s rel %.2e",
                            (unsigned long long)seed, layer, e.name.c_str(),
                            e.max_rel_error));
  };

  {  // conv2d, stride 1 pad 1
    Tensor x = random_tensor({2, 3, 6, 6}, mix_seed(seed, 101));
    Tensor k = random_tensor({4, 3, 3, 3}, mix_seed(seed, 102), -0.5, 0.5);
    Tensor b = random_tensor({4}, mix_seed(seed, 103));
    Tensor r = random_tensor({2, 4, 6, 6}, mix_seed(seed, 104));
    LayerGrad lg = conv2d_backward(x, k, 1, 1, r);
    const GradCheckTarget targets[] = {
        {"input", &x, &lg.input_grad},
        {"kernels", &k, &lg.param("kernels")},
        {"bias", &b, &lg.param("bias")},
    };
    run("conv2d", [&] { return weighted_sum(conv2d(x, k, b, 1, 1), r); },
        targets);
  }

  {  // conv_transpose2d, 2x2 stride 2
    Tensor x = random_tensor({2, 4, 4, 4}, mix_seed(seed, 111));
    Tensor k = random_tensor({4, 3, 2, 2}, mix_seed(seed, 112), -0.5, 0.5);
    Tensor r = random_tensor({2, 3, 8, 8}, mix_seed(seed, 113));
    LayerGrad lg = conv_transpose2d_backward(x, k, r);
    const GradCheckTarget targets[] = {
        {"input", &x, &lg.input_grad},
        {"kernels", &k, &lg.param("kernels")},
    };
    run("upconv", [&] { return weighted_sum(conv_transpose2d(x, k), r); },
        targets);
  }

  {  // relu probed away from its kink at 0
    Tensor x({2, 4, 5, 5});
    Rng rng(mix_seed(seed, 121));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double mag = rng.uniform(0.05, 1.0);
      x[i] = static_cast<float>(rng.uniform() < 0.5 ? -mag : mag);
    }
    Tensor r = random_tensor({2, 4, 5, 5}, mix_seed(seed, 122));
    Tensor din = relu_backward(x, r);
    const GradCheckTarget targets[] = {{"input", &x, &din}};
    run("relu", [&] { return weighted_sum(relu(x), r); }, targets);
  }

  {  // maxpool with well-separated window values so the argmax never flips
    Tensor x({2, 3, 6, 6});
    Rng rng(mix_seed(seed, 131));
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 3; ++c)
        for (int wy = 0; wy < 3; ++wy)
          for (int wx = 0; wx < 3; ++wx) {
            float vals[4] = {0.2f, 0.4f, 0.6f, 0.8f};
            for (int i = 3; i > 0; --i)
              std::swap(vals[i], vals[rng.below(i + 1)]);
            for (int i = 0; i < 4; ++i)
              x.at(n, c, 2 * wy + i / 2, 2 * wx + i % 2) =
                  vals[i] + static_cast<float>(rng.uniform(-0.04, 0.04));
          }
    Tensor r = random_tensor({2, 3, 3, 3}, mix_seed(seed, 132));
    const MaxPoolResult base = maxpool2d(x);
    Tensor din = maxpool2d_backward(x.shape(), base.argmax, r);
    const GradCheckTarget targets[] = {{"input", &x, &din}};
    run("maxpool", [&] { return weighted_sum(maxpool2d(x).output, r); },
        targets);
  }

  {  // concat
    Tensor a = random_tensor({1, 2, 4, 4}, mix_seed(seed, 141));
    Tensor b = random_tensor({1, 3, 4, 4}, mix_seed(seed, 142));
    Tensor r = random_tensor({1, 5, 4, 4}, mix_seed(seed, 143));
    auto [da, db] = concat_channels_backward(r, 2, 3);
    const GradCheckTarget targets[] = {{"a", &a, &da}, {"b", &b, &db}};
    run("concat", [&] { return weighted_sum(concat_channels(a, b), r); },
        targets);
  }

  {  // sigmoid + BCE as the smooth loss head
    Tensor z = random_tensor({1, 4, 5, 5}, mix_seed(seed, 151), -3.0, 3.0);
    Tensor t = random_binary_tensor({1, 4, 5, 5}, mix_seed(seed, 152));
    Tensor dz = bce_with_logits_backward(z, t);
    const GradCheckTarget targets[] = {{"logits", &z, &dz}};
    run("bce", [&] { return bce_with_logits(z, t); }, targets);
  }
}

/// End-to-end check on the full depth-2/width-4/16x16 network: probes are
/// only accepted when both perturbed forward passes stay inside the base
/// differentiability cell (same ReLU signs and pool routing). Returns the
/// failure list for one test point.
std::vector<std::string> end_to_end_at(std::uint64_t seed, int attempt,
                                       double tol) {
  std::vector<std::string> failures;
  const auto fail = [&](const std::string& s) { failures.push_back(s); };

  UNetConfig cfg;
  cfg.in_channels = 1;
  cfg.out_channels = 4;
  cfg.depth = 2;
  cfg.base_width = 4;
  cfg.input_size = 16;
  UNetModel m = build_unet(cfg, seed);
  Tensor x = random_tensor({1, 1, 16, 16}, mix_seed(seed, 161 + 10 * attempt));
  Tensor y =
      random_binary_tensor({1, 4, 16, 16}, mix_seed(seed, 162 + 10 * attempt));
  calibrate_for_gradcheck(m, x);

  UNetCache base;
  Tensor logits = unet_forward(m, x, &base);
  UNetGrads grads = unet_backward(m, base, bce_with_logits_backward(logits, y));
  const auto base_sig = cell_signature(base, cfg.depth);

  // the composite check measures error against the end-to-end gradient
  // scale; tensors whose own gradients sit at the float32 noise floor are
  // still covered at formula level by the per-layer checks
  double global_maxg = 0, gnorm_sq = 0;
  for (const auto& [name, a] : grads.grads)
    for (std::size_t k = 0; k < a.size(); ++k) {
      global_maxg = std::max(global_maxg, static_cast<double>(std::abs(a[k])));
      gnorm_sq += static_cast<double>(a[k]) * a[k];
    }
  const double gnorm = std::sqrt(gnorm_sq);

  for (std::size_t ti = 0; ti < m.params.size(); ++ti) {
    Tensor& v = m.params[ti].second;
    const Tensor& a = grads.grads[ti].second;
    double maxg = 0;
    for (std::size_t k = 0; k < a.size(); ++k)
      maxg = std::max(maxg, static_cast<double>(std::abs(a[k])));
    const double eps0 = maxg < 3e-2 ? 5e-3 : 1e-3;

    // probe the largest-gradient entries first: they carry the most signal
    // relative to the float32 forward noise floor
    std::vector<std::size_t> cand(v.size());
    std::iota(cand.begin(), cand.end(), std::size_t{0});
    std::stable_sort(cand.begin(), cand.end(), [&](std::size_t p, std::size_t q) {
      return std::abs(a[p]) > std::abs(a[q]);
    });
    if (cand.size() > 12) cand.resize(12);

    double maxdiff = 0;
    int accepted = 0;
    for (std::size_t e : cand) {
      if (accepted >= 3) break;
      const float saved = v[e];
      // central differences trade truncation against float32 noise, so each
      // probe keeps its best step from a small ladder (kink-crossing steps
      // are rejected outright)
      double best_diff = -1, best_num = 0;
      for (double eps : {2 * eps0, eps0, eps0 / 2, eps0 / 4, eps0 / 8}) {
        UNetCache cp, cm;
        v[e] = saved + static_cast<float>(eps);
        const double fp = bce_with_logits(unet_forward(m, x, &cp), y);
        v[e] = saved - static_cast<float>(eps);
        const double fm = bce_with_logits(unet_forward(m, x, &cm), y);
        v[e] = saved;
        if (cell_signature(cp, cfg.depth) != base_sig ||
            cell_signature(cm, cfg.depth) != base_sig)
          continue;
        const double num = (fp - fm) / (2 * eps);
        const double diff = std::abs(num - static_cast<double>(a[e]));
        if (best_diff < 0 || diff < best_diff) {
          best_diff = diff;
          best_num = num;
        }
        if (diff <= 0.5 * tol * std::max(global_maxg, 1e-8)) break;
      }
      if (best_diff < 0) continue;  // every step crossed a kink
      global_maxg = std::max(global_maxg, std::abs(best_num));
      maxdiff = std::max(maxdiff, best_diff);
      ++accepted;
    }
    const double rel =
        global_maxg < 1e-8 ? maxdiff : maxdiff / global_maxg;
    if (accepted < 2)
      fail(fmt("seed %llu %s: only %d accepted probes",
               (unsigned long long)seed, m.params[ti].first.c_str(),
               accepted));
    else if (rel > tol)
      fail(fmt("seed %llu %s rel %.2e", (unsigned long long)seed,
               m.params[ti].first.c_str(), rel));
  }

  // directional derivative across the full parameter vector: one scalar
  // aggregating every tensor's contribution, so routing errors anywhere
  // show up even where per-entry probes are noise-limited
  int dirs_passed = 0;
  for (std::uint64_t dseed : {111ull, 222ull, 333ull}) {
    Rng dr(mix_seed(seed, dseed));
    std::vector<std::vector<float>> dirs;
    double gdot = 0;
    for (std::size_t ti = 0; ti < m.params.size(); ++ti) {
      std::vector<float> d(m.params[ti].second.size());
      for (auto& q : d) q = static_cast<float>(dr.normal());
      for (std::size_t k = 0; k < d.size(); ++k)
        gdot += static_cast<double>(grads.grads[ti].second[k]) * d[k];
      dirs.push_back(std::move(d));
    }
    const auto shift = [&](double s) {
      for (std::size_t ti = 0; ti < m.params.size(); ++ti) {
        Tensor& v = m.params[ti].second;
        for (std::size_t k = 0; k < v.size(); ++k)
          v[k] += static_cast<float>(s * dirs[ti][k]);
      }
    };
    for (double eps : {1e-3, 3e-4, 1e-4, 3e-5}) {
      UNetCache cp, cm;
      shift(eps);
      const double fp = bce_with_logits(unet_forward(m, x, &cp), y);
      shift(-2 * eps);
      const double fm = bce_with_logits(unet_forward(m, x, &cm), y);
      shift(eps);
      if (cell_signature(cp, cfg.depth) != base_sig ||
          cell_signature(cm, cfg.depth) != base_sig)
        continue;
      const double num = (fp - fm) / (2 * eps);
      // a random direction can cancel g.d to near zero; the derivative's
      // natural scale over directions is ||g||, so floor the denominator
      // there instead of failing on a degenerate ratio
      const double rel =
          std::abs(num - gdot) / std::max(std::abs(gdot), gnorm);
      if (rel > tol)
        fail(fmt("seed %llu direction %llu rel %.2e",
                 (unsigned long long)seed, (unsigned long long)dseed, rel));
      ++dirs_passed;
      break;
    }
  }
  if (dirs_passed < 2)
    fail(fmt("seed %llu: only %d in-cell directions",
             (unsigned long long)seed, dirs_passed));
  return failures;
}

/// FD verification needs a differentiable test point; a draw that pins a
/// tensor against a kink is retried once with fresh inputs. Correct gradients
/// pass at any valid point, broken ones fail at every point.
void end_to_end_check(Gate& g, std::uint64_t seed, double tol) {
  std::vector<std::string> failures = end_to_end_at(seed, 0, tol);
  if (!failures.empty()) failures = end_to_end_at(seed, 1, tol);
  for (const auto& f : failures) g.require(false, f);
}

Gate criterion_1() {
  Gate g;
  const auto t0 = std::chrono::steady_clock::now();
  const double tol = 2e-3;
  const int seeds = 20;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    layer_checks(g, seed, tol);
    end_to_end_check(g, seed, tol);
  }
  const double secs = seconds_since(t0);
  g.require(secs < 120.0, fmt("runtime %.1fs exceeds 2 min", secs));
  g.note(fmt("%d seeds, tol 2e-3, %.1fs", seeds, secs));
  return g;
}

// ---------------------------------------------------------------------------
// Criteria 2 and 8 share the synthetic-corpus training recipe.

std::vector<SampleRecord> synth_records(const SynthConfig& sc, int n) {
  const float mean[] = {0.5f}, sd[] = {0.25f};
  std::vector<SampleRecord> recs;
  for (int i = 0; i < n; ++i) {
    SynthSample s = generate_sample(sc, i);
    SampleRecord r;
    r.id = s.id;
    r.base_id = s.id;
    r.source = "synth";
    r.image = normalize_image(s.image, mean, sd);
    r.mask = s.mask;
    recs.push_back(std::move(r));
  }
  return recs;
}

UNetModel train_epochs(const std::vector<SampleRecord>& recs, int width,
                       int epochs) {
  UNetConfig nc;
  nc.in_channels = 1;
  nc.out_channels = 4;
  nc.depth = 2;
  nc.base_width = width;
  nc.input_size = recs.front().mask.height;
  UNetModel model = build_unet(nc, 1);
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 2;
  tc.seed = 9;
  AdamState st = make_adam_state(model.params);
  Rng rng(mix_seed(tc.seed, 0x7E41E505ull));
  for (int e = 0; e < epochs; ++e) train_epoch(model, recs, tc, rng, st);
  return model;
}

Gate criterion_2() {
  Gate g;
  const auto t0 = std::chrono::steady_clock::now();
  const int kBus = 1, kCrack = 2;

  SynthConfig sc;
  sc.size = 64;
  sc.seed = 1;
  const auto recs = synth_records(sc, 8);

  std::size_t overlap = 0;
  for (const auto& r : recs) {
    std::size_t img_overlap = 0;
    for (int y = 0; y < r.mask.height; ++y)
      for (int x = 0; x < r.mask.width; ++x)
        img_overlap += r.mask.at(kBus, y, x) && r.mask.at(kCrack, y, x);
    g.require(img_overlap > 0, r.id + " has no crack/busbar overlap");
    overlap += img_overlap;
  }

  const UNetModel model = train_epochs(recs, 8, 300);

  const double bce = corpus_bce(model, recs);
  std::size_t both = 0;
  for (const auto& r : recs) {
    const Tensor p = predict_probabilities(model, detail::as_batch(r.image));
    for (int y = 0; y < r.mask.height; ++y)
      for (int x = 0; x < r.mask.width; ++x)
        if (r.mask.at(kBus, y, x) && r.mask.at(kCrack, y, x))
          both += p.at(0, kBus, y, x) > 0.5f && p.at(0, kCrack, y, x) > 0.5f;
  }
  const double both_frac = static_cast<double>(both) / overlap;
  const EvalResult ev = evaluate_corpus(model, recs);
  const double bus_dice = ev.overall.per_class[kBus].dice;
  const double crack_dice = ev.overall.per_class[kCrack].dice;
  const double secs = seconds_since(t0);

  g.require(bce < 0.05, fmt("train BCE %.5f not < 0.05 in 300 epochs", bce));
  g.require(both_frac >= 0.90,
            fmt("both-channels fraction %.4f < 0.90", both_frac));
  g.require(bus_dice >= 0.90, fmt("busbar dice %.4f < 0.90", bus_dice));
  g.require(crack_dice >= 0.75, fmt("crack dice %.4f < 0.75", crack_dice));
  g.require(secs < 900.0, fmt("runtime %.0fs exceeds 15 min", secs));
  g.note(fmt("bce %.5f, overlap px %zu, both %.3f, busbar dice %.3f, "
             "crack dice %.3f, %.0fs",
             bce, overlap, both_frac, bus_dice, crack_dice, secs));
  return g;
}

// ---------------------------------------------------------------------------
// Criterion 3: single-sample overfit (geometric fixture, mild noise)

SampleRecord overfit_record(int size) {
  SampleRecord r;
  r.id = "fix_none";
  r.base_id = "fix";
  r.source = "fixture";
  r.mask = MultiHotMask(4, size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      if (y >= size / 4 && y < size / 2 && x >= size / 4 && x < size / 2)
        r.mask.at(0, y, x) = 1;
      if (x >= size / 2 - 2 && x < size / 2 + 2) r.mask.at(1, y, x) = 1;
      if (std::abs(x - y) <= 1) r.mask.at(2, y, x) = 1;
      if (y < 2 || x < 2 || y >= size - 2 || x >= size - 2)
        r.mask.at(3, y, x) = 1;
    }
  r.image = Tensor({1, size, size});
  Rng noise(4242);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      float v = 0.55f;
      if (r.mask.at(0, y, x)) v -= 0.30f;
      if (r.mask.at(1, y, x)) v += 0.25f;
      if (r.mask.at(2, y, x)) v -= 0.20f;
      if (r.mask.at(3, y, x)) v -= 0.40f;
      r.image[static_cast<std::size_t>(y) * size + x] =
          v + 0.02f * static_cast<float>(noise.normal());
    }
  return r;
}

Gate criterion_3() {
  Gate g;
  UNetConfig nc;
  nc.in_channels = 1;
  nc.out_channels = 4;
  nc.depth = 2;
  nc.base_width = 8;
  nc.input_size = 32;
  UNetModel model = build_unet(nc, 7);

  const std::vector<SampleRecord> recs = {overfit_record(32)};
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 1;
  tc.seed = 9;
  AdamState st = make_adam_state(model.params);
  Rng rng(mix_seed(tc.seed, 0x7E41E505ull));

  int reached = -1;
  double bce = corpus_bce(model, recs);
  for (int e = 1; e <= 200 && reached < 0; ++e) {
    train_epoch(model, recs, tc, rng, st);
    bce = corpus_bce(model, recs);
    if (bce < 0.01) reached = e;
  }
  g.require(reached > 0, fmt("BCE %.5f after 200 epochs, never < 0.01", bce));
  if (reached > 0) g.note(fmt("BCE %.5f < 0.01 at epoch %d", bce, reached));
  return g;
}

// ---------------------------------------------------------------------------
// Criterion 4: metric oracle equivalence

Gate criterion_4() {
  Gate g;
  for (int t = 0; t < 100; ++t) {
    Rng rng(mix_seed(0xC4, t));
    const int h = 1 + static_cast<int>(rng.below(16));
    const int w = 1 + static_cast<int>(rng.below(16));
    const int c = 1 + static_cast<int>(rng.below(5));
    MultiHotMask pred(c, h, w), gt(c, h, w);
    for (int ci = 0; ci < c; ++ci) {
      // densities spanning empty through full planes
      const double dp = rng.uniform(), dg = rng.uniform();
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          pred.at(ci, y, x) = rng.uniform() < dp;
          gt.at(ci, y, x) = rng.uniform() < dg;
        }
    }

    const ConfusionCounts counts = confusion(pred, gt);
    const MetricSuite suite = metric_suite(counts);
    for (int ci = 0; ci < c; ++ci) {
      // brute-force per-pixel recount
      std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const bool p = pred.at(ci, y, x), q = gt.at(ci, y, x);
          tp += p && q;
          fp += p && !q;
          fn += !p && q;
          tn += !p && !q;
        }
      const ClassCounts& k = counts.per_class[ci];
      g.require(k.tp == tp && k.fp == fp && k.fn == fn && k.tn == tn,
                fmt("trial %d class %d: counts differ", t, ci));

      const auto ratio = [](std::uint64_t num, std::uint64_t den) {
        return den == 0 ? 1.0
                        : static_cast<double>(num) / static_cast<double>(den);
      };
      const ClassMetrics& m = suite.per_class[ci];
      g.require(m.accuracy == ratio(tp + tn, tp + fp + fn + tn),
                fmt("trial %d class %d accuracy", t, ci));
      g.require(m.precision == ratio(tp, tp + fp),
                fmt("trial %d class %d precision", t, ci));
      g.require(m.recall == ratio(tp, tp + fn),
                fmt("trial %d class %d recall", t, ci));
      g.require(m.dice == ratio(2 * tp, 2 * tp + fp + fn),
                fmt("trial %d class %d dice", t, ci));
      g.require(m.iou == ratio(tp, tp + fp + fn),
                fmt("trial %d class %d iou", t, ci));
      const double identity = 2.0 * m.iou / (1.0 + m.iou);
      g.require(std::abs(m.dice - identity) <= 1e-12,
                fmt("trial %d class %d dice identity |%.3e|", t, ci,
                    m.dice - identity));
    }
  }
  g.note("100 random mask pairs <=16x16, counts+metrics exact, "
         "dice identity <=1e-12");
  return g;
}

// ---------------------------------------------------------------------------
// Criterion 5: pipeline record counts and split audit

void audit_pipeline(Gate& g, int n, std::uint64_t seed, int expected_train,
                    int expected_val) {
  ScratchDir dir("c5_" + std::to_string(n));
  SynthConfig sc;
  sc.size = 64;
  sc.seed = seed;
  generate_corpus(sc, n, dir.path / "corpus", 1);

  PrepareConfig pc;
  pc.corpus_dir = dir.path / "corpus";
  pc.out_dir = dir.path / "data";
  pc.target_size = 32;
  pc.seed = seed;
  pc.classes = ClassSet::defaults();
  const PrepareResult res = prepare_corpus(pc);

  const auto train = read_manifest(dir.path / "data" / "train_manifest.json");
  const auto val = read_manifest(dir.path / "data" / "val_manifest.json");
  g.require(static_cast<int>(train.size() + val.size()) == 4 * n,
            fmt("N=%d: %zu records, expected 4N=%d", n,
                train.size() + val.size(), 4 * n));
  g.require(static_cast<int>(train.size()) == expected_train,
            fmt("N=%d: %zu train records, expected %d", n, train.size(),
                expected_train));
  g.require(static_cast<int>(val.size()) == expected_val,
            fmt("N=%d: %zu val records, expected %d", n, val.size(),
                expected_val));
  g.require(res.base_count == static_cast<std::size_t>(n),
            fmt("N=%d: prepare reported %zu bases", n, res.base_count));

  // id-set audit: every base contributes all four variants to exactly one
  // side; no base id appears on both sides.
  std::set<std::string> train_bases, val_bases;
  std::map<std::string, std::set<std::string>> variants;
  for (const auto& e : train) {
    train_bases.insert(e.base_id);
    variants[e.base_id].insert(to_string(e.variant));
  }
  for (const auto& e : val) {
    val_bases.insert(e.base_id);
    variants[e.base_id].insert(to_string(e.variant));
  }
  std::vector<std::string> leaked;
  std::set_intersection(train_bases.begin(), train_bases.end(),
                        val_bases.begin(), val_bases.end(),
                        std::back_inserter(leaked));
  g.require(leaked.empty(),
            fmt("N=%d: %zu base ids in both splits", n, leaked.size()));
  g.require(static_cast<int>(variants.size()) == n,
            fmt("N=%d: %zu distinct bases", n, variants.size()));
  for (const auto& [base, vars] : variants)
    g.require(vars.size() == 4,
              fmt("N=%d: base %s has %zu variants", n, base.c_str(),
                  vars.size()));
}

Gate criterion_5() {
  Gate g;
  audit_pipeline(g, 10, 21, 32, 8);  // Table-2 arithmetic at N=10
  audit_pipeline(g, 7, 22, 24, 4);   // 4N and leakage hold at other N too
  g.note("N=10 -> 40 records (32/8), N=7 -> 28 records (24/4), zero leakage");
  return g;
}

// ---------------------------------------------------------------------------
// Criterion 6: statistics engine

Gate criterion_6() {
  Gate g;

  // Hand-built corpus 1: one 2x2 mask, 4 channels. Pixel labels by position:
  // (0,0) all four, (0,1) ch0+ch1, (1,0) ch0, (1,1) ch0.
  MultiHotMask a(4, 2, 2);
  for (int ch = 0; ch < 4; ++ch) a.at(ch, 0, 0) = 1;
  a.at(0, 0, 1) = 1;
  a.at(1, 0, 1) = 1;
  a.at(0, 1, 0) = 1;
  a.at(0, 1, 1) = 1;
  {
    const std::vector<MultiHotMask> corpus = {a};
    const DatasetStats s = compute_dataset_stats(corpus, ClassSet::defaults());
    g.require(s.record_count == 1 && s.total_pixels == 4, "corpus 1 extent");
    g.require(s.cardinality == 2.0, fmt("cardinality %.17g != 2", s.cardinality));
    g.require(s.density == 0.5, fmt("density %.17g != 0.5", s.density));
    g.require(s.single_label_fraction == 0.5,
              fmt("single-label %.17g != 0.5", s.single_label_fraction));
    const std::vector<double> freq = {1.0, 0.5, 0.25, 0.25};
    g.require(s.per_pixel_frequency == freq, "corpus 1 per-pixel frequency");
    g.require(s.imbalance_ratio == freq, "corpus 1 imbalance ratios");
    g.require(s.mean_imbalance_ratio == 0.5,
              fmt("mean ratio %.17g != 0.5", s.mean_imbalance_ratio));
    g.require(s.per_image_frequency == std::vector<double>(4, 1.0),
              "corpus 1 per-image frequency");
  }

  // Corpus 2 adds a mask whose only labels are two ch1 pixels; aggregation
  // must pool activations over all masks.
  MultiHotMask b(4, 2, 2);
  b.at(1, 0, 0) = 1;
  b.at(1, 1, 1) = 1;
  {
    const std::vector<MultiHotMask> corpus = {a, b};
    const DatasetStats s = compute_dataset_stats(corpus, ClassSet::defaults());
    g.require(s.total_pixels == 8, "corpus 2 extent");
    g.require(s.cardinality == 1.25, fmt("cardinality %.17g != 1.25", s.cardinality));
    g.require(s.single_label_fraction == 0.5,
              fmt("single-label %.17g != 0.5", s.single_label_fraction));
    const std::vector<double> freq = {0.5, 0.5, 0.125, 0.125};
    const std::vector<double> ratios = {1.0, 1.0, 0.25, 0.25};
    g.require(s.per_pixel_frequency == freq, "corpus 2 per-pixel frequency");
    g.require(s.imbalance_ratio == ratios, "corpus 2 imbalance ratios");
    g.require(s.mean_imbalance_ratio == 0.625,
              fmt("mean ratio %.17g != 0.625", s.mean_imbalance_ratio));
    g.require(s.per_image_frequency ==
                  std::vector<double>({0.5, 1.0, 0.5, 0.5}),
              "corpus 2 per-image frequency");
  }

  // Published per-pixel frequencies (dark, busbar, crack, non-cell) must
  // reproduce the published ratios and their mean.
  {
    const std::vector<double> freqs = {0.01031, 0.20259, 0.03569, 0.07813};
    const std::vector<double> published = {0.051, 1.0, 0.176, 0.386};
    const auto ratios = imbalance_from_frequencies(freqs);
    double mean = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      mean += ratios[i] / ratios.size();
      g.require(std::abs(ratios[i] - published[i]) <= 5e-4,
                fmt("ratio[%zu] %.6f vs published %.3f", i, ratios[i],
                    published[i]));
    }
    g.require(std::abs(mean - 0.403) <= 1e-3,
              fmt("mean ratio %.6f not within 0.001 of 0.403", mean));
    g.note(fmt("ratios {%.3f, %.0f, %.3f, %.3f}, mean %.4f", ratios[0],
               ratios[1], ratios[2], ratios[3], mean));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Criterion 7: nested cross-validation protocol

Gate criterion_7() {
  Gate g;
  const auto t0 = std::chrono::steady_clock::now();

  SynthConfig sc;
  sc.size = 32;
  sc.seed = 3;
  const auto bases = synth_records(sc, 20);

  UNetConfig nc;
  nc.in_channels = 1;
  nc.out_channels = 4;
  nc.depth = 2;
  nc.base_width = 4;
  nc.input_size = 32;
  TrainConfig tc;  // default lr grid: the five-point decade sweep
  tc.max_epochs = 4;
  tc.patience = 2;
  tc.batch_size = 4;
  tc.seed = 17;
  tc.outer_folds = 5;
  const CvResult cv = nested_cv(nc, bases, tc);

  g.require(cv.folds.size() == 5, fmt("%zu folds", cv.folds.size()));

  std::set<std::string> all_ids;
  for (const auto& r : bases) all_ids.insert(r.base_id);
  std::map<std::string, int> test_appearances;
  for (const auto& f : cv.folds) {
    std::set<std::string> inner;
    for (const auto& id : f.train_bases) inner.insert(id);
    for (const auto& id : f.val_bases) inner.insert(id);
    for (const auto& id : f.test_bases) {
      ++test_appearances[id];
      g.require(inner.count(id) == 0,
                fmt("fold %d: test id %s also used for model selection",
                    f.fold, id.c_str()));
    }
    g.require(inner.size() + f.test_bases.size() == all_ids.size(),
              fmt("fold %d does not cover the corpus", f.fold));

    const auto& grid = tc.lr_grid;
    g.require(std::find(grid.begin(), grid.end(), f.chosen_lr) != grid.end(),
              fmt("fold %d chose lr %g outside the grid", f.fold,
                  f.chosen_lr));

    // early stopping never returns weights worse than any observed epoch
    g.require(!f.val_curve.empty() && f.best_epoch >= 0 &&
                  f.best_epoch < static_cast<int>(f.val_curve.size()),
              fmt("fold %d best epoch out of range", f.fold));
    const double best = f.val_curve[static_cast<std::size_t>(f.best_epoch)];
    for (double v : f.val_curve)
      g.require(best <= v,
                fmt("fold %d returned val loss %.6f above epoch loss %.6f",
                    f.fold, best, v));
  }
  for (const auto& id : all_ids)
    g.require(test_appearances[id] == 1,
              fmt("base %s in %d test folds", id.c_str(),
                  test_appearances[id]));

  // summary is the mean +/- sample SD of the fold macro accuracies
  double mean = 0;
  for (const auto& f : cv.folds) mean += f.metrics.macro.accuracy;
  mean /= static_cast<double>(cv.folds.size());
  double ss = 0;
  for (const auto& f : cv.folds) {
    const double d = f.metrics.macro.accuracy - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (cv.folds.size() - 1.0));
  g.require(std::abs(cv.accuracy_mean - mean) <= 1e-15,
            fmt("summary mean %.9f vs %.9f", cv.accuracy_mean, mean));
  g.require(std::abs(cv.accuracy_sd - sd) <= 1e-15,
            fmt("summary sd %.9f vs %.9f", cv.accuracy_sd, sd));

  const double secs = seconds_since(t0);
  g.require(secs < 1200.0, fmt("runtime %.0fs exceeds 20 min", secs));
  g.note(fmt("K=5 over 20 bases, accuracy %.4f +/- %.4f, %.0fs",
             cv.accuracy_mean, cv.accuracy_sd, secs));
  return g;
}

// ---------------------------------------------------------------------------
// Criterion 8: component analytics

Gate criterion_8() {
  Gate g;
  const auto t0 = std::chrono::steady_clock::now();

  // flood-fill oracle agreement on random planes, both connectivities
  for (int t = 0; t < 100; ++t) {
    Rng rng(mix_seed(0xC8, t));
    const int h = 1 + static_cast<int>(rng.below(32));
    const int w = 1 + static_cast<int>(rng.below(32));
    const double density = rng.uniform(0.2, 0.8);
    std::vector<std::uint8_t> plane(static_cast<std::size_t>(h) * w);
    for (auto& v : plane) v = rng.uniform() < density;
    for (int conn : {4, 8}) {
      const auto lab = connected_components(plane.data(), h, w, conn);
      const int oracle = count_components_flood(plane.data(), h, w, conn);
      g.require(static_cast<int>(lab.components.size()) == oracle,
                fmt("trial %d conn %d: %zu components, oracle %d", t, conn,
                    lab.components.size(), oracle));
    }
  }

  // forced-3-crack corpus: ground truth counts exactly 3 per image
  const int kCrack = 2;
  SynthConfig sc;
  sc.size = 64;
  sc.seed = 1;
  sc.crack_min = 3;
  sc.crack_max = 3;
  const auto recs = synth_records(sc, 8);

  std::vector<MaskSet> sources(1);
  sources[0].source = "gt";
  for (const auto& r : recs) sources[0].masks.emplace_back(r.id, r.mask);
  const CrackSummary gt_sum = crack_count_summary(sources, kCrack, 8, 0, 1);
  const DistStats& gt_stats = gt_sum.stats.at("gt");
  g.require(gt_stats.mean == 3.0,
            fmt("GT crack count mean %.6f != 3.0", gt_stats.mean));
  for (const auto& row : gt_sum.rows)
    g.require(row.count == 3,
              fmt("%s GT count %d != 3", row.image.c_str(), row.count));

  // model counts after criterion-2 style training on the same corpus
  const UNetModel model = train_epochs(recs, 8, 300);
  double model_mean = 0;
  for (const auto& r : recs) {
    const MultiHotMask pred =
        binarize(predict_probabilities(model, detail::as_batch(r.image)));
    model_mean += static_cast<double>(
        connected_components(pred, kCrack, 8).components.size());
  }
  model_mean /= static_cast<double>(recs.size());
  g.require(std::abs(model_mean - 3.0) <= 1.0,
            fmt("model crack count mean %.3f not within 3.0 +/- 1.0",
                model_mean));
  g.note(fmt("oracle 100 planes x {4,8}, GT mean %.1f, model mean %.3f, %.0fs",
             gt_stats.mean, model_mean, seconds_since(t0)));
  return g;
}

// ---------------------------------------------------------------------------
// Criterion 9: persistence round-trips and corruption errors

void corruption_matrix(Gate& g, const fs::path& path, const char* what,
                       const std::function<void(const fs::path&)>& load) {
  const auto bytes = read_file_bytes(path);
  struct Case {
    std::string name;
    std::vector<std::uint8_t> data;
  };
  std::vector<Case> cases;
  cases.push_back({"truncated to 4 bytes",
                   {bytes.begin(), bytes.begin() + 4}});
  cases.push_back({"truncated half", {bytes.begin(),
                                      bytes.begin() + bytes.size() / 2}});
  auto flip = [&](const std::string& name, std::size_t at) {
    Case c{name, bytes};
    c.data[at] ^= 0x5A;
    cases.push_back(std::move(c));
  };
  flip("magic byte flipped", 0);
  flip("header byte flipped", 5);
  flip("payload byte flipped", bytes.size() / 2);
  flip("checksum byte flipped", bytes.size() - 1);

  for (const auto& c : cases) {
    const fs::path p = path.parent_path() / ("corrupt_" + std::to_string(
                                                 &c - cases.data()));
    write_file_bytes(p, c.data);
    bool typed = false;
    std::string got = "no error";
    try {
      load(p);
    } catch (const corrupt_error&) {
      typed = true;
    } catch (const std::exception& e) {
      got = std::string("wrong type: ") + e.what();
    }
    g.require(typed, std::string(what) + " " + c.name + " -> " + got);
  }
}

Gate criterion_9() {
  Gate g;
  ScratchDir dir("c9");

  {  // weights container
    UNetConfig nc;
    nc.in_channels = 1;
    nc.out_channels = 4;
    nc.depth = 2;
    nc.base_width = 4;
    nc.input_size = 16;
    const UNetModel m = build_unet(nc, 5);
    const fs::path p1 = dir.path / "w1.mssw", p2 = dir.path / "w2.mssw";
    save_weights(m, p1);
    save_weights(load_weights(p1), p2);
    g.require(read_file_bytes(p1) == read_file_bytes(p2),
              "weights round-trip is not byte-identical");
    corruption_matrix(g, p1, "weights", [](const fs::path& p) {
      load_weights(p);
    });
  }

  {  // mask container
    Rng rng(0xC9);
    MultiHotMask m(4, 13, 11);
    for (auto& v : m.values) v = rng.uniform() < 0.4;
    const auto names = ClassSet::defaults().names;
    const fs::path p1 = dir.path / "m1.mssm", p2 = dir.path / "m2.mssm";
    save_mask(m, names, p1);
    const LoadedMask back = load_mask(p1);
    save_mask(back.mask, back.class_names, p2);
    g.require(read_file_bytes(p1) == read_file_bytes(p2),
              "mask round-trip is not byte-identical");
    g.require(back.mask.values == m.values && back.class_names == names,
              "mask round-trip changed content");
    corruption_matrix(g, p1, "mask", [](const fs::path& p) { load_mask(p); });
  }

  g.note("weights+mask byte-identical round-trips, 12 corruptions all typed");
  return g;
}

// ---------------------------------------------------------------------------
// Criterion 10: end-to-end determinism through the CLI

Gate criterion_10() {
  Gate g;
  ScratchDir dir("c10");

  const std::string config = R"({
  "seed": 11,
  "synth": {"size": 64, "count": 10},
  "prepare": {"target_size": 32},
  "network": {"in_channels": 1, "out_channels": 4, "depth": 2, "base_width": 4, "input_size": 32},
  "training": {"learning_rate": 0.001, "max_epochs": 3, "patience": 2, "batch_size": 4},
  "normalize": {"mean": [0.5], "std": [0.25]}
}
)";

  auto chain = [&](const std::string& tag) -> bool {
    const fs::path root = dir.path / tag;
    fs::create_directories(root);
    write_text_file(root / "cfg.json", config);
    const std::string base = std::string(MSS_CLI_PATH) + " ";
    const std::string cfg = " --config " + (root / "cfg.json").string() +
                            " --jobs 1";
    const std::string steps[] = {
        "synth" + cfg + " --out " + (root / "corpus").string(),
        "prepare" + cfg + " --corpus " + (root / "corpus").string() +
            " --out " + (root / "data").string(),
        "train" + cfg + " --data " + (root / "data").string() + " --out " +
            (root / "run").string(),
        "evaluate" + cfg + " --data " + (root / "data").string() +
            " --weights " + (root / "run" / "weights.mssw").string() +
            " --report " + (root / "eval.txt").string(),
    };
    for (const auto& s : steps) {
      const int rc = std::system((base + s + " > /dev/null 2>&1").c_str());
      if (rc != 0) {
        g.require(false, "step failed in chain " + tag + ": " + s);
        return false;
      }
    }
    return true;
  };

  if (chain("a") && chain("b")) {
    // byte-for-byte comparison of the complete output trees
    std::vector<std::string> rel_a, rel_b;
    for (const auto& e : fs::recursive_directory_iterator(dir.path / "a"))
      if (e.is_regular_file())
        rel_a.push_back(fs::relative(e.path(), dir.path / "a").string());
    for (const auto& e : fs::recursive_directory_iterator(dir.path / "b"))
      if (e.is_regular_file())
        rel_b.push_back(fs::relative(e.path(), dir.path / "b").string());
    std::sort(rel_a.begin(), rel_a.end());
    std::sort(rel_b.begin(), rel_b.end());
    g.require(rel_a == rel_b, fmt("file lists differ (%zu vs %zu)",
                                  rel_a.size(), rel_b.size()));
    std::size_t files = 0, mismatched = 0;
    if (rel_a == rel_b)
      for (const auto& rel : rel_a) {
        ++files;
        if (read_file_bytes(dir.path / "a" / rel) !=
            read_file_bytes(dir.path / "b" / rel)) {
          ++mismatched;
          g.require(false, "differs: " + rel);
        }
      }
    g.note(fmt("2 chains, %zu files compared, %zu mismatched", files,
               mismatched));
  }
  return g;
}

struct Criterion {
  const char* title;
  Gate (*run)();
};

const Criterion kCriteria[] = {
    {"gradient checks, all layers + end-to-end", criterion_1},
    {"multi-label overlap at crack/busbar crossings", criterion_2},
    {"single-sample overfit", criterion_3},
    {"metric oracle equivalence", criterion_4},
    {"pipeline counts and split audit", criterion_5},
    {"statistics engine", criterion_6},
    {"nested cross-validation protocol", criterion_7},
    {"component analytics", criterion_8},
    {"persistence round-trips", criterion_9},
    {"end-to-end determinism", criterion_10},
};

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance <criterion 1..10>\n");
    return 2;
  }
  const int n = std::atoi(argv[1]);
  if (n < 1 || n > 10) {
    std::fprintf(stderr, "usage: acceptance <criterion 1..10>\n");
    return 2;
  }
  const Criterion& c = kCriteria[n - 1];
  try {
    const Gate g = c.run();
    if (g.pass()) {
      std::printf("[PASS] criterion %d: %s (%s)\n", n, c.title,
                  g.info.c_str());
      return 0;
    }
    std::printf("[FAIL] criterion %d: %s (%s)\n", n, c.title,
                g.detail().c_str());
    return 1;
  } catch (const std::exception& e) {
    std::printf("[FAIL] criterion %d: %s (unexpected error: %s)\n", n, c.title,
                e.what());
    return 1;
  }
}
