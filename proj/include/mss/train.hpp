#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mss/common.hpp"
#include "mss/dataset.hpp"
#include "mss/eval.hpp"
#include "mss/ops.hpp"
#include "mss/random.hpp"
#include "mss/serialize.hpp"
#include "mss/unet.hpp"

namespace mss {

enum class Optimizer { adam, sgd };

inline const char* to_string(Optimizer o) {
  return o == Optimizer::adam ? "adam" : "sgd";
}

inline Optimizer optimizer_from_string(const std::string& s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "sgd") return Optimizer::sgd;
  throw parse_error("unknown optimizer '" + s + "'");
}

struct TrainConfig {
  double learning_rate = 1e-3;
  int max_epochs = 40;
  int patience = 5;
  int batch_size = 8;
  std::uint64_t seed = 0;
  std::vector<double> lr_grid = {1e-4, 5e-4, 1e-3, 5e-3, 1e-2};
  int outer_folds = 5;
  Optimizer optimizer = Optimizer::adam;
  int jobs = 1;

  void validate() const {
    if (max_epochs < 1)
      throw validation_error("max_epochs must be >= 1, got " +
                             std::to_string(max_epochs));
    if (patience < 1)
      throw validation_error("patience must be >= 1, got " +
                             std::to_string(patience));
    if (batch_size < 1)
      throw validation_error("batch_size must be >= 1, got " +
                             std::to_string(batch_size));
    if (lr_grid.empty()) throw validation_error("lr grid is empty");
    for (double lr : lr_grid)
      if (!(lr > 0.0))
        throw validation_error("lr grid entry " + std::to_string(lr) +
                               " is not positive");
  }
};

// ---------------------------------------------------------------------------
// Optimizers

using ParamList = std::vector<std::pair<std::string, Tensor>>;

struct AdamState {
  ParamList m, v;  // first/second moments, aligned with the parameter list
  int t = 0;       // last completed step
};

inline AdamState make_adam_state(const ParamList& params) {
  AdamState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& [name, p] : params) {
    s.m.emplace_back(name, Tensor(p.shape()));
    s.v.emplace_back(name, Tensor(p.shape()));
  }
  return s;
}

namespace detail {

inline void check_aligned(const ParamList& params, const ParamList& other,
                          const char* what) {
  if (params.size() != other.size())
    throw shape_error(std::string(what) + ": " + std::to_string(other.size()) +
                      " tensors for " + std::to_string(params.size()) +
                      " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].first != other[i].first)
      throw shape_error(std::string(what) + ": tensor " + std::to_string(i) +
                        " is '" + other[i].first + "', expected '" +
                        params[i].first + "'");
    require_same_shape(params[i].second, other[i].second, what);
  }
}

}  // namespace detail

/// One Adam update with bias correction; moments are kept in `state` and the
/// step index `t` is explicit (1-based).
inline void adam_step(ParamList& params, const ParamList& grads,
                      AdamState& state, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8, int t = 1) {
  if (t < 1)
    throw validation_error("adam step index must be >= 1, got " +
                           std::to_string(t));
  detail::check_aligned(params, grads, "adam gradients");
  if (state.m.empty()) state = make_adam_state(params);
  detail::check_aligned(params, state.m, "adam state");
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    const Tensor& g = grads[i].second;
    Tensor& m = state.m[i].second;
    Tensor& v = state.v[i].second;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = beta1 * m[j] + (1.0 - beta1) * gj;
      const double vj = beta2 * v[j] + (1.0 - beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      p[j] = static_cast<float>(p[j] -
                                lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps));
    }
  }
  state.t = t;
}

inline void sgd_step(ParamList& params, const ParamList& grads, double lr) {
  detail::check_aligned(params, grads, "sgd gradients");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    const Tensor& g = grads[i].second;
    for (std::size_t j = 0; j < p.size(); ++j)
      p[j] = static_cast<float>(p[j] - lr * g[j]);
  }
}

// ---------------------------------------------------------------------------
// Epoch / fit

namespace detail {

inline void check_corpus(const std::vector<SampleRecord>& records) {
  const SampleRecord& first = records.front();
  require_rank(first.image, 3, "training image");
  for (const auto& r : records) {
    if (r.image.shape() != first.image.shape())
      throw shape_error("record '" + r.id + "' image shape differs from '" +
                        first.id + "'");
    if (r.mask.channels != first.mask.channels ||
        r.mask.height != first.mask.height || r.mask.width != first.mask.width)
      throw shape_error("record '" + r.id + "' mask shape differs from '" +
                        first.id + "'");
  }
}

}  // namespace detail

/// One pass over a seeded shuffle in mini-batches; returns the mean per-batch
/// loss. The model is updated in place.
inline double train_epoch(UNetModel& model,
                          const std::vector<SampleRecord>& records,
                          const TrainConfig& cfg, Rng& rng, AdamState& state) {
  if (records.empty()) throw validation_error("train_epoch: empty dataset");
  detail::check_corpus(records);
  const Tensor& img = records.front().image;
  const MultiHotMask& msk = records.front().mask;

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  fisher_yates(order, rng);

  double loss_sum = 0.0;
  int batches = 0;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(cfg.batch_size)) {
    const int bs = static_cast<int>(
        std::min<std::size_t>(cfg.batch_size, order.size() - start));
    Tensor batch({bs, img.extent(0), img.extent(1), img.extent(2)});
    Tensor targets({bs, msk.channels, msk.height, msk.width});
    for (int j = 0; j < bs; ++j) {
      const SampleRecord& r = records[order[start + j]];
      std::copy(r.image.data(), r.image.data() + r.image.size(),
                batch.data() + static_cast<std::size_t>(j) * r.image.size());
      float* dst =
          targets.data() + static_cast<std::size_t>(j) * r.mask.values.size();
      for (std::size_t i = 0; i < r.mask.values.size(); ++i)
        dst[i] = static_cast<float>(r.mask.values[i]);
    }
    UNetCache cache;
    Tensor logits = unet_forward(model, batch, &cache);
    loss_sum += bce_with_logits(logits, targets);
    UNetGrads g =
        unet_backward(model, cache, bce_with_logits_backward(logits, targets));
    if (cfg.optimizer == Optimizer::adam)
      adam_step(model.params, g.grads, state, cfg.learning_rate, 0.9, 0.999,
                1e-8, state.t + 1);
    else
      sgd_step(model.params, g.grads, cfg.learning_rate);
    ++batches;
  }
  return loss_sum / batches;
}

inline double train_epoch(UNetModel& model,
                          const std::vector<SampleRecord>& records,
                          const TrainConfig& cfg, Rng& rng) {
  AdamState state;
  return train_epoch(model, records, cfg, rng, state);
}

/// Mean per-record BCE of the model on a corpus; the reduction runs in index
/// order, so the value does not depend on `jobs`.
inline double corpus_bce(const UNetModel& model,
                         const std::vector<SampleRecord>& records,
                         int jobs = 1) {
  if (records.empty()) throw validation_error("corpus_bce: empty corpus");
  std::vector<double> bce(records.size());
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    Tensor batch = detail::as_batch(records[i].image);
    Tensor logits = unet_forward(model, batch);
    bce[i] = bce_with_logits(logits, detail::mask_to_targets(records[i].mask));
  });
  double sum = 0.0;
  for (double b : bce) sum += b;
  return sum / static_cast<double>(records.size());
}

struct FitResult {
  std::vector<double> train_curve, val_curve;  // one entry per epoch run
  int best_epoch = -1;                         // 0-based index into the curves
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_run = 0;
};

/// Training loop with early stopping. The validation score comes from
/// `val_loss(model, epoch)`, which lets tests script the schedule; training
/// stops after `patience` consecutive epochs without strict improvement and
/// the best-scoring weights are restored.
template <typename ValLossFn>
FitResult fit_with(UNetModel& model, const std::vector<SampleRecord>& records,
                   const TrainConfig& cfg, ValLossFn&& val_loss) {
  cfg.validate();
  if (records.empty()) throw validation_error("fit: empty training set");
  Rng rng(mix_seed(cfg.seed, 0x7E41E505ull));
  AdamState state;
  FitResult res;
  ParamList best_params;
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double tl = train_epoch(model, records, cfg, rng, state);
    const double vl = val_loss(static_cast<const UNetModel&>(model), epoch);
    res.train_curve.push_back(tl);
    res.val_curve.push_back(vl);
    if (vl < res.best_val) {
      res.best_val = vl;
      res.best_epoch = epoch;
      best_params = model.params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.params = std::move(best_params);
  res.epochs_run = static_cast<int>(res.val_curve.size());
  return res;
}

inline FitResult fit(UNetModel& model,
                     const std::vector<SampleRecord>& train_records,
                     const std::vector<SampleRecord>& val_records,
                     const TrainConfig& cfg) {
  if (val_records.empty()) throw validation_error("fit: empty validation set");
  return fit_with(model, train_records, cfg,
                  [&](const UNetModel& m, int) {
                    return corpus_bce(m, val_records, cfg.jobs);
                  });
}

// ---------------------------------------------------------------------------
// Grid search / nested cross-validation

struct ArmResult {
  double lr = 0;
  FitResult fit;
};

struct GridResult {
  double best_lr = 0;
  std::size_t best_index = 0;  // into arms (ascending lr order)
  std::vector<ArmResult> arms;
  UNetModel model;  // the winning trained model
};

/// Index of the winning arm: lowest validation loss, ties to the earlier
/// entry — arms are kept in ascending-lr order, so ties go to the smaller lr.
inline std::size_t pick_arm(const std::vector<ArmResult>& arms) {
  if (arms.empty()) throw validation_error("pick_arm: no arms");
  std::size_t best = 0;
  for (std::size_t i = 1; i < arms.size(); ++i)
    if (arms[i].fit.best_val < arms[best].fit.best_val) best = i;
  return best;
}

/// Trains one model per grid entry from an identical initialization seed and
/// picks the arm with the lowest inner-validation loss; ties go to the
/// smaller learning rate. Arms may run in parallel without changing the
/// result.
inline GridResult grid_search(const UNetConfig& net_cfg,
                              const std::vector<SampleRecord>& train_records,
                              const std::vector<SampleRecord>& val_records,
                              const TrainConfig& cfg) {
  cfg.validate();
  std::vector<double> grid = cfg.lr_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const std::uint64_t init_seed = mix_seed(cfg.seed, 0x1417C0DEull);
  struct Slot {
    FitResult fit;
    UNetModel model;
  };
  std::vector<Slot> slots(grid.size());
  parallel_for(grid.size(), cfg.jobs, [&](std::size_t i) {
    TrainConfig arm = cfg;
    arm.learning_rate = grid[i];
    arm.jobs = 1;
    UNetModel m = build_unet(net_cfg, init_seed);
    slots[i].fit = fit(m, train_records, val_records, arm);
    slots[i].model = std::move(m);
  });

  GridResult out;
  out.arms.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i)
    out.arms.push_back({grid[i], std::move(slots[i].fit)});
  out.best_index = pick_arm(out.arms);
  out.best_lr = grid[out.best_index];
  out.model = std::move(slots[out.best_index].model);
  return out;
}

struct FoldResult {
  int fold = 0;
  double chosen_lr = 0;
  std::vector<double> train_curve, val_curve;  // winning arm's curves
  int best_epoch = -1;
  MetricSuite metrics;  // on the held-out outer fold
  // Base-image id sets, kept for leakage audits.
  std::vector<std::string> train_bases, val_bases, test_bases;
};

struct CvResult {
  std::vector<FoldResult> folds;
  double accuracy_mean = 0;  // macro accuracy across folds
  double accuracy_sd = 0;    // sample SD (n-1)
};

/// Nested cross-validation over BASE images: outer K-fold partition, then per
/// fold a 4:1 inner split of the remaining bases feeds the learning-rate grid
/// search. Flip augmentation is applied only to inner-training records, after
/// fold assignment; inner-validation and outer-test use the untouched
/// originals.
inline CvResult nested_cv(const UNetConfig& net_cfg,
                          const std::vector<SampleRecord>& base_records,
                          const TrainConfig& cfg) {
  cfg.validate();
  const int K = cfg.outer_folds;
  if (K < 2)
    throw validation_error("nested_cv: need at least 2 outer folds, got " +
                           std::to_string(K));

  std::map<std::string, const SampleRecord*> by_base;
  for (const auto& r : base_records) {
    if (r.variant != AugVariant::none)
      throw validation_error("nested_cv expects base records; '" + r.id +
                             "' is variant '" + to_string(r.variant) + "'");
    if (!by_base.emplace(r.base_id, &r).second)
      throw validation_error("duplicate base id '" + r.base_id + "'");
  }
  if (by_base.size() < static_cast<std::size_t>(K))
    throw validation_error("nested_cv: " + std::to_string(by_base.size()) +
                           " base images cannot fill " + std::to_string(K) +
                           " folds");

  std::vector<std::string> bases;
  bases.reserve(by_base.size());
  for (const auto& [id, _] : by_base) bases.push_back(id);  // sorted
  Rng part_rng(mix_seed(cfg.seed, 0xF01DF01Dull));
  fisher_yates(bases, part_rng);
  std::vector<std::vector<std::string>> fold_bases(K);
  for (std::size_t j = 0; j < bases.size(); ++j)
    fold_bases[j % K].push_back(bases[j]);

  std::vector<FoldResult> folds(K);
  parallel_for(static_cast<std::size_t>(K), cfg.jobs, [&](std::size_t f) {
    FoldResult& fr = folds[f];
    fr.fold = static_cast<int>(f);
    fr.test_bases = fold_bases[f];
    std::sort(fr.test_bases.begin(), fr.test_bases.end());

    std::vector<std::string> trainval;
    for (int k = 0; k < K; ++k)
      if (k != static_cast<int>(f))
        trainval.insert(trainval.end(), fold_bases[k].begin(),
                        fold_bases[k].end());
    const std::uint64_t fold_seed = mix_seed(cfg.seed, 0xBA5E0000ull + f);
    SplitResult split = split_dataset(trainval, fold_seed);
    fr.train_bases = split.train_ids;
    fr.val_bases = split.val_ids;

    std::vector<SampleRecord> train_recs, val_recs, test_recs;
    for (const auto& id : split.train_ids)
      for (auto& v : flip_augment(*by_base.at(id)))
        train_recs.push_back(std::move(v));
    for (const auto& id : split.val_ids) val_recs.push_back(*by_base.at(id));
    for (const auto& id : fr.test_bases) test_recs.push_back(*by_base.at(id));

    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = fold_seed;
    fold_cfg.jobs = 1;
    GridResult g = grid_search(net_cfg, train_recs, val_recs, fold_cfg);
    fr.chosen_lr = g.best_lr;
    fr.train_curve = std::move(g.arms[g.best_index].fit.train_curve);
    fr.val_curve = std::move(g.arms[g.best_index].fit.val_curve);
    fr.best_epoch = g.arms[g.best_index].fit.best_epoch;
    fr.metrics = evaluate_corpus(g.model, test_recs).overall;
  });

  CvResult out;
  out.folds = std::move(folds);
  double mean = 0.0;
  for (const auto& fr : out.folds) mean += fr.metrics.macro.accuracy;
  mean /= K;
  double ss = 0.0;
  for (const auto& fr : out.folds) {
    const double d = fr.metrics.macro.accuracy - mean;
    ss += d * d;
  }
  out.accuracy_mean = mean;
  out.accuracy_sd = std::sqrt(ss / (K - 1));
  return out;
}

// ---------------------------------------------------------------------------
// Run directory

inline nlohmann::ordered_json config_snapshot(const UNetConfig& net,
                                              const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["network"] = {{"in_channels", net.in_channels},
                  {"out_channels", net.out_channels},
                  {"depth", net.depth},
                  {"base_width", net.base_width},
                  {"input_size", net.input_size}};
  j["training"] = {{"learning_rate", cfg.learning_rate},
                   {"max_epochs", cfg.max_epochs},
                   {"patience", cfg.patience},
                   {"batch_size", cfg.batch_size},
                   {"seed", cfg.seed},
                   {"lr_grid", cfg.lr_grid},
                   {"outer_folds", cfg.outer_folds},
                   {"optimizer", to_string(cfg.optimizer)}};
  return j;
}

inline std::string curves_csv(const FitResult& fit) {
  std::string s = "epoch,train_loss,val_loss\n";
  char line[96];
  for (std::size_t i = 0; i < fit.train_curve.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g\n", i + 1,
                  fit.train_curve[i], fit.val_curve[i]);
    s += line;
  }
  return s;
}

inline std::string cv_report(const CvResult& cv) {
  std::string s;
  char line[200];
  for (const auto& fr : cv.folds) {
    std::snprintf(line, sizeof(line),
                  "fold %d: lr %g  best_epoch %d  val_bce %.9f  "
                  "macro_accuracy %.9f  macro_dice %.9f\n",
                  fr.fold, fr.chosen_lr, fr.best_epoch + 1,
                  fr.val_curve.at(fr.best_epoch), fr.metrics.macro.accuracy,
                  fr.metrics.macro.dice);
    s += line;
  }
  std::snprintf(line, sizeof(line), "accuracy %.6f +/- %.6f\n",
                cv.accuracy_mean, cv.accuracy_sd);
  s += line;
  return s;
}

/// Emits config snapshot, per-epoch curves, and the best weights. Content is
/// a pure function of (config, data, seed) — no timestamps — so reruns are
/// byte-identical.
inline void write_run_dir(const std::filesystem::path& dir,
                          const UNetConfig& net_cfg, const TrainConfig& cfg,
                          const FitResult& fit, const UNetModel& model) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "config.json", config_snapshot(net_cfg, cfg).dump(2) + "\n");
  write_text_file(dir / "curves.csv", curves_csv(fit));
  save_weights(model, dir / "weights.mssw");
}

}  // namespace mss
