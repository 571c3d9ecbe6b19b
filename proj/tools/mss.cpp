// Command-line front end: synth / prepare / train / cv / predict /
// evaluate / analyze. Flags override config-file values which override
// built-in defaults; MSS_SEED sits between config and --seed.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <string>

#include "mss/cli.hpp"

namespace {

const char* category_name(mss::error::category c) {
  switch (c) {
    case mss::error::category::usage: return "usage";
    case mss::error::category::validation: return "validation";
    case mss::error::category::io: return "io";
    case mss::error::category::numeric: return "numeric";
  }
  return "error";
}

struct CommonOpts {
  std::string config;
  std::uint64_t seed = 0;
  int jobs = 1;
  double threshold = 0.5;
  CLI::Option* config_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
  CLI::Option* threshold_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_threshold = false) {
  o.config_opt =
      cmd->add_option("--config", o.config, "JSON run configuration");
  o.seed_opt = cmd->add_option("--seed", o.seed, "master RNG seed");
  o.jobs_opt = cmd->add_option("--jobs", o.jobs, "worker thread count");
  if (with_threshold)
    o.threshold_opt = cmd->add_option("--threshold", o.threshold,
                                      "probability cut for binarization");
}

// defaults < config file < MSS_SEED < --seed; other flags apply if given.
mss::RunConfig resolve_config(const CommonOpts& o) {
  mss::RunConfig rc;
  if (o.config_opt->count() > 0) rc = mss::load_run_config(o.config);
  if (const char* env = std::getenv("MSS_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      throw mss::usage_error(std::string("MSS_SEED is not an integer: '") +
                             env + "'");
    rc.seed = v;
  }
  if (o.seed_opt->count() > 0) rc.seed = o.seed;
  if (o.jobs_opt->count() > 0) rc.jobs = o.jobs;
  if (o.threshold_opt && o.threshold_opt->count() > 0)
    rc.threshold = o.threshold;
  if (rc.jobs < 1)
    throw mss::usage_error("--jobs must be >= 1, got " +
                           std::to_string(rc.jobs));
  if (!(rc.threshold >= 0.0 && rc.threshold <= 1.0))
    throw mss::usage_error("--threshold must lie in [0,1]");
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-label segmentation toolkit for EL cell images"};
  app.require_subcommand(1);

  // --- synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  CommonOpts synth_common;
  add_common(synth, synth_common);
  std::string synth_out;
  int synth_n = -1;
  synth->add_option("--out", synth_out, "output corpus directory")
      ->required();
  auto* synth_n_opt =
      synth->add_option("--n", synth_n, "number of images to generate");

  // --- prepare -------------------------------------------------------------
  auto* prepare = app.add_subcommand("prepare", "corpus -> training dataset");
  CommonOpts prep_common;
  add_common(prepare, prep_common);
  std::string prep_corpus, prep_out, prep_source;
  int prep_target = -1;
  prepare->add_option("--corpus", prep_corpus, "corpus directory")->required();
  prepare->add_option("--out", prep_out, "dataset output directory")
      ->required();
  auto* prep_target_opt = prepare->add_option("--target-size", prep_target,
                                              "square resize resolution");
  auto* prep_source_opt =
      prepare->add_option("--source", prep_source, "source tag for records");

  // --- train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "fit a model on a dataset");
  CommonOpts train_common;
  add_common(train, train_common);
  std::string train_data, train_out, train_resume;
  double train_lr = 0;
  int train_epochs = 0, train_patience = 0, train_batch = 0;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "run directory (must not exist)")
      ->required();
  train->add_option("--resume", train_resume,
                    "initialize from an existing weights file");
  auto* lr_opt = train->add_option("--lr", train_lr, "learning rate");
  auto* epochs_opt =
      train->add_option("--epochs", train_epochs, "maximum epochs");
  auto* patience_opt = train->add_option(
      "--patience", train_patience, "epochs without improvement before stop");
  auto* batch_opt = train->add_option("--batch", train_batch, "batch size");

  // --- cv ------------------------------------------------------------------
  auto* cv = app.add_subcommand("cv", "nested cross-validation");
  CommonOpts cv_common;
  add_common(cv, cv_common);
  std::string cv_data, cv_out;
  int cv_folds = 0;
  cv->add_option("--data", cv_data, "dataset directory")->required();
  cv->add_option("--out", cv_out, "run directory (must not exist)")
      ->required();
  auto* folds_opt = cv->add_option("--folds", cv_folds, "outer fold count");

  // --- predict -------------------------------------------------------------
  auto* predict = app.add_subcommand("predict", "write probability maps");
  CommonOpts pred_common;
  add_common(predict, pred_common, /*with_threshold=*/true);
  std::string pr_data, pr_manifest = "val_manifest.json", pr_weights, pr_out;
  predict->add_option("--data", pr_data, "dataset directory")->required();
  predict->add_option("--manifest", pr_manifest, "manifest file name");
  predict->add_option("--weights", pr_weights, "trained weights file")
      ->required();
  predict->add_option("--out", pr_out, "prediction output directory")
      ->required();

  // --- evaluate ------------------------------------------------------------
  auto* evaluate = app.add_subcommand("evaluate", "score against ground truth");
  CommonOpts eval_common;
  add_common(evaluate, eval_common, /*with_threshold=*/true);
  std::string ev_data, ev_manifest = "val_manifest.json", ev_weights, ev_pred,
              ev_report;
  evaluate->add_option("--data", ev_data, "dataset directory")->required();
  evaluate->add_option("--manifest", ev_manifest, "manifest file name");
  evaluate->add_option("--weights", ev_weights, "score a trained model");
  evaluate->add_option("--pred", ev_pred, "score saved prediction masks");
  evaluate->add_option("--report", ev_report, "also write the report here");

  // --- analyze -------------------------------------------------------------
  auto* analyze = app.add_subcommand("analyze", "crack component statistics");
  CommonOpts an_common;
  add_common(analyze, an_common);
  std::string an_data, an_manifest = "val_manifest.json", an_pred, an_out;
  int an_channel = -1, an_conn = 0, an_min_area = -1;
  analyze->add_option("--data", an_data, "dataset directory")->required();
  analyze->add_option("--manifest", an_manifest, "manifest file name");
  analyze->add_option("--pred", an_pred,
                      "also analyze saved prediction masks");
  analyze->add_option("--out", an_out, "analysis output directory")
      ->required();
  analyze->add_option("--channel", an_channel, "mask channel to analyze");
  auto* conn_opt =
      analyze->add_option("--connectivity", an_conn, "4 or 8 neighborhood");
  auto* min_area_opt = analyze->add_option("--min-area", an_min_area,
                                           "ignore smaller components");

  try {
    app.parse(argc, argv);

    if (synth->parsed()) {
      mss::RunConfig rc = resolve_config(synth_common);
      const int n = synth_n_opt->count() > 0 ? synth_n : rc.synth_count;
      mss::cmd_synth(rc, synth_out, n);
    } else if (prepare->parsed()) {
      mss::RunConfig rc = resolve_config(prep_common);
      if (prep_target_opt->count() > 0) rc.target_size = prep_target;
      if (prep_source_opt->count() > 0) rc.source_tag = prep_source;
      mss::cmd_prepare(rc, prep_corpus, prep_out);
    } else if (train->parsed()) {
      mss::RunConfig rc = resolve_config(train_common);
      if (lr_opt->count() > 0) rc.training.learning_rate = train_lr;
      if (epochs_opt->count() > 0) rc.training.max_epochs = train_epochs;
      if (patience_opt->count() > 0) rc.training.patience = train_patience;
      if (batch_opt->count() > 0) rc.training.batch_size = train_batch;
      mss::cmd_train(rc, train_data, train_out, train_resume);
    } else if (cv->parsed()) {
      mss::RunConfig rc = resolve_config(cv_common);
      if (folds_opt->count() > 0) rc.training.outer_folds = cv_folds;
      mss::cmd_cv(rc, cv_data, cv_out);
    } else if (predict->parsed()) {
      mss::RunConfig rc = resolve_config(pred_common);
      mss::cmd_predict(rc, pr_data, pr_manifest, pr_weights, pr_out);
    } else if (evaluate->parsed()) {
      mss::RunConfig rc = resolve_config(eval_common);
      mss::cmd_evaluate(rc, ev_data, ev_manifest, ev_weights, ev_pred,
                        ev_report);
    } else if (analyze->parsed()) {
      mss::RunConfig rc = resolve_config(an_common);
      if (conn_opt->count() > 0) rc.connectivity = an_conn;
      if (min_area_opt->count() > 0) rc.min_area = an_min_area;
      mss::cmd_analyze(rc, an_data, an_manifest, an_pred, an_out, an_channel);
    }
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "mss: usage: %s\n", e.what());
    return 2;
  } catch (const mss::error& e) {
    std::fprintf(stderr, "mss: %s: %s\n", category_name(e.cat()), e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mss: internal: %s\n", e.what());
    return 1;
  }
}
