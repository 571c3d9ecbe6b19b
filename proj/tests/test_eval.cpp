#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "mss/eval.hpp"
#include "mss/mask.hpp"
#include "mss/random.hpp"
#include "mss/unet.hpp"
#include "test_support.hpp"

using namespace mss;
using namespace test_support;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

MultiHotMask random_mask(int c, int h, int w, std::uint64_t seed) {
  MultiHotMask m(c, h, w);
  Rng rng(seed);
  for (auto& v : m.values) v = rng.uniform() < 0.5 ? 0 : 1;
  return m;
}

}  // namespace

TEST_CASE("binarize thresholds inclusively and per channel") {
  Tensor p({2, 2, 2});
  p[0] = 0.5f;   // channel 0
  p[1] = 0.49f;
  p[2] = 1.0f;
  p[3] = 0.0f;
  p[4] = 0.7f;   // channel 1
  p[5] = 0.5f;
  p[6] = 0.2f;
  p[7] = 0.51f;

  MultiHotMask m = binarize(p, 0.5);
  CHECK(m.values == std::vector<std::uint8_t>{1, 0, 1, 0, 1, 1, 0, 1});

  SECTION("threshold 0 sets everything") {
    MultiHotMask all = binarize(p, 0.0);
    for (auto v : all.values) CHECK(v == 1);
  }

  SECTION("a pixel can be active in several planes") {
    // pixel 0: channel 0 has 0.5, channel 1 has 0.7 -> both set
    CHECK(m.values[0] == 1);
    CHECK(m.values[4] == 1);
  }

  SECTION("rank-4 single-image tensors are accepted, batches are not") {
    Tensor single({1, 2, 2, 2});
    for (std::size_t i = 0; i < p.size(); ++i) single[i] = p[i];
    CHECK(binarize(single, 0.5).values == m.values);

    Tensor batch({2, 2, 2, 2});
    CHECK_THROWS_AS(binarize(batch, 0.5), shape_error);
  }

  SECTION("out-of-range probabilities are rejected") {
    Tensor bad({1, 1, 2});
    bad[0] = 1.25f;
    CHECK_THROWS_AS(binarize(bad, 0.5), validation_error);
    bad[0] = -0.1f;
    CHECK_THROWS_AS(binarize(bad, 0.5), validation_error);
  }
}

TEST_CASE("confusion counting") {
  MultiHotMask gt = random_mask(3, 8, 8, 11);

  SECTION("prediction equal to ground truth has no errors") {
    ConfusionCounts c = confusion(gt, gt);
    for (const auto& k : c.per_class) {
      CHECK(k.fp == 0);
      CHECK(k.fn == 0);
      CHECK(k.total() == 64);
    }
  }

  SECTION("complemented prediction has no correct pixels") {
    MultiHotMask inv = gt;
    for (auto& v : inv.values) v = 1 - v;
    ConfusionCounts c = confusion(inv, gt);
    for (const auto& k : c.per_class) {
      CHECK(k.tp == 0);
      CHECK(k.tn == 0);
    }
  }

  SECTION("random pair matches a brute-force recount") {
    MultiHotMask pred = random_mask(3, 8, 8, 13);
    ConfusionCounts c = confusion(pred, gt);
    for (int ch = 0; ch < 3; ++ch) {
      std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const int p = pred.values[(ch * 8 + y) * 8 + x];
          const int g = gt.values[(ch * 8 + y) * 8 + x];
          tp += p && g;
          fp += p && !g;
          fn += !p && g;
          tn += !p && !g;
        }
      CHECK(c.per_class[ch].tp == tp);
      CHECK(c.per_class[ch].fp == fp);
      CHECK(c.per_class[ch].fn == fn);
      CHECK(c.per_class[ch].tn == tn);
      CHECK(c.per_class[ch].total() == 64);
    }
  }

  SECTION("counts are invariant under a simultaneous flip of both masks") {
    MultiHotMask pred = random_mask(3, 8, 8, 17);
    ConfusionCounts a = confusion(pred, gt);
    ConfusionCounts b =
        confusion(flip_mask(pred, true, true), flip_mask(gt, true, true));
    for (int ch = 0; ch < 3; ++ch) {
      CHECK(a.per_class[ch].tp == b.per_class[ch].tp);
      CHECK(a.per_class[ch].fp == b.per_class[ch].fp);
      CHECK(a.per_class[ch].fn == b.per_class[ch].fn);
      CHECK(a.per_class[ch].tn == b.per_class[ch].tn);
    }
  }

  SECTION("shape mismatch is rejected") {
    MultiHotMask small(3, 4, 4);
    CHECK_THROWS_MATCHES(confusion(small, gt), shape_error,
                         MessageMatches(ContainsSubstring("ground truth")));
  }
}

TEST_CASE("metric formulas") {
  SECTION("hand example: TP=2 FP=2 FN=2") {
    ConfusionCounts c;
    c.per_class.push_back({2, 2, 2, 10});
    MetricSuite s = metric_suite(c);
    CHECK(s.per_class[0].dice == Approx(0.5));
    CHECK(s.per_class[0].iou == Approx(1.0 / 3.0));
    CHECK(s.per_class[0].precision == Approx(0.5));
    CHECK(s.per_class[0].recall == Approx(0.5));
    CHECK(s.per_class[0].accuracy == Approx(12.0 / 16.0));
  }

  SECTION("identical nonempty masks score 1.0 everywhere") {
    MultiHotMask m = random_mask(4, 8, 8, 19);
    bool any = false;
    for (auto v : m.values) any |= v != 0;
    REQUIRE(any);
    MetricSuite s = metric_suite(confusion(m, m));
    for (const auto& k : s.per_class) {
      CHECK(k.accuracy == 1.0);
      CHECK(k.precision == 1.0);
      CHECK(k.recall == 1.0);
      CHECK(k.dice == 1.0);
      CHECK(k.iou == 1.0);
    }
    CHECK(s.macro.dice == 1.0);
  }

  SECTION("class absent from both sides scores 1.0, not 0") {
    ConfusionCounts c;
    c.per_class.push_back({0, 0, 0, 64});
    MetricSuite s = metric_suite(c);
    CHECK(s.per_class[0].precision == 1.0);
    CHECK(s.per_class[0].recall == 1.0);
    CHECK(s.per_class[0].dice == 1.0);
    CHECK(s.per_class[0].iou == 1.0);
    CHECK(s.per_class[0].accuracy == 1.0);
  }

  SECTION("dice and iou identities on random counts") {
    Rng rng(23);
    for (int trial = 0; trial < 200; ++trial) {
      ConfusionCounts c;
      c.per_class.push_back({rng.below(50), rng.below(50), rng.below(50),
                             rng.below(50) + 1});
      MetricSuite s = metric_suite(c);
      const ClassMetrics& m = s.per_class[0];
      CHECK(m.dice == Approx(2.0 * m.iou / (1.0 + m.iou)).epsilon(1e-12));
      CHECK(m.dice >= m.iou);
      for (double v : {m.accuracy, m.precision, m.recall, m.dice, m.iou}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }

  SECTION("macro average is the unweighted class mean") {
    ConfusionCounts c;
    c.per_class.push_back({2, 2, 2, 10});  // dice 0.5
    c.per_class.push_back({0, 0, 0, 16});  // dice 1.0
    MetricSuite s = metric_suite(c);
    CHECK(s.macro.dice == Approx(0.75));
    CHECK(s.macro.iou == Approx((1.0 / 3.0 + 1.0) / 2.0));
  }

  SECTION("accuracy equals 1 - Hamming error rate") {
    MultiHotMask gt = random_mask(2, 16, 16, 29);
    MultiHotMask pred = random_mask(2, 16, 16, 31);
    MetricSuite s = metric_suite(confusion(pred, gt));
    for (int ch = 0; ch < 2; ++ch) {
      std::size_t wrong = 0;
      for (int i = 0; i < 16 * 16; ++i)
        wrong += pred.values[ch * 256 + i] != gt.values[ch * 256 + i];
      CHECK(s.per_class[ch].accuracy ==
            Approx(1.0 - static_cast<double>(wrong) / 256.0));
    }
  }
}

namespace {

SampleRecord make_record(const std::string& id, std::uint64_t seed, int size) {
  SampleRecord r;
  r.id = id;
  r.base_id = id;
  r.source = "test";
  r.image = random_tensor({1, size, size}, seed);
  r.mask = random_mask(4, size, size, seed ^ 0xFFFF);
  return r;
}

}  // namespace

TEST_CASE("evaluate_corpus aggregates counts globally") {
  UNetConfig cfg;
  cfg.in_channels = 1;
  cfg.out_channels = 4;
  cfg.depth = 1;
  cfg.base_width = 2;
  cfg.input_size = 8;
  UNetModel model = build_unet(cfg, 37);

  SampleRecord r1 = make_record("a", 41, 8);

  SECTION("single-record corpus equals the direct computation") {
    EvalResult res = evaluate_corpus(model, {r1});
    Tensor batch({1, 1, 8, 8});
    std::copy(r1.image.data(), r1.image.data() + r1.image.size(),
              batch.data());
    Tensor logits = unet_forward(model, batch);
    MultiHotMask pred = binarize(sigmoid(logits), 0.5);
    ConfusionCounts direct = confusion(pred, r1.mask);
    MetricSuite expect = metric_suite(direct);
    for (int c = 0; c < 4; ++c) {
      CHECK(res.overall.per_class[c].dice == expect.per_class[c].dice);
      CHECK(res.counts.per_class[c].tp == direct.per_class[c].tp);
    }
    REQUIRE(res.per_image.size() == 1);
    CHECK(res.per_image[0].id == "a");
    CHECK(res.per_image[0].suite.macro.dice == expect.macro.dice);
  }

  SECTION("two identical records give the single-record metrics") {
    EvalResult one = evaluate_corpus(model, {r1});
    EvalResult two = evaluate_corpus(model, {r1, r1});
    for (int c = 0; c < 4; ++c) {
      CHECK(two.overall.per_class[c].dice ==
            Approx(one.overall.per_class[c].dice).epsilon(1e-14));
      CHECK(two.counts.per_class[c].tp == 2 * one.counts.per_class[c].tp);
    }
    CHECK(two.overall.bce == Approx(one.overall.bce).epsilon(1e-14));
    CHECK(two.per_image.size() == 2);
  }

  SECTION("parallel evaluation matches sequential") {
    std::vector<SampleRecord> recs;
    for (int i = 0; i < 6; ++i)
      recs.push_back(make_record("r" + std::to_string(i), 100 + i, 8));
    EvalResult seq = evaluate_corpus(model, recs, 0.5, 1);
    EvalResult par = evaluate_corpus(model, recs, 0.5, 4);
    CHECK(seq.overall.macro.dice == par.overall.macro.dice);
    CHECK(seq.overall.bce == par.overall.bce);
    for (int c = 0; c < 4; ++c)
      CHECK(seq.counts.per_class[c].tp == par.counts.per_class[c].tp);
  }

  SECTION("empty corpus is rejected") {
    CHECK_THROWS_AS(evaluate_corpus(model, {}), validation_error);
  }

  SECTION("dice >= iou on every class") {
    std::vector<SampleRecord> recs;
    for (int i = 0; i < 4; ++i)
      recs.push_back(make_record("r" + std::to_string(i), 200 + i, 8));
    EvalResult res = evaluate_corpus(model, recs);
    for (const auto& m : res.overall.per_class) CHECK(m.dice >= m.iou);
    for (const auto& img : res.per_image)
      for (const auto& m : img.suite.per_class) CHECK(m.dice >= m.iou);
  }
}

TEST_CASE("evaluation report formatting") {
  ConfusionCounts c;
  c.per_class.push_back({2, 2, 2, 10});
  c.per_class.push_back({0, 0, 0, 16});
  MetricSuite s = metric_suite(c);
  s.bce = 0.125;

  const std::string report = format_report(s, {"crack", "busbar"});
  CHECK_THAT(report, ContainsSubstring("crack"));
  CHECK_THAT(report, ContainsSubstring("busbar"));
  CHECK_THAT(report, ContainsSubstring("macro"));
  CHECK_THAT(report, ContainsSubstring("0.500000"));  // crack dice
  CHECK_THAT(report, ContainsSubstring("bce 0.125"));

  CHECK_THROWS_AS(format_report(s, {"only-one"}), validation_error);

  TempDir dir("eval");
  write_report(s, {"crack", "busbar"}, dir.path() / "report.txt");
  CHECK(read_file(dir.path() / "report.txt") == report);
}
