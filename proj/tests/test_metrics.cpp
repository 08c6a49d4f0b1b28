#include "catch_amalgamated.hpp"

#include <cmath>
#include <set>
#include <thread>

#include "patchbench/metrics.hpp"
#include "patchbench/rng.hpp"

#include "helpers.hpp"

using namespace patchbench;

namespace {

BoundingBox box(double x0, double y0, double x1, double y1, int cls = kPersonClass,
                std::optional<double> score = std::nullopt) {
  BoundingBox b;
  b.x_min = x0;
  b.y_min = y0;
  b.x_max = x1;
  b.y_max = y1;
  b.class_id = cls;
  b.score = score;
  return b;
}

EvalRecord record_with(std::vector<BoundingBox> dets, std::vector<BoundingBox> gts,
                       const std::string& id = "img") {
  EvalRecord r;
  r.image_id = id;
  r.attack_name = "attack";
  r.defense_name = "none";
  r.detector_name = "toy";
  r.detections.image_id = id;
  r.detections.boxes = std::move(dets);
  r.detections.normalize();
  r.gt.image_id = id;
  r.gt.boxes = std::move(gts);
  return r;
}

}  // namespace

TEST_CASE("average precision on a worked three detection pool") {
  // Two GT persons far apart; detections pool to TP(.9), FP(.8), TP(.7).
  std::vector<EvalRecord> records;
  records.push_back(record_with(
      {box(0, 0, 10, 10, kPersonClass, 0.9), box(40, 40, 50, 50, kPersonClass, 0.8)},
      {box(0, 0, 10, 10)}, "a"));
  records.push_back(record_with({box(5, 5, 15, 15, kPersonClass, 0.7)},
                                {box(5, 5, 15, 15)}, "b"));

  // precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1 -> area 1/2 + 1/2 * 2/3.
  REQUIRE(ap_at_iou(records) == Catch::Approx(5.0 / 6.0).epsilon(0).margin(1e-9));

  // 11-point: levels 0..0.5 read precision 1, levels 0.6..1.0 read 2/3.
  const double ap11 = ap_at_iou(records, 0.5, kPersonClass, ApInterpolation::ElevenPoint);
  REQUIRE(ap11 == Catch::Approx((6.0 + 5.0 * 2.0 / 3.0) / 11.0).epsilon(0).margin(1e-9));
}

TEST_CASE("duplicate detections of one ground truth count as false positives") {
  std::vector<EvalRecord> records;
  records.push_back(record_with(
      {box(0, 0, 10, 10, kPersonClass, 0.9), box(0, 0, 10, 10, kPersonClass, 0.8)},
      {box(0, 0, 10, 10), box(100, 100, 110, 110)}));
  // TP(.9) then FP(.8): precision 1 then 1/2 at recall 1/2 throughout.
  REQUIRE(ap_at_iou(records) == Catch::Approx(0.5).epsilon(0).margin(1e-9));
}

TEST_CASE("matching picks the overlap maximizing ground truth and filters class") {
  // d1 overlaps A at 0.818 and B at 0.538. Claiming the first GT above the
  // threshold (B is listed first) would strand d2, whose only viable match
  // is B; claiming the best overlap leaves both detections true positives.
  std::vector<EvalRecord> records;
  records.push_back(record_with(
      {box(0, 1, 10, 11, kPersonClass, 0.9), box(0, 4, 10, 14, kPersonClass, 0.8),
       box(0, 1, 10, 11, 1, 0.99)},
      {box(0, 4, 10, 14), box(0, 0, 10, 10), box(0, 1, 10, 11, 1)}));
  REQUIRE(ap_at_iou(records) == Catch::Approx(1.0).epsilon(0).margin(1e-9));
}

TEST_CASE("average precision is undefined without ground truth of the class") {
  std::vector<EvalRecord> records;
  records.push_back(record_with({box(0, 0, 10, 10, kPersonClass, 0.9)},
                                {box(0, 0, 10, 10, 1)}));
  REQUIRE_THROWS_AS(ap_at_iou(records), UndefinedMetricError);
}

TEST_CASE("failed records are excluded from the detection pool") {
  std::vector<EvalRecord> records;
  records.push_back(record_with({box(0, 0, 10, 10, kPersonClass, 0.9)},
                                {box(0, 0, 10, 10)}));
  EvalRecord bad = record_with({box(50, 50, 60, 60, kPersonClass, 0.95)},
                               {box(0, 0, 10, 10)}, "bad");
  bad.failed = true;
  records.push_back(bad);
  REQUIRE(ap_at_iou(records) == Catch::Approx(1.0).epsilon(0).margin(1e-9));
}

TEST_CASE("average precision agrees with a per true positive summation oracle") {
  // Each detection is either an exact copy of one grid GT or far off the
  // grid, so TP flags are unambiguous: first copy per GT wins, later copies
  // and stray boxes are FPs. The oracle accumulates the precision envelope
  // once per TP instead of integrating recall deltas.
  Rng rng(20240817);
  for (int trial = 0; trial < 30; ++trial) {
    const int n_gt = rng.uniform_int(1, 4);
    const int n_det = rng.uniform_int(1, 10);
    std::vector<BoundingBox> gts;
    for (int g = 0; g < n_gt; ++g) {
      gts.push_back(box(g * 40.0, 0, g * 40.0 + 10, 10));
    }
    struct Det {
      double score;
      int gt;  // -1 for a stray box
    };
    std::vector<Det> dets;
    std::vector<BoundingBox> det_boxes;
    for (int d = 0; d < n_det; ++d) {
      const bool stray = rng.uniform() < 0.4;
      const int g = stray ? -1 : rng.uniform_int(0, n_gt - 1);
      const double score = 0.1 + 0.8 * d / static_cast<double>(n_det) +
                           0.01 * rng.uniform();  // distinct scores
      dets.push_back({score, g});
      if (g >= 0) {
        det_boxes.push_back(box(g * 40.0, 0, g * 40.0 + 10, 10, kPersonClass, score));
      } else {
        det_boxes.push_back(box(1000.0 + 20 * d, 0, 1010.0 + 20 * d, 10, kPersonClass, score));
      }
    }
    std::vector<EvalRecord> records;
    records.push_back(record_with(det_boxes, gts));

    std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
      return a.score > b.score;
    });
    std::vector<bool> claimed(gts.size(), false);
    std::vector<bool> tp;
    for (const Det& d : dets) {
      const bool hit = d.gt >= 0 && !claimed[static_cast<std::size_t>(d.gt)];
      if (hit) claimed[static_cast<std::size_t>(d.gt)] = true;
      tp.push_back(hit);
    }
    std::vector<double> prec(tp.size());
    int hits = 0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
      if (tp[i]) ++hits;
      prec[i] = hits / static_cast<double>(i + 1);
    }
    for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
    double oracle = 0.0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
      if (tp[i]) oracle += prec[i] / n_gt;
    }

    REQUIRE(ap_at_iou(records) == Catch::Approx(oracle).epsilon(0).margin(1e-9));
  }
}

TEST_CASE("attack success rate counts persons without a surviving detection") {
  std::vector<EvalRecord> records;
  // Person 1 redetected at 0.9, person 2 only below the confidence floor.
  records.push_back(record_with(
      {box(0, 0, 10, 10, kPersonClass, 0.9), box(40, 0, 50, 10, kPersonClass, 0.3)},
      {box(0, 0, 10, 10), box(40, 0, 50, 10)}, "a"));
  // Fully hidden person.
  records.push_back(record_with({}, {box(0, 0, 10, 10)}, "b"));
  REQUIRE(asr(records) == Catch::Approx(2.0 / 3.0).epsilon(0).margin(1e-9));

  // Two confident detections piled on person 1 leave person 2 hidden.
  std::vector<EvalRecord> piled;
  piled.push_back(record_with(
      {box(0, 0, 10, 10, kPersonClass, 0.9), box(0, 0, 10, 10, kPersonClass, 0.8)},
      {box(0, 0, 10, 10), box(40, 0, 50, 10)}));
  REQUIRE(asr(piled) == Catch::Approx(0.5).epsilon(0).margin(1e-9));
}

TEST_CASE("attack success rate is undefined without ground truth persons") {
  std::vector<EvalRecord> records;
  records.push_back(record_with({box(0, 0, 10, 10, kPersonClass, 0.9)},
                                {box(0, 0, 10, 10, 1)}));
  REQUIRE_THROWS_AS(asr(records), UndefinedMetricError);
}

TEST_CASE("summed and per image mask iou split on a two image fixture") {
  // Large accurate mask and small sloppy mask: pooling hides the bad one.
  std::vector<PixelConfusion> confusions = {{90, 5, 5}, {1, 9, 0}};
  REQUIRE(smiou(confusions) == Catch::Approx(91.0 / 110.0).epsilon(0).margin(1e-9));
  REQUIRE(nmiou(confusions) == Catch::Approx(0.5).epsilon(0).margin(1e-9));
}

TEST_CASE("per image mask iou treats doubly empty images as perfect") {
  std::vector<PixelConfusion> confusions = {{90, 5, 5}, {0, 0, 0}};
  REQUIRE(nmiou(confusions) == Catch::Approx((0.9 + 1.0) / 2.0).epsilon(0).margin(1e-9));
  // Pooled version ignores the empty image entirely.
  REQUIRE(smiou(confusions) == Catch::Approx(0.9).epsilon(0).margin(1e-9));
}

TEST_CASE("mask iou metrics reject empty and degenerate inputs") {
  REQUIRE_THROWS_AS(smiou({}), UndefinedMetricError);
  REQUIRE_THROWS_AS(nmiou({}), UndefinedMetricError);
  std::vector<PixelConfusion> all_empty = {{0, 0, 0}, {0, 0, 0}};
  REQUIRE_THROWS_AS(smiou(all_empty), UndefinedMetricError);
  REQUIRE(nmiou(all_empty) == Catch::Approx(1.0));
}

TEST_CASE("mask iou matches a direct pixel tally on random masks") {
  Rng rng(99);
  std::vector<PixelConfusion> confusions;
  long long tp = 0, fp = 0, fn = 0;
  for (int i = 0; i < 5; ++i) {
    const BinaryMask pred = testutil::random_mask(17, 23, 0.3, rng);
    const BinaryMask gt = testutil::random_mask(17, 23, 0.3, rng);
    confusions.push_back(pixel_confusion(pred, gt));
    for (int y = 0; y < 17; ++y) {
      for (int x = 0; x < 23; ++x) {
        tp += pred.get(y, x) && gt.get(y, x);
        fp += pred.get(y, x) && !gt.get(y, x);
        fn += !pred.get(y, x) && gt.get(y, x);
      }
    }
  }
  REQUIRE(smiou(confusions) ==
          Catch::Approx(static_cast<double>(tp) / static_cast<double>(tp + fp + fn))
              .epsilon(0)
              .margin(1e-12));
}

TEST_CASE("timing excludes warm up runs from the mean") {
  std::vector<ImageBuffer> corpus(6, ImageBuffer(4, 4));
  int calls = 0;
  const double mean = time_cost_ms(
      [&](const ImageBuffer&) {
        if (calls++ < 3) std::this_thread::sleep_for(std::chrono::milliseconds(30));
      },
      corpus);
  REQUIRE(calls == 6);
  REQUIRE(mean < 15.0);  // warm-up sleeps discarded, rest is near zero

  REQUIRE_THROWS_AS(
      time_cost_ms([](const ImageBuffer&) {}, std::vector<ImageBuffer>(3, ImageBuffer(2, 2))),
      InvalidInputError);
}

TEST_CASE("run length mask encoding round trips") {
  Rng rng(7);
  std::vector<BinaryMask> masks;
  masks.push_back(testutil::random_mask(9, 14, 0.5, rng));
  masks.push_back(BinaryMask(3, 5));         // all clear
  masks.push_back(BinaryMask(3, 5, true));   // all set, leading zero run
  for (const BinaryMask& m : masks) {
    const BinaryMask back = mask_from_json(mask_to_json(m));
    REQUIRE(back.height == m.height);
    REQUIRE(back.width == m.width);
    REQUIRE(back.bits == m.bits);
  }

  nlohmann::json bad = {{"h", 2}, {"w", 2}, {"rle", {1, 1}}};
  REQUIRE_THROWS_AS(mask_from_json(bad), InvalidInputError);
  nlohmann::json over = {{"h", 2}, {"w", 2}, {"rle", {3, 3}}};
  REQUIRE_THROWS_AS(mask_from_json(over), InvalidInputError);
}

TEST_CASE("eval records survive a jsonl round trip") {
  Rng rng(11);
  std::vector<EvalRecord> records;

  EvalRecord full = record_with(
      {box(1, 2, 3, 4, kPersonClass, 0.75), box(0, 0, 5, 5, 2)},  // one unscored box
      {box(1, 2, 3, 4)}, "with-masks");
  full.pred_mask = testutil::random_mask(6, 8, 0.4, rng);
  full.gt_mask = testutil::random_mask(6, 8, 0.4, rng);
  full.defense_ms = 12.5;
  records.push_back(full);

  EvalRecord failed = record_with({}, {}, "broken");
  failed.failed = true;
  failed.error = "detector timed out";
  records.push_back(failed);

  testutil::TempDir dir;
  const std::string path = dir.str("records.jsonl");
  write_records_jsonl(path, records);
  const std::vector<EvalRecord> back = read_records_jsonl(path);

  REQUIRE(back.size() == 2);
  REQUIRE(back[0].image_id == "with-masks");
  REQUIRE(back[0].detections.boxes.size() == 2);
  REQUIRE(back[0].detections.boxes[0].score);
  REQUIRE(*back[0].detections.boxes[0].score == Catch::Approx(0.75));
  REQUIRE_FALSE(back[0].detections.boxes[1].score.has_value());
  REQUIRE(back[0].gt.boxes.size() == 1);
  REQUIRE(back[0].pred_mask);
  REQUIRE(back[0].pred_mask->bits == full.pred_mask->bits);
  REQUIRE(back[0].gt_mask->bits == full.gt_mask->bits);
  REQUIRE(back[0].defense_ms == Catch::Approx(12.5));
  REQUIRE_FALSE(back[0].failed);
  REQUIRE(back[1].failed);
  REQUIRE(back[1].error == "detector timed out");
  REQUIRE_FALSE(back[1].pred_mask.has_value());

  REQUIRE_THROWS_AS(read_records_jsonl(dir.str("missing.jsonl")), IoError);
}

TEST_CASE("metric report groups by detector and attack") {
  Rng rng(3);
  std::vector<EvalRecord> records;
  for (const std::string& det : {"toy", "ext"}) {
    for (const std::string& att : {"clean", "patch"}) {
      EvalRecord r = record_with({box(0, 0, 10, 10, kPersonClass, 0.9)},
                                 {box(0, 0, 10, 10)}, det + "-" + att);
      r.detector_name = det;
      r.attack_name = att;
      r.defense_ms = 2.0;
      if (att == "patch") {
        r.pred_mask = testutil::random_mask(8, 8, 0.5, rng);
        r.gt_mask = r.pred_mask;
      }
      records.push_back(r);
    }
  }
  EvalRecord bad = record_with({}, {}, "ext-fail");
  bad.detector_name = "ext";
  bad.attack_name = "patch";
  bad.failed = true;
  records.push_back(bad);

  const MetricReport report = compute_metrics(records);
  REQUIRE(report.overall.records == 5);
  REQUIRE(report.overall.failed == 1);
  REQUIRE(report.overall.ap50);
  REQUIRE(*report.overall.ap50 == Catch::Approx(1.0));
  REQUIRE(report.overall.asr);
  REQUIRE(*report.overall.asr == Catch::Approx(0.0));
  REQUIRE(report.by_detector.size() == 2);
  REQUIRE(report.by_detector.at("toy").records == 2);
  REQUIRE(report.by_detector.at("ext").records == 3);
  REQUIRE(report.by_detector.at("ext").failed == 1);
  REQUIRE(report.by_attack.at("patch").smiou);
  REQUIRE(*report.by_attack.at("patch").smiou == Catch::Approx(1.0));
  REQUIRE_FALSE(report.by_attack.at("clean").smiou.has_value());
  REQUIRE(report.overall.mean_defense_ms);
  REQUIRE(*report.overall.mean_defense_ms == Catch::Approx(2.0));
}
