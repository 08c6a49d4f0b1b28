#include <catch_amalgamated.hpp>

#include <fstream>

#include "helpers.hpp"
#include "patchbench/patchbench.hpp"

using namespace patchbench;

namespace {

void paste(ImageBuffer& dst, const ImageBuffer& src, int oy, int ox) {
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      for (int c = 0; c < 3; ++c) dst.at(oy + y, ox + x, c) = src.at(y, x, c);
    }
  }
}

}  // namespace

TEST_CASE("an exact template copy is detected with near-saturated confidence") {
  const ImageBuffer templ = make_checker_template();
  ToyDetector det(templ);
  ImageBuffer scene(64, 64, 0.5, "scene");
  paste(scene, templ, 8, 16);

  const DetectionSet d = det.detect(scene);
  REQUIRE(!d.boxes.empty());
  // the checker is self-similar under cell shifts, so partial-overlap windows
  // can fire too; the aligned window must rank first at sigmoid(temperature/2)
  const BoundingBox& b = d.boxes[0];
  CHECK(b.x_min == 16.0);
  CHECK(b.y_min == 8.0);
  CHECK(b.x_max == 48.0);
  CHECK(b.y_max == 40.0);
  CHECK(b.class_id == kPersonClass);
  CHECK(*b.score == Catch::Approx(1.0 / (1.0 + std::exp(-5.0))).epsilon(1e-9));
  for (std::size_t i = 1; i < d.boxes.size(); ++i) CHECK(*d.boxes[i].score < 0.75);
}

TEST_CASE("featureless scenes yield nothing and anti-correlation zeroes the match") {
  ToyDetector det(make_checker_template());
  CHECK(det.detect(ImageBuffer(64, 64, 0.5, "flat")).boxes.empty());

  const ImageBuffer anti = make_checker_template(32, 2, 0.75, 0.25);  // inverted phase
  ImageBuffer scene(64, 64, 0.5, "anti");
  paste(scene, anti, 8, 8);
  for (const Candidate& c : det.confidence_field(scene)) {
    if (c.box.y_min == 8.0 && c.box.x_min == 8.0) {
      // ncc = -1 where the inverted copy aligns with the template
      CHECK(c.confidence == Catch::Approx(1.0 / (1.0 + std::exp(15.0))).epsilon(1e-9));
    }
  }
  const DetectionSet d = det.detect(scene);
  for (const BoundingBox& kept : d.boxes) {
    CHECK(!(kept.x_min == 8.0 && kept.y_min == 8.0));
  }
}

TEST_CASE("greedy NMS keeps the best box per overlap group") {
  std::vector<BoundingBox> boxes;
  boxes.push_back({0, 0, 10, 10, 0, 0.8});
  boxes.push_back({1, 1, 11, 11, 0, 0.9});   // overlaps the first
  boxes.push_back({30, 30, 40, 40, 0, 0.7}); // distant
  boxes.push_back({1, 1, 11, 11, 1, 0.6});   // overlapping but another class
  const std::vector<BoundingBox> kept = nms(boxes, 0.5);
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].score.value() == 0.9);
  CHECK(kept[1].score.value() == 0.7);
  CHECK(kept[2].class_id == 1);
}

TEST_CASE("confidence gradient matches finite differences") {
  ToyDetector det(make_checker_template());
  Rng rng(21);
  ImageBuffer scene = testutil::random_image(48, 48, rng, "grad");

  const std::vector<Candidate> field = det.confidence_field(scene);
  REQUIRE(!field.empty());
  const Candidate cand = field[field.size() / 2];
  const std::vector<double> grad = det.confidence_gradient(scene, cand);

  Rng pick(22);
  int tested = 0;
  while (tested < 10) {
    const int y = static_cast<int>(pick.uniform_int(0, 47));
    const int x = static_cast<int>(pick.uniform_int(0, 47));
    const int c = static_cast<int>(pick.uniform_int(0, 2));
    const bool inside = y >= cand.box.y_min && y < cand.box.y_max && x >= cand.box.x_min &&
                        x < cand.box.x_max;
    const std::size_t i = (static_cast<std::size_t>(y) * 48 + x) * 3 + c;
    const double h = 1e-6;
    ImageBuffer lo = scene, hi = scene;
    lo.pixels[i] -= h;
    hi.pixels[i] += h;
    const auto conf_at = [&](const ImageBuffer& img) {
      return det.confidence_field(img)[static_cast<std::size_t>(cand.index)].confidence;
    };
    const double fd = (conf_at(hi) - conf_at(lo)) / (2.0 * h);
    if (!inside) {
      CHECK(grad[i] == 0.0);
      CHECK(std::abs(fd) < 1e-9);
    } else {
      CHECK(testutil::rel_err(grad[i], fd) < 1e-4);
      ++tested;
    }
  }
}

TEST_CASE("flat windows carry zero gradient") {
  ToyDetector det(make_checker_template());
  const ImageBuffer flat(48, 48, 0.3, "flat");
  const std::vector<Candidate> field = det.confidence_field(flat);
  REQUIRE(!field.empty());
  for (double g : det.confidence_gradient(flat, field[0])) CHECK(g == 0.0);
}

TEST_CASE("toy detector passes the conformance probe") {
  ToyDetector det(make_checker_template());
  ImageBuffer scene(64, 64, 0.5, "probe");
  paste(scene, make_checker_template(), 0, 0);
  CHECK(check_detector_conformance(det, scene).empty());
}

TEST_CASE("external adapter round trip through a scripted detector") {
  testutil::TempDir tmp;
  {
    std::ofstream script(tmp.str("det.sh"));
    script << "#!/bin/sh\n"
           << "# $1 is the image path; answer with two fixed detections\n"
           << "test -f \"$1\" || exit 3\n"
           << "echo '# comment line'\n"
           << "echo 'probe 0 0.55 1 2 9 12'\n"
           << "echo 'probe 0 0.91 3 4 11 14'\n";
  }
  ExternalDetectorAdapter det("scripted", "sh " + tmp.str("det.sh"));
  CHECK(det.name() == "scripted");
  CHECK(!det.thread_safe());

  const DetectionSet d = det.detect(ImageBuffer(16, 16, 0.5, "probe"));
  REQUIRE(d.boxes.size() == 2);
  CHECK(d.image_id == "probe");
  CHECK(d.boxes[0].score.value() == 0.91);  // sorted on ingest
  CHECK(d.boxes[1].score.value() == 0.55);
  CHECK(d.boxes[0].x_min == 3.0);

  CHECK(check_detector_conformance(det, ImageBuffer(16, 16, 0.5, "probe")).empty());
}

TEST_CASE("external adapter surfaces failures") {
  ExternalDetectorAdapter broken("broken", "exit 7 ;");
  CHECK_THROWS_AS(broken.detect(ImageBuffer(8, 8, 0.5, "x")), IoError);

  CHECK_THROWS_AS(ExternalDetectorAdapter::parse_response("img not_a_number", "img"), IoError);
  const DetectionSet empty = ExternalDetectorAdapter::parse_response("# nothing\n", "fallback");
  CHECK(empty.boxes.empty());
  CHECK(empty.image_id == "fallback");
}
