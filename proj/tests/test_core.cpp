#include <catch_amalgamated.hpp>

#include "helpers.hpp"
#include "patchbench/patchbench.hpp"

using namespace patchbench;

TEST_CASE("box IoU on a worked overlap") {
  const BoundingBox a{0, 0, 2, 2, 0, std::nullopt};
  const BoundingBox b{1, 0, 3, 2, 0, std::nullopt};
  CHECK(box_iou(a, b) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(box_iou(a, a) == Catch::Approx(1.0));
  const BoundingBox far{10, 10, 12, 12, 0, std::nullopt};
  CHECK(box_iou(a, far) == 0.0);
}

TEST_CASE("box IoU matches cell counting for integer boxes") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto make = [&rng] {
      const int x0 = static_cast<int>(rng.uniform_int(0, 15));
      const int y0 = static_cast<int>(rng.uniform_int(0, 15));
      const int x1 = x0 + static_cast<int>(rng.uniform_int(1, 8));
      const int y1 = y0 + static_cast<int>(rng.uniform_int(1, 8));
      return BoundingBox{static_cast<double>(x0), static_cast<double>(y0),
                         static_cast<double>(x1), static_cast<double>(y1), 0, std::nullopt};
    };
    const BoundingBox a = make(), b = make();
    int inter = 0, only_a = 0, only_b = 0;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const bool in_a = x >= a.x_min && x < a.x_max && y >= a.y_min && y < a.y_max;
        const bool in_b = x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
        inter += in_a && in_b;
        only_a += in_a && !in_b;
        only_b += !in_a && in_b;
      }
    }
    const double want = static_cast<double>(inter) / (inter + only_a + only_b);
    CHECK(box_iou(a, b) == Catch::Approx(want).margin(1e-12));
  }
}

TEST_CASE("degenerate boxes are rejected") {
  const BoundingBox flat{0, 0, 5, 0, 0, std::nullopt};
  const BoundingBox ok{0, 0, 1, 1, 0, std::nullopt};
  CHECK_THROWS_AS(box_iou(flat, ok), InvalidInputError);
  CHECK(!flat.valid());
  CHECK(ok.valid());
}

TEST_CASE("pixel confusion tallies a hand-counted pattern") {
  BinaryMask pred(4, 4), gt(4, 4);
  for (int y = 0; y < 4; ++y) {
    pred.set(y, 0, true);
    pred.set(y, 1, true);
  }
  for (int x = 0; x < 4; ++x) {
    gt.set(0, x, true);
    gt.set(1, x, true);
  }
  const PixelConfusion c = pixel_confusion(pred, gt);
  CHECK(c.tp == 4);
  CHECK(c.fp == 4);
  CHECK(c.fn == 4);
  CHECK_THROWS_AS(pixel_confusion(pred, BinaryMask(3, 4)), InvalidInputError);
}

TEST_CASE("image buffer basics") {
  ImageBuffer img(3, 5, 0.25, "probe");
  CHECK(img.height == 3);
  CHECK(img.width == 5);
  CHECK(img.pixels.size() == 3u * 5u * 3u);
  img.at(1, 2, 0) = 2.0;
  img.at(1, 2, 1) = -1.0;
  img.clamp01();
  CHECK(img.at(1, 2, 0) == 1.0);
  CHECK(img.at(1, 2, 1) == 0.0);
  CHECK(img.intensity(0, 0) == Catch::Approx(0.25));
  CHECK(img.same_shape(ImageBuffer(3, 5)));
  CHECK(!img.same_shape(ImageBuffer(5, 3)));
}

TEST_CASE("binary mask area and shape checks") {
  BinaryMask m(6, 4);
  CHECK(m.area() == 0);
  m.set(0, 0, true);
  m.set(5, 3, true);
  CHECK(m.area() == 2);
  CHECK(m.get(5, 3));
  m.set(5, 3, false);
  CHECK(m.area() == 1);
}

TEST_CASE("detection sets sort by descending score, unscored last") {
  DetectionSet d;
  d.boxes.push_back({0, 0, 1, 1, 0, std::nullopt});
  d.boxes.push_back({0, 0, 1, 1, 0, 0.3});
  d.boxes.push_back({0, 0, 1, 1, 0, 0.9});
  d.normalize();
  REQUIRE(d.boxes.size() == 3);
  CHECK(d.boxes[0].score.value() == 0.9);
  CHECK(d.boxes[1].score.value() == 0.3);
  CHECK(!d.boxes[2].score.has_value());
}
