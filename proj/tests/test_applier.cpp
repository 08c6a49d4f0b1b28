#include <catch_amalgamated.hpp>

#include "helpers.hpp"
#include "patchbench/patchbench.hpp"

using namespace patchbench;

namespace {

Patch mid_range_patch(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Patch p = Patch::uniform_random(h, w, rng);
  for (double& v : p.pixels) v = 0.2 + 0.6 * v;  // keep clamping out of gradient tests
  return p;
}

ConcreteTransform plain(double scale_ratio) {
  ConcreteTransform t;
  t.scale_ratio = scale_ratio;
  return t;
}

}  // namespace

TEST_CASE("axis-aligned stamp at matching scale is an exact copy") {
  const ImageBuffer bg(32, 32, 0.5, "bg");
  const Patch p = mid_range_patch(16, 16, 1);
  const BoundingBox box{0, 0, 32, 32, kPersonClass, std::nullopt};
  // scale_ratio 0.25 of a 32x32 box puts a 16x16 patch on the grid exactly
  const ApplyResult r = apply_patch(bg, p, plain(0.25), Placement::center_of(box));

  CHECK(r.mask.area() == 16 * 16);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const bool inside = y >= 8 && y < 24 && x >= 8 && x < 24;
      REQUIRE(r.mask.get(y, x) == inside);
      for (int c = 0; c < 3; ++c) {
        const double want = inside ? p.pixels[((y - 8) * 16 + (x - 8)) * 3 + c] : 0.5;
        REQUIRE(r.image.at(y, x, c) == Catch::Approx(want).margin(1e-12));
      }
    }
  }
  REQUIRE(r.stamps.size() == 1);
  CHECK(r.stamps[0].box_index == 0);
  CHECK(r.stamps[0].transform.scale_ratio == 0.25);
}

TEST_CASE("stamped area tracks the area ratio") {
  const ImageBuffer bg(128, 128, 0.5);
  const Patch p = mid_range_patch(24, 24, 2);
  const BoundingBox box{20, 20, 84, 84, kPersonClass, std::nullopt};  // area 4096
  for (const double s : {0.1, 0.2, 0.4}) {
    const ApplyResult r = apply_patch(bg, p, plain(s), Placement::center_of(box));
    const double want = s * box.area();
    const double side = std::sqrt(want);
    CHECK(std::abs(r.mask.area() - want) <= 4.0 * side + 4.0);
  }
}

TEST_CASE("90 degree rotation transposes the footprint") {
  const ImageBuffer bg(64, 64, 0.5);
  Patch p = mid_range_patch(8, 16, 3);
  const BoundingBox box{0, 0, 64, 64, kPersonClass, std::nullopt};
  ConcreteTransform t = plain(0.125);  // 8x16 patch at scale 2 -> 16x32 footprint
  const ApplyResult flat = apply_patch(bg, p, t, Placement::center_of(box));
  t.rotation_deg = 90.0;
  const ApplyResult rot = apply_patch(bg, p, t, Placement::center_of(box));

  CHECK(flat.mask.area() == 16 * 32);
  CHECK(rot.mask.area() == 16 * 32);
  int flat_w = 0, rot_w = 0;
  for (int x = 0; x < 64; ++x) {
    flat_w += flat.mask.get(32, x) ? 1 : 0;
    rot_w += rot.mask.get(32, x) ? 1 : 0;
  }
  CHECK(flat_w == 32);
  CHECK(rot_w == 16);
}

TEST_CASE("disc masks leave rectangle corners untouched") {
  const ImageBuffer bg(32, 32, 0.5);
  Patch p = mid_range_patch(16, 16, 4);
  p.make_circular();
  CHECK(p.shape_area() < 16 * 16);
  CHECK(p.shape_area() > 16 * 16 / 2);
  const BoundingBox box{0, 0, 32, 32, kPersonClass, std::nullopt};
  const ApplyResult r = apply_patch(bg, p, plain(0.25), Placement::center_of(box));
  CHECK(!r.mask.get(8, 8));    // patch corner cell is outside the disc
  CHECK(r.mask.get(16, 16));   // center is inside
  CHECK(r.image.at(8, 8, 0) == 0.5);
  CHECK(static_cast<int>(r.mask.area()) == p.shape_area());
}

TEST_CASE("jitter translates the stamp") {
  const ImageBuffer bg(48, 48, 0.5);
  const Patch p = mid_range_patch(8, 8, 5);
  const BoundingBox box{8, 8, 40, 40, kPersonClass, std::nullopt};
  ConcreteTransform t = plain(0.0625);  // 8x8 footprint on a 32x32 box
  t.jitter_x = 6.0;
  t.jitter_y = -4.0;
  const ApplyResult r = apply_patch(bg, p, t, Placement::center_of(box));
  const ApplyResult base = apply_patch(bg, p, plain(0.0625), Placement::center_of(box));
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 48; ++x) {
      const bool want = x - 6 >= 0 && x - 6 < 48 && y + 4 < 48 && y + 4 >= 0 &&
                        base.mask.get(y + 4, x - 6);
      REQUIRE(r.mask.get(y, x) == want);
    }
  }
}

TEST_CASE("brightness scales values and clamps, with zero gradient when clamped") {
  const ImageBuffer bg(32, 32, 0.1);
  Patch p(8, 8);
  for (double& v : p.pixels) v = 0.9;
  const BoundingBox box{0, 0, 32, 32, kPersonClass, std::nullopt};
  ConcreteTransform t = plain(0.0625);
  t.brightness = 1.5;  // 0.9 * 1.5 clamps to 1
  const ApplyResult r = apply_patch(bg, p, t, Placement::center_of(box));
  bool saw_stamp = false;
  for (const StampPixel& sp : r.stamped) {
    saw_stamp = true;
    for (int c = 0; c < 3; ++c) {
      CHECK(r.image.pixels[static_cast<std::size_t>(sp.out_index) * 3 + c] == 1.0);
      CHECK(sp.clamped[c]);
    }
  }
  REQUIRE(saw_stamp);
  std::vector<double> ones(static_cast<std::size_t>(32) * 32 * 3, 1.0);
  for (double g : applier_backward(r, p, ones)) CHECK(g == 0.0);
}

TEST_CASE("backward matches finite differences through bilinear resampling") {
  const ImageBuffer bg(40, 40, 0.5);
  Patch p = mid_range_patch(7, 7, 6);
  const BoundingBox box{4, 4, 36, 36, kPersonClass, std::nullopt};
  ConcreteTransform t = plain(0.13);  // non-integer scale exercises interpolation
  t.brightness = 0.9;
  t.rotation_deg = 30.0;

  Rng wrng(7);
  std::vector<double> w(static_cast<std::size_t>(40) * 40 * 3);
  for (double& v : w) v = wrng.uniform(-1.0, 1.0);
  const auto loss = [&](const Patch& q) {
    const ApplyResult r = apply_patch(bg, q, t, Placement::center_of(box));
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) total += w[i] * r.image.pixels[i];
    return total;
  };

  const ApplyResult r = apply_patch(bg, p, t, Placement::center_of(box));
  const std::vector<double> grad = applier_backward(r, p, w);

  Rng pick(8);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t i =
        static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(grad.size()) - 1));
    Patch lo = p, hi = p;
    const double h = 1e-6;
    lo.pixels[i] -= h;
    hi.pixels[i] += h;
    const double fd = (loss(hi) - loss(lo)) / (2.0 * h);
    if (std::abs(fd) < 1e-9 && std::abs(grad[i]) < 1e-9) continue;
    CHECK(testutil::rel_err(grad[i], fd) < 1e-5);
  }
}

TEST_CASE("per-person stamping records replayable transforms") {
  ImageBuffer bg(96, 96, 0.5, "scene");
  GroundTruthSet gt;
  gt.image_id = "scene";
  gt.boxes.push_back({8, 8, 40, 40, kPersonClass, std::nullopt});
  gt.boxes.push_back({50, 10, 80, 44, 1, std::nullopt});  // not a person
  gt.boxes.push_back({48, 48, 88, 88, kPersonClass, std::nullopt});
  const Patch p = mid_range_patch(12, 12, 9);

  TransformSpec spec;
  spec.scale_ratio = Range(0.1, 0.3);
  spec.rotation_deg = Range(-20, 20);
  spec.jitter = Range(-2, 2);
  Rng rng(11);
  const ApplyResult r = apply_to_persons(bg, p, spec, gt, rng);

  REQUIRE(r.stamps.size() == 2);
  CHECK(r.stamps[0].box_index == 0);
  CHECK(r.stamps[1].box_index == 2);

  // replay from the records, in order, onto the clean image
  ImageBuffer replay = bg;
  BinaryMask replay_mask(96, 96);
  for (const StampRecord& s : r.stamps) {
    const ApplyResult one =
        apply_patch(replay, p, s.transform,
                    Placement::center_of(gt.boxes[static_cast<std::size_t>(s.box_index)]));
    replay = one.image;
    for (int i = 0; i < 96 * 96; ++i) {
      if (one.mask.bits[static_cast<std::size_t>(i)]) replay_mask.bits[static_cast<std::size_t>(i)] = 1;
    }
  }
  CHECK(replay.pixels == r.image.pixels);
  CHECK(replay_mask.bits == r.mask.bits);
}

TEST_CASE("stamping without person boxes is an error") {
  const ImageBuffer bg(32, 32, 0.5);
  GroundTruthSet gt;
  gt.boxes.push_back({0, 0, 10, 10, 3, std::nullopt});
  const Patch p = mid_range_patch(8, 8, 10);
  Rng rng(1);
  CHECK_THROWS_AS(apply_to_persons(bg, p, TransformSpec{}, gt, rng), PlacementError);
}

TEST_CASE("transform sampling respects its ranges") {
  TransformSpec spec;
  spec.rotation_deg = Range(-30, 30);
  spec.scale_ratio = Range(0.05, 0.5);
  spec.jitter = Range(-3, 3);
  spec.brightness = Range(0.8, 1.2);
  Rng rng(13);
  for (int i = 0; i < 500; ++i) {
    const ConcreteTransform t = sample_transform(spec, rng);
    CHECK(t.rotation_deg >= -30.0);
    CHECK(t.rotation_deg < 30.0);
    CHECK(t.scale_ratio >= 0.05);
    CHECK(t.scale_ratio < 0.5);
    CHECK(t.jitter_x >= -3.0);
    CHECK(t.jitter_y < 3.0);
    CHECK(t.brightness >= 0.8);
    CHECK(t.brightness < 1.2);
  }
  TransformSpec fixed;  // defaults are all point ranges
  const ConcreteTransform t = sample_transform(fixed, rng);
  CHECK(t.rotation_deg == 0.0);
  CHECK(t.scale_ratio == 0.2);
  CHECK(t.brightness == 1.0);
}

TEST_CASE("transform spec validation") {
  TransformSpec spec;
  spec.scale_ratio = Range::fixed(0.0);
  CHECK_THROWS_AS(spec.validate(), InvalidConfigError);
  spec.scale_ratio = Range::fixed(1.5);
  CHECK_THROWS_AS(spec.validate(), InvalidConfigError);
  spec.scale_ratio = Range(0.4, 0.2);
  CHECK_THROWS_AS(spec.validate(), InvalidConfigError);
}
