#include <catch_amalgamated.hpp>

#include "helpers.hpp"
#include "patchbench/patchbench.hpp"

using namespace patchbench;

namespace {

/// Flat image with a noise block; both localizers should flag exactly that
/// region when blocks are tile-aligned.
ImageBuffer flat_with_noise_block(int side, int by, int bx, int bs, std::uint64_t seed) {
  ImageBuffer img(side, side, 0.5, "blocked");
  Rng rng(seed);
  for (int y = by; y < by + bs; ++y) {
    for (int x = bx; x < bx + bs; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rng.uniform();
    }
  }
  return img;
}

double block_coverage(const BinaryMask& m, int by, int bx, int bs) {
  int inside = 0;
  for (int y = by; y < by + bs; ++y) {
    for (int x = bx; x < bx + bs; ++x) inside += m.get(y, x) ? 1 : 0;
  }
  return static_cast<double>(inside) / (bs * bs);
}

double outside_fraction(const BinaryMask& m, int by, int bx, int bs) {
  int outside = 0, total = 0;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const bool in_block = y >= by && y < by + bs && x >= bx && x < bx + bs;
      if (in_block) continue;
      ++total;
      outside += m.get(y, x) ? 1 : 0;
    }
  }
  return static_cast<double>(outside) / total;
}

bool subset_of(const BinaryMask& a, const BinaryMask& b) {
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    if (a.bits[i] && !b.bits[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("component labeling is 8-connected") {
  BinaryMask m(5, 5);
  m.set(0, 0, true);
  m.set(1, 1, true);  // diagonal neighbor, same component
  m.set(3, 4, true);  // separate
  int count = 0;
  const std::vector<int> labels = detail::label_components(m, &count);
  CHECK(count == 2);
  CHECK(labels[0] == labels[6]);
  CHECK(labels[0] != labels[3 * 5 + 4]);
  CHECK(labels[2] == 0);  // background
}

TEST_CASE("the component area floor removes specks") {
  BinaryMask m(20, 20);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 4; ++x) m.set(y, x, true);  // 20 px, survives
  }
  for (int y = 10; y < 13; ++y) {
    for (int x = 10; x < 13; ++x) m.set(y, x, true);  // 9 px, dropped
  }
  const BinaryMask kept = drop_small_components(m);
  CHECK(kept.area() == 20);
  CHECK(kept.get(0, 0));
  CHECK(!kept.get(11, 11));
}

TEST_CASE("dilation grows a point into squares") {
  BinaryMask m(9, 9);
  m.set(4, 4, true);
  CHECK(dilate(m, 1).area() == 9);
  CHECK(dilate(m, 2).area() == 25);
  CHECK(dilate(m, 0).area() == 1);
}

TEST_CASE("gradient localization flags a noise block and only it") {
  const ImageBuffer img = flat_with_noise_block(64, 8, 8, 16, 61);
  const BinaryMask mask = lgs_localize(img, LgsConfig{});
  CHECK(block_coverage(mask, 8, 8, 16) >= 0.8);
  CHECK(outside_fraction(mask, 8, 8, 16) < 0.05);
}

TEST_CASE("gradient suppression pulls masked pixels toward the tile mean") {
  // constant 0.2 tile with a single bright outlier
  ImageBuffer img(8, 8, 0.2, "tile");
  img.at(3, 3, 0) = img.at(3, 3, 1) = img.at(3, 3, 2) = 1.0;
  BinaryMask mask(8, 8);
  mask.set(3, 3, true);
  LgsConfig cfg;  // window 8 covers the whole image, suppression 0.8
  const ImageBuffer out = lgs_purify(img, mask, cfg);
  const double mean = (63.0 * 0.2 + 1.0) / 64.0;
  const double want = mean + 0.2 * (1.0 - mean);
  CHECK(out.at(3, 3, 0) == Catch::Approx(want).epsilon(1e-12));
  CHECK(out.at(0, 0, 0) == 0.2);  // unmasked untouched

  // full suppression flattens to the mean exactly
  cfg.suppression = 1.0;
  CHECK(lgs_purify(img, mask, cfg).at(3, 3, 0) == Catch::Approx(mean));
}

TEST_CASE("suppression halves the gradient energy of a noise block") {
  const ImageBuffer img = flat_with_noise_block(64, 16, 16, 16, 62);
  LgsDefense lgs;
  Rng rng(1);
  const DefenseOutput out = lgs.apply(img, rng);
  const std::vector<double> before = detail::gradient_magnitude(img);
  const std::vector<double> after = detail::gradient_magnitude(out.purified);
  double b = 0.0, a = 0.0;
  for (int y = 16; y < 32; ++y) {
    for (int x = 16; x < 32; ++x) {
      b += before[static_cast<std::size_t>(y) * 64 + x];
      a += after[static_cast<std::size_t>(y) * 64 + x];
    }
  }
  CHECK(a < 0.5 * b);
}

TEST_CASE("entropy localization flags the same construction") {
  const ImageBuffer img = flat_with_noise_block(64, 24, 32, 16, 63);
  const BinaryMask mask = entropy_localize(img, EntropyConfig{});
  CHECK(block_coverage(mask, 24, 32, 16) >= 0.8);
  CHECK(outside_fraction(mask, 24, 32, 16) < 0.05);
}

TEST_CASE("clean toy scenes stay below both localization thresholds") {
  SceneConfig scfg;
  scfg.side = 64;
  const Corpus corpus = make_toy_corpus(4, 64, scfg);
  for (const CorpusItem& item : corpus) {
    CHECK(entropy_localize(item.image, EntropyConfig{}).area() == 0);
    // checker cell boundaries peak at a 0.125 tile gradient, well under the
    // default threshold
    CHECK(lgs_localize(item.image, LgsConfig{}).area() == 0);
  }
}

TEST_CASE("raising a threshold never grows the mask") {
  Rng rng(65);
  for (int trial = 0; trial < 20; ++trial) {
    const ImageBuffer img = testutil::random_image(48, 48, rng);
    LgsConfig lo, hi;
    lo.gradient_threshold = 0.05;
    hi.gradient_threshold = 0.25;
    CHECK(subset_of(lgs_localize(img, hi), lgs_localize(img, lo)));

    EntropyConfig elo, ehi;
    elo.entropy_threshold = 1.0;
    ehi.entropy_threshold = 2.2;
    CHECK(subset_of(entropy_localize(img, ehi), entropy_localize(img, elo)));
  }
}

TEST_CASE("erase fill policies") {
  ImageBuffer img(8, 8, 0.0, "halves");
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = x < 4 ? 0.2 : 0.6;
    }
  }
  BinaryMask mask(8, 8);
  mask.set(2, 1, true);
  mask.set(2, 6, true);

  const ImageBuffer black = erase(img, mask, FillPolicy::Black);
  CHECK(black.at(2, 1, 0) == 0.0);
  CHECK(black.at(2, 0, 0) == 0.2);

  const ImageBuffer mean = erase(img, mask, FillPolicy::Mean);
  CHECK(mean.at(2, 1, 0) == Catch::Approx(0.4));  // global mean of the halves
  CHECK(mean.at(2, 6, 0) == Catch::Approx(0.4));

  // border-mean resolves each component from its own surroundings
  const ImageBuffer border = erase(img, mask, FillPolicy::BorderMean);
  CHECK(border.at(2, 1, 0) == Catch::Approx(0.2));
  CHECK(border.at(2, 6, 0) == Catch::Approx(0.6));
}

TEST_CASE("border-mean falls back to the global mean when no ring exists") {
  ImageBuffer img(6, 6, 0.0, "full");
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = (y * 6 + x) % 2 == 0 ? 0.1 : 0.3;
    }
  }
  const BinaryMask all(6, 6, true);
  const ImageBuffer out = erase(img, all, FillPolicy::BorderMean);
  CHECK(out.at(0, 0, 0) == Catch::Approx(0.2));
  CHECK(out.at(5, 5, 0) == Catch::Approx(0.2));
}

TEST_CASE("defense names distinguish the erase variants") {
  CHECK(EntropyDefense{}.name() == "entropy");
  CHECK(EntropyDefense(EntropyConfig{}, FillPolicy::Black).name() == "entropy-erase-black");
  CHECK(EntropyDefense(EntropyConfig{}, FillPolicy::Mean).name() == "entropy-erase-mean");
  CHECK(LgsDefense{}.name() == "lgs");
  CHECK(IdentityDefense{}.name() == "identity");
}

TEST_CASE("mask dropout thins the base mask reproducibly") {
  const auto base = std::make_shared<LgsDefense>();
  const ImageBuffer img = flat_with_noise_block(64, 8, 8, 24, 66);

  Rng r0(7);
  const BinaryMask full = base->localize(img, r0);
  REQUIRE(full.area() > 100);

  MaskDropoutDefense half(base, 0.5);
  CHECK(half.name() == "lgs+dropout");
  CHECK(half.stochastic());
  Rng r1(7), r2(7), r3(8);
  const BinaryMask a = half.localize(img, r1);
  const BinaryMask b = half.localize(img, r2);
  const BinaryMask c = half.localize(img, r3);
  CHECK(a.bits == b.bits);  // same draw, same mask
  CHECK(a.bits != c.bits);
  CHECK(subset_of(a, full));
  const double keep = static_cast<double>(a.area()) / full.area();
  CHECK(keep > 0.35);
  CHECK(keep < 0.65);

  Rng r4(9), r5(9);
  CHECK(MaskDropoutDefense(base, 1.0).localize(img, r4).area() == 0);
  CHECK(MaskDropoutDefense(base, 0.0).localize(img, r5).bits == full.bits);
}

TEST_CASE("all built-in defenses satisfy the conformance contract") {
  Rng rng(67);
  std::vector<ImageBuffer> probes;
  probes.push_back(testutil::random_image(40, 40, rng, "p0"));
  probes.push_back(flat_with_noise_block(48, 8, 16, 16, 68));
  probes.push_back(ImageBuffer(33, 47, 0.5, "p2"));  // non-square, not tile-divisible

  const auto lgs = std::make_shared<LgsDefense>();
  CHECK(check_defense_conformance(IdentityDefense{}, probes).empty());
  CHECK(check_defense_conformance(*lgs, probes).empty());
  CHECK(check_defense_conformance(EntropyDefense{}, probes).empty());
  CHECK(check_defense_conformance(EntropyDefense(EntropyConfig{}, FillPolicy::Black), probes).empty());
  CHECK(check_defense_conformance(EntropyDefense(EntropyConfig{}, FillPolicy::Mean), probes).empty());
  CHECK(check_defense_conformance(MaskDropoutDefense(lgs, 0.3), probes).empty());
}

TEST_CASE("identity defense is a no-op") {
  IdentityDefense id;
  CHECK(id.differentiable());
  Rng rng(69);
  const ImageBuffer img = testutil::random_image(16, 16, rng);
  const DefenseOutput out = id.apply(img, rng);
  CHECK(out.mask.area() == 0);
  CHECK(out.purified.pixels == img.pixels);
}

TEST_CASE("purify rejects mismatched mask shapes") {
  const ImageBuffer img(16, 16, 0.5);
  CHECK_THROWS_AS(LgsDefense{}.purify(img, BinaryMask(8, 8)), InvalidInputError);
  CHECK_THROWS_AS(EntropyDefense{}.purify(img, BinaryMask(16, 8)), InvalidInputError);
}
