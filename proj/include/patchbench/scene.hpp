#pragma once

#include <string>
#include <utility>
#include <vector>

#include "patchbench/core.hpp"
#include "patchbench/detector.hpp"
#include "patchbench/rng.hpp"

namespace patchbench {

/// Synthetic desk-scale scenes: a blocky low-contrast background with template
/// instances pasted in as "persons". Paste positions snap to `stride` so the
/// sliding-window detector sees an exact-copy window for every instance.
struct SceneConfig {
  int side = 128;
  int persons = 1;
  int stride = 8;
  int background_block = 16;
  double background_lo = 0.35;
  double background_hi = 0.65;

  void validate() const {
    if (side < 8) throw InvalidConfigError("SceneConfig: side too small");
    if (persons < 0) throw InvalidConfigError("SceneConfig: persons must be >= 0");
    if (stride < 1 || background_block < 1) throw InvalidConfigError("SceneConfig: bad stride/block");
  }
};

inline CorpusItem make_toy_scene(const ImageBuffer& templ, const SceneConfig& cfg, Rng& rng,
                                 std::string id) {
  cfg.validate();
  if (templ.height > cfg.side || templ.width > cfg.side) {
    throw InvalidConfigError("make_toy_scene: template larger than scene");
  }
  CorpusItem item;
  item.image = ImageBuffer(cfg.side, cfg.side, 0.5, id);
  for (int y0 = 0; y0 < cfg.side; y0 += cfg.background_block) {
    for (int x0 = 0; x0 < cfg.side; x0 += cfg.background_block) {
      double v[3];
      for (double& c : v) c = rng.uniform(cfg.background_lo, cfg.background_hi);
      for (int y = y0; y < std::min(cfg.side, y0 + cfg.background_block); ++y) {
        for (int x = x0; x < std::min(cfg.side, x0 + cfg.background_block); ++x) {
          for (int c = 0; c < 3; ++c) item.image.at(y, x, c) = v[c];
        }
      }
    }
  }

  const int slots_y = (cfg.side - templ.height) / cfg.stride + 1;
  const int slots_x = (cfg.side - templ.width) / cfg.stride + 1;
  item.gt.image_id = item.image.id;
  for (int p = 0; p < cfg.persons; ++p) {
    BoundingBox box;
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      const int y = rng.uniform_int(0, slots_y - 1) * cfg.stride;
      const int x = rng.uniform_int(0, slots_x - 1) * cfg.stride;
      box = BoundingBox{static_cast<double>(x), static_cast<double>(y),
                        static_cast<double>(x + templ.width), static_cast<double>(y + templ.height),
                        kPersonClass, std::nullopt};
      placed = true;
      for (const BoundingBox& prev : item.gt.boxes) {
        if (box_iou(box, prev) > 0.0) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) throw PlacementError("make_toy_scene: no room for person " + std::to_string(p));
    const int oy = static_cast<int>(box.y_min);
    const int ox = static_cast<int>(box.x_min);
    for (int y = 0; y < templ.height; ++y) {
      for (int x = 0; x < templ.width; ++x) {
        for (int c = 0; c < 3; ++c) item.image.at(oy + y, ox + x, c) = templ.at(y, x, c);
      }
    }
    item.gt.boxes.push_back(box);
  }
  return item;
}

inline Corpus make_toy_corpus(int n, std::uint64_t seed, SceneConfig cfg = {},
                              const ImageBuffer& templ = make_checker_template()) {
  if (n < 1) throw InvalidInputError("make_toy_corpus: n must be >= 1");
  Corpus corpus;
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "scene", static_cast<std::uint64_t>(i)));
    corpus.push_back(make_toy_scene(templ, cfg, rng, "scene-" + std::to_string(i)));
  }
  return corpus;
}

}  // namespace patchbench
