#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "patchbench/applier.hpp"
#include "patchbench/core.hpp"
#include "patchbench/png_io.hpp"

namespace patchbench {

/// A patch on disk is three files sharing a stem: <stem>.png (16-bit pixels),
/// <stem>_shape.png (1-bit shape mask), <stem>.json (metadata). 16-bit depth
/// keeps save/load quantization below 1e-5 per channel.
inline void save_patch(const std::string& stem, const Patch& p) {
  p.validate();
  ImageBuffer img(p.height, p.width, 0.0, std::filesystem::path(stem).filename().string());
  img.pixels = p.pixels;
  write_png16(stem + ".png", img);

  BinaryMask shape(p.height, p.width);
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) shape.set(y, x, p.in_shape(y, x));
  }
  write_mask_png(stem + "_shape.png", shape);

  nlohmann::ordered_json meta;
  meta["height"] = p.height;
  meta["width"] = p.width;
  meta["attack_name"] = p.meta.attack_name;
  meta["victim_detector"] = p.meta.victim_detector;
  meta["goal"] = to_string(p.meta.goal);
  std::ofstream out(stem + ".json", std::ios::binary);
  if (!out) throw IoError("cannot write patch metadata: " + stem + ".json");
  out << meta.dump(2) << '\n';
}

inline Patch load_patch(const std::string& stem) {
  const ImageBuffer img = read_png(stem + ".png");
  Patch p(img.height, img.width);
  p.pixels = img.pixels;

  const BinaryMask shape = read_mask_png(stem + "_shape.png");
  if (shape.height != p.height || shape.width != p.width) {
    throw InvalidInputError("load_patch: shape mask size mismatch at " + stem);
  }
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      p.shape_mask[static_cast<std::size_t>(y) * p.width + x] = shape.get(y, x) ? 1 : 0;
    }
  }

  std::ifstream in(stem + ".json", std::ios::binary);
  if (!in) throw IoError("cannot read patch metadata: " + stem + ".json");
  nlohmann::json meta = nlohmann::json::parse(in);
  p.meta.attack_name = meta.value("attack_name", std::string());
  p.meta.victim_detector = meta.value("victim_detector", std::string());
  p.meta.goal = goal_from_string(meta.value("goal", std::string("hiding")));
  p.validate();
  return p;
}

}  // namespace patchbench
