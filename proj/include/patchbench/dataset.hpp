#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "patchbench/applier.hpp"
#include "patchbench/core.hpp"
#include "patchbench/parallel.hpp"
#include "patchbench/patch_io.hpp"
#include "patchbench/png_io.hpp"
#include "patchbench/rng.hpp"

namespace patchbench {

struct CanvasPolicy {
  enum class Mode { Pad, Resize };
  int side = 416;
  Mode mode = Mode::Pad;
  double pad_value = 0.5;

  void validate() const {
    if (side < 2) throw InvalidConfigError("CanvasPolicy: side must be >= 2");
    if (pad_value < 0.0 || pad_value > 1.0) throw InvalidConfigError("CanvasPolicy: pad_value in [0,1]");
  }
};

struct CanvasResult {
  ImageBuffer image;
  GroundTruthSet gt;
  double scale_x = 1.0;
  double scale_y = 1.0;
  int offset_x = 0;
  int offset_y = 0;
};

namespace detail {

inline double bilinear_at(const ImageBuffer& src, double y, double x, int c) {
  const double fy = std::clamp(y, 0.0, static_cast<double>(src.height - 1));
  const double fx = std::clamp(x, 0.0, static_cast<double>(src.width - 1));
  const int y0 = static_cast<int>(fy);
  const int x0 = static_cast<int>(fx);
  const int y1 = std::min(y0 + 1, src.height - 1);
  const int x1 = std::min(x0 + 1, src.width - 1);
  const double wy = fy - y0, wx = fx - x0;
  return (1 - wy) * ((1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c)) +
         wy * ((1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c));
}

}  // namespace detail

/// Normalizes to side×side. Pad mode letterboxes (aspect preserved, centered
/// on pad_value); Resize stretches both axes. Boxes follow the same mapping.
inline CanvasResult canvas_normalize(const ImageBuffer& src, const GroundTruthSet& gt,
                                     const CanvasPolicy& policy) {
  policy.validate();
  CanvasResult out;
  if (policy.mode == CanvasPolicy::Mode::Pad) {
    const double s = static_cast<double>(policy.side) / std::max(src.height, src.width);
    const int sh = std::max(1, static_cast<int>(std::lround(src.height * s)));
    const int sw = std::max(1, static_cast<int>(std::lround(src.width * s)));
    out.scale_x = static_cast<double>(sw) / src.width;
    out.scale_y = static_cast<double>(sh) / src.height;
    out.offset_x = (policy.side - sw) / 2;
    out.offset_y = (policy.side - sh) / 2;
    out.image = ImageBuffer(policy.side, policy.side, policy.pad_value, src.id);
    for (int y = 0; y < sh; ++y) {
      for (int x = 0; x < sw; ++x) {
        const double sy = (y + 0.5) / out.scale_y - 0.5;
        const double sx = (x + 0.5) / out.scale_x - 0.5;
        for (int c = 0; c < 3; ++c) {
          out.image.at(y + out.offset_y, x + out.offset_x, c) = detail::bilinear_at(src, sy, sx, c);
        }
      }
    }
  } else {
    out.scale_x = static_cast<double>(policy.side) / src.width;
    out.scale_y = static_cast<double>(policy.side) / src.height;
    out.image = ImageBuffer(policy.side, policy.side, 0.0, src.id);
    for (int y = 0; y < policy.side; ++y) {
      for (int x = 0; x < policy.side; ++x) {
        const double sy = (y + 0.5) / out.scale_y - 0.5;
        const double sx = (x + 0.5) / out.scale_x - 0.5;
        for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = detail::bilinear_at(src, sy, sx, c);
      }
    }
  }
  out.gt.image_id = gt.image_id;
  for (BoundingBox b : gt.boxes) {
    b.x_min = b.x_min * out.scale_x + out.offset_x;
    b.x_max = b.x_max * out.scale_x + out.offset_x;
    b.y_min = b.y_min * out.scale_y + out.offset_y;
    b.y_max = b.y_max * out.scale_y + out.offset_y;
    out.gt.boxes.push_back(b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct DatasetEntry {
  std::string image_id;      // "<patch_id>_<source_id>"
  std::string source_image;
  std::string patch_id;
  std::uint64_t entry_seed = 0;
  std::vector<StampRecord> stamps;
  std::string image_file;
  std::string mask_file;
  long long mask_area = 0;
  std::string split;  // empty until split_dataset labels it
};

struct DatasetManifest {
  int canvas_side = 416;
  std::string canvas_mode = "pad";
  double pad_value = 0.5;
  std::uint64_t seed = 0;
  int patch_count = 0;
  int image_count = 0;
  std::vector<DatasetEntry> entries;
  std::vector<std::string> skipped;   // "<patch>/<image>: reason"
  std::vector<std::string> warnings;
};

inline nlohmann::ordered_json transform_to_json(const ConcreteTransform& t) {
  return {{"rotation_deg", t.rotation_deg},
          {"scale_ratio", t.scale_ratio},
          {"jitter_x", t.jitter_x},
          {"jitter_y", t.jitter_y},
          {"brightness", t.brightness}};
}

inline ConcreteTransform transform_from_json(const nlohmann::json& j) {
  ConcreteTransform t;
  t.rotation_deg = j.at("rotation_deg").get<double>();
  t.scale_ratio = j.at("scale_ratio").get<double>();
  t.jitter_x = j.at("jitter_x").get<double>();
  t.jitter_y = j.at("jitter_y").get<double>();
  t.brightness = j.at("brightness").get<double>();
  return t;
}

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["canvas"] = {{"side", m.canvas_side}, {"mode", m.canvas_mode}, {"pad_value", m.pad_value}};
  j["seed"] = m.seed;
  j["counts"] = {{"patches", m.patch_count},
                 {"images", m.image_count},
                 {"entries", m.entries.size()}};
  j["entries"] = nlohmann::ordered_json::array();
  for (const DatasetEntry& e : m.entries) {
    nlohmann::ordered_json je;
    je["image_id"] = e.image_id;
    je["source_image"] = e.source_image;
    je["patch_id"] = e.patch_id;
    je["entry_seed"] = e.entry_seed;
    je["stamps"] = nlohmann::ordered_json::array();
    for (const StampRecord& s : e.stamps) {
      je["stamps"].push_back(
          {{"box_index", s.box_index}, {"transform", transform_to_json(s.transform)}});
    }
    je["image_file"] = e.image_file;
    je["mask_file"] = e.mask_file;
    je["mask_area"] = e.mask_area;
    je["split"] = e.split;
    j["entries"].push_back(std::move(je));
  }
  j["skipped"] = m.skipped;
  j["warnings"] = m.warnings;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.canvas_side = j.at("canvas").at("side").get<int>();
  m.canvas_mode = j.at("canvas").at("mode").get<std::string>();
  m.pad_value = j.at("canvas").at("pad_value").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.patch_count = j.at("counts").at("patches").get<int>();
  m.image_count = j.at("counts").at("images").get<int>();
  for (const auto& je : j.at("entries")) {
    DatasetEntry e;
    e.image_id = je.at("image_id").get<std::string>();
    e.source_image = je.at("source_image").get<std::string>();
    e.patch_id = je.at("patch_id").get<std::string>();
    e.entry_seed = je.at("entry_seed").get<std::uint64_t>();
    for (const auto& js : je.at("stamps")) {
      StampRecord s;
      s.box_index = js.at("box_index").get<int>();
      s.transform = transform_from_json(js.at("transform"));
      e.stamps.push_back(s);
    }
    e.image_file = je.at("image_file").get<std::string>();
    e.mask_file = je.at("mask_file").get<std::string>();
    e.mask_area = je.at("mask_area").get<long long>();
    e.split = je.at("split").get<std::string>();
    m.entries.push_back(std::move(e));
  }
  for (const auto& s : j.at("skipped")) m.skipped.push_back(s.get<std::string>());
  for (const auto& s : j.at("warnings")) m.warnings.push_back(s.get<std::string>());
  return m;
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << manifest_to_json(m).dump(2) << '\n';
  if (!out) throw IoError("manifest write failed: " + path);
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest: " + path);
  return manifest_from_json(nlohmann::json::parse(in));
}

// ---------------------------------------------------------------------------
// Builder

struct NamedPatch {
  std::string id;
  Patch patch;
};

struct BuildConfig {
  CanvasPolicy canvas;
  TransformSpec transform;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// Re-applies an entry's recorded stamps to the canvas-normalized source.
/// Useful for verifying stored masks and for defense retraining pipelines.
inline ApplyResult replay_entry(const DatasetEntry& entry, const Patch& patch,
                                const CanvasResult& canvas) {
  ApplyResult acc;
  acc.image = canvas.image;
  acc.mask = BinaryMask(canvas.image.height, canvas.image.width, false, entry.image_id);
  for (const StampRecord& s : entry.stamps) {
    if (s.box_index < 0 || s.box_index >= static_cast<int>(canvas.gt.boxes.size())) {
      throw InvalidInputError("replay_entry: stamp references missing box");
    }
    const ApplyResult one = apply_patch(acc.image, patch, s.transform,
                                        Placement::center_of(canvas.gt.boxes[static_cast<std::size_t>(s.box_index)]));
    acc.image = one.image;
    for (std::size_t k = 0; k < acc.mask.bits.size(); ++k) {
      acc.mask.bits[k] = acc.mask.bits[k] | one.mask.bits[k];
    }
  }
  return acc;
}

/// Stamps every patch over every clean image (patch-major order), writing
/// PNG images, 1-bit masks, the patches themselves, and a manifest that
/// records enough to rebuild each entry bit for bit.
inline DatasetManifest build_dataset(const std::vector<NamedPatch>& patches, const Corpus& corpus,
                                     const BuildConfig& cfg, const std::string& out_root) {
  namespace fs = std::filesystem;
  cfg.canvas.validate();
  cfg.transform.validate();
  if (patches.empty() || corpus.empty()) {
    throw InvalidInputError("build_dataset: patches and corpus must be nonempty");
  }
  std::error_code ec;
  fs::create_directories(fs::path(out_root) / "images", ec);
  fs::create_directories(fs::path(out_root) / "masks", ec);
  fs::create_directories(fs::path(out_root) / "patches", ec);
  if (!fs::is_directory(fs::path(out_root) / "images")) {
    throw IoError("build_dataset: cannot create output root at " + out_root);
  }

  std::vector<CanvasResult> normalized(corpus.size());
  parallel_for(corpus.size(), cfg.workers, [&](std::size_t i) {
    normalized[i] = canvas_normalize(corpus[i].image, corpus[i].gt, cfg.canvas);
  });

  DatasetManifest manifest;
  manifest.canvas_side = cfg.canvas.side;
  manifest.canvas_mode = cfg.canvas.mode == CanvasPolicy::Mode::Pad ? "pad" : "resize";
  manifest.pad_value = cfg.canvas.pad_value;
  manifest.seed = cfg.seed;
  manifest.patch_count = static_cast<int>(patches.size());
  manifest.image_count = static_cast<int>(corpus.size());

  for (const NamedPatch& np : patches) {
    save_patch((fs::path(out_root) / "patches" / np.id).string(), np.patch);
  }

  struct Slot {
    bool present = false;
    DatasetEntry entry;
    std::string skip_note;
  };
  std::vector<Slot> slots(patches.size() * corpus.size());
  parallel_for(slots.size(), cfg.workers, [&](std::size_t k) {
    const std::size_t pi = k / corpus.size();
    const std::size_t ii = k % corpus.size();
    const NamedPatch& np = patches[pi];
    const CanvasResult& canvas = normalized[ii];
    const std::string source_id = canvas.image.id.empty() ? ("img" + std::to_string(ii)) : canvas.image.id;
    Slot& slot = slots[k];

    bool has_person = false;
    for (const BoundingBox& b : canvas.gt.boxes) has_person |= b.class_id == kPersonClass;
    if (!has_person) {
      slot.skip_note = np.id + "/" + source_id + ": no person ground truth";
      return;
    }

    DatasetEntry e;
    e.patch_id = np.id;
    e.source_image = source_id;
    e.image_id = np.id + "_" + source_id;
    e.entry_seed = derive_seed(cfg.seed, np.id + "/" + source_id, 0);
    Rng rng(e.entry_seed);
    const ApplyResult ar = apply_to_persons(canvas.image, np.patch, cfg.transform, canvas.gt, rng);
    e.stamps = ar.stamps;
    e.mask_area = ar.mask.area();
    e.image_file = "images/" + e.image_id + ".png";
    e.mask_file = "masks/" + e.image_id + ".png";
    write_png8((fs::path(out_root) / e.image_file).string(), ar.image);
    write_mask_png((fs::path(out_root) / e.mask_file).string(), ar.mask);
    slot.present = true;
    slot.entry = std::move(e);
  });

  for (Slot& s : slots) {
    if (s.present) {
      manifest.entries.push_back(std::move(s.entry));
    } else {
      manifest.skipped.push_back(std::move(s.skip_note));
    }
  }
  save_manifest((fs::path(out_root) / "manifest.json").string(), manifest);
  return manifest;
}

/// Labels entries train/test at 6:4 per patch (train count = floor(0.6n + 0.5)
/// within each patch group), deterministically shuffled. Falls back to one
/// global split when a patch has too few entries to stratify.
inline void split_dataset(DatasetManifest& manifest, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> groups;
  std::vector<std::string> group_order;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    auto [it, inserted] = groups.try_emplace(manifest.entries[i].patch_id);
    if (inserted) group_order.push_back(manifest.entries[i].patch_id);
    it->second.push_back(i);
  }

  bool stratified = true;
  for (const auto& [id, idx] : groups) {
    if (idx.size() < 2) {
      manifest.warnings.push_back("split: patch '" + id +
                                  "' has fewer than 2 entries; falling back to a global split");
      stratified = false;
    }
  }

  auto label = [&](std::vector<std::size_t> idx, const std::string& stream) {
    Rng rng(derive_seed(seed, stream, 0));
    for (std::size_t i = idx.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(idx[i - 1], idx[j]);
    }
    const std::size_t n_train =
        static_cast<std::size_t>(std::floor(0.6 * static_cast<double>(idx.size()) + 0.5));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      manifest.entries[idx[k]].split = k < n_train ? "train" : "test";
    }
  };

  if (stratified) {
    for (const std::string& id : group_order) label(groups[id], "split:" + id);
  } else {
    std::vector<std::size_t> all(manifest.entries.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    label(std::move(all), "split:global");
  }
}

// ---------------------------------------------------------------------------
// Clean-corpus exchange: images/<id>.png plus corpus.json with ground truth

inline void save_corpus(const std::string& dir, const Corpus& corpus) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (!fs::is_directory(fs::path(dir) / "images")) {
    throw IoError("save_corpus: cannot create " + dir);
  }
  nlohmann::ordered_json j;
  j["images"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const CorpusItem& item = corpus[i];
    const std::string id = item.image.id.empty() ? ("img" + std::to_string(i)) : item.image.id;
    const std::string file = "images/" + id + ".png";
    write_png8((fs::path(dir) / file).string(), item.image);
    nlohmann::ordered_json ji;
    ji["id"] = id;
    ji["file"] = file;
    ji["boxes"] = nlohmann::ordered_json::array();
    for (const BoundingBox& b : item.gt.boxes) {
      ji["boxes"].push_back({{"class_id", b.class_id},
                             {"x_min", b.x_min},
                             {"y_min", b.y_min},
                             {"x_max", b.x_max},
                             {"y_max", b.y_max}});
    }
    j["images"].push_back(std::move(ji));
  }
  std::ofstream out((fs::path(dir) / "corpus.json").string(), std::ios::binary);
  if (!out) throw IoError("save_corpus: cannot write corpus.json");
  out << j.dump(2) << '\n';
}

inline Corpus load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in((fs::path(dir) / "corpus.json").string(), std::ios::binary);
  if (!in) throw IoError("load_corpus: missing corpus.json under " + dir);
  const nlohmann::json j = nlohmann::json::parse(in);
  Corpus corpus;
  for (const auto& ji : j.at("images")) {
    CorpusItem item;
    item.image = read_png((fs::path(dir) / ji.at("file").get<std::string>()).string());
    item.image.id = ji.at("id").get<std::string>();
    item.gt.image_id = item.image.id;
    for (const auto& jb : ji.at("boxes")) {
      BoundingBox b;
      b.class_id = jb.at("class_id").get<int>();
      b.x_min = jb.at("x_min").get<double>();
      b.y_min = jb.at("y_min").get<double>();
      b.x_max = jb.at("x_max").get<double>();
      b.y_max = jb.at("y_max").get<double>();
      item.gt.boxes.push_back(b);
    }
    corpus.push_back(std::move(item));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Physical-capture ingestion

/// One captured frame from a physical test: scene coordinates plus what the
/// detector reported after the named defense.
struct PhysicalFrame {
  std::string frame_id;
  int distance_m = 3;       // one of 3, 6, 9
  double angle_deg = 0.0;   // in [-90, 90)
  int light_level = 3;      // 1..5
  std::string defense_name;
  std::string detector_name;
  DetectionSet detections;

  void validate() const {
    if (distance_m != 3 && distance_m != 6 && distance_m != 9) {
      throw InvalidInputError("PhysicalFrame: distance_m must be 3, 6, or 9");
    }
    if (angle_deg < -90.0 || angle_deg >= 90.0) {
      throw InvalidInputError("PhysicalFrame: angle_deg in [-90, 90)");
    }
    if (light_level < 1 || light_level > 5) {
      throw InvalidInputError("PhysicalFrame: light_level in 1..5");
    }
  }
};

/// CSV schema: frame_id,distance_m,angle_deg,light_level,defense_name,
/// detector_name,detections. Detections are ';'-separated tuples of
/// "class score x0 y0 x1 y1".
inline std::string detections_to_field(const DetectionSet& d) {
  std::ostringstream out;
  for (std::size_t i = 0; i < d.boxes.size(); ++i) {
    const BoundingBox& b = d.boxes[i];
    if (i) out << ';';
    out << b.class_id << ' ' << b.score.value_or(0.0) << ' ' << b.x_min << ' ' << b.y_min << ' '
        << b.x_max << ' ' << b.y_max;
  }
  return out.str();
}

inline DetectionSet detections_from_field(const std::string& field, const std::string& frame_id) {
  DetectionSet d;
  d.image_id = frame_id;
  std::istringstream in(field);
  std::string tuple;
  while (std::getline(in, tuple, ';')) {
    if (tuple.empty()) continue;
    std::istringstream ts(tuple);
    BoundingBox b;
    double score;
    if (!(ts >> b.class_id >> score >> b.x_min >> b.y_min >> b.x_max >> b.y_max)) {
      throw InvalidInputError("physical csv: malformed detection tuple: " + tuple);
    }
    b.score = score;
    d.boxes.push_back(b);
  }
  d.normalize();
  return d;
}

inline void write_physical_csv(const std::string& path, const std::vector<PhysicalFrame>& frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << "frame_id,distance_m,angle_deg,light_level,defense_name,detector_name,detections\n";
  for (const PhysicalFrame& f : frames) {
    f.validate();
    out << f.frame_id << ',' << f.distance_m << ',' << f.angle_deg << ',' << f.light_level << ','
        << f.defense_name << ',' << f.detector_name << ',' << detections_to_field(f.detections)
        << '\n';
  }
}

inline std::vector<PhysicalFrame> read_physical_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read: " + path);
  std::vector<PhysicalFrame> frames;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (cols.size() < 6) throw InvalidInputError("physical csv: short row: " + line);
    PhysicalFrame f;
    f.frame_id = cols[0];
    f.distance_m = std::stoi(cols[1]);
    f.angle_deg = std::stod(cols[2]);
    f.light_level = std::stoi(cols[3]);
    f.defense_name = cols[4];
    f.detector_name = cols[5];
    f.detections = detections_from_field(cols.size() > 6 ? cols[6] : "", f.frame_id);
    f.validate();
    frames.push_back(std::move(f));
  }
  return frames;
}

enum class PhysicalGroupBy { Distance, Angle, Light };

struct PhysicalCell {
  long long frames = 0;
  long long detected = 0;
  double rate() const { return frames > 0 ? static_cast<double>(detected) / frames : 0.0; }
};

/// Fraction of frames with a surviving person detection (score >= 0.5),
/// grouped by defense, detector, and the chosen scene coordinate. Angle uses
/// 45-degree buckets.
inline std::map<std::string, PhysicalCell> summarize_physical(
    const std::vector<PhysicalFrame>& frames, PhysicalGroupBy group) {
  std::map<std::string, PhysicalCell> cells;
  for (const PhysicalFrame& f : frames) {
    std::string bucket;
    switch (group) {
      case PhysicalGroupBy::Distance: bucket = std::to_string(f.distance_m) + "m"; break;
      case PhysicalGroupBy::Light: bucket = "L" + std::to_string(f.light_level); break;
      case PhysicalGroupBy::Angle: {
        const int lo = static_cast<int>(std::floor(f.angle_deg / 45.0)) * 45;
        bucket = "[" + std::to_string(lo) + "," + std::to_string(lo + 45) + ")";
        break;
      }
    }
    PhysicalCell& cell = cells[f.defense_name + "/" + f.detector_name + "/" + bucket];
    ++cell.frames;
    bool detected = false;
    for (const BoundingBox& b : f.detections.boxes) {
      detected |= b.class_id == kPersonClass && b.score.value_or(0.0) >= 0.5;
    }
    cell.detected += detected ? 1 : 0;
  }
  return cells;
}

}  // namespace patchbench
