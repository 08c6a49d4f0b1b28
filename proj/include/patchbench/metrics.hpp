#pragma once

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "patchbench/core.hpp"
#include "patchbench/defense.hpp"
#include "patchbench/rng.hpp"

namespace patchbench {

struct EvalRecord {
  std::string image_id;
  std::string attack_name;
  std::string defense_name;
  std::string detector_name;
  DetectionSet detections;
  GroundTruthSet gt;
  std::optional<BinaryMask> pred_mask;  // present iff the defense localized
  std::optional<BinaryMask> gt_mask;
  double defense_ms = 0.0;
  bool failed = false;
  std::string error;
};

enum class ApInterpolation { AllPoint, ElevenPoint };

namespace detail {

struct PooledDetection {
  double score;
  bool tp;
  std::size_t record_index;  // pool ordering tie-break, deterministic
  std::size_t det_index;
};

/// Greedy per-image matching: detections in descending score, each claims the
/// unmatched GT of the same class with the highest IoU >= thr.
inline void match_record(const EvalRecord& r, double iou_thr, int cls,
                         std::size_t record_index, std::vector<PooledDetection>& pool,
                         long long& gt_count) {
  std::vector<const BoundingBox*> gts;
  for (const BoundingBox& g : r.gt.boxes) {
    if (g.class_id == cls) gts.push_back(&g);
  }
  gt_count += static_cast<long long>(gts.size());
  std::vector<bool> taken(gts.size(), false);

  std::vector<std::size_t> order(r.detections.boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return r.detections.boxes[a].score.value_or(-1.0) > r.detections.boxes[b].score.value_or(-1.0);
  });

  for (std::size_t oi : order) {
    const BoundingBox& d = r.detections.boxes[oi];
    if (d.class_id != cls) continue;
    double best_iou = 0.0;
    int best = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double iou = box_iou(d, *gts[g]);
      if (iou >= iou_thr && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) taken[static_cast<std::size_t>(best)] = true;
    pool.push_back({d.score.value_or(0.0), best >= 0, record_index, oi});
  }
}

}  // namespace detail

/// Average precision at the given IoU threshold for one class, pooled over all
/// records. All-point interpolation by default; the 11-point variant matches
/// older evaluation protocols.
inline double ap_at_iou(const std::vector<EvalRecord>& records, double iou_thr = 0.5,
                        int cls = kPersonClass,
                        ApInterpolation interp = ApInterpolation::AllPoint) {
  std::vector<detail::PooledDetection> pool;
  long long gt_count = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].failed) continue;
    detail::match_record(records[i], iou_thr, cls, i, pool, gt_count);
  }
  if (gt_count == 0) {
    throw UndefinedMetricError("ap_at_iou: no ground-truth instances of class " +
                               std::to_string(cls));
  }
  std::stable_sort(pool.begin(), pool.end(),
                   [](const detail::PooledDetection& a, const detail::PooledDetection& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.record_index != b.record_index) return a.record_index < b.record_index;
                     return a.det_index < b.det_index;
                   });

  std::vector<double> precision, recall;
  long long tp = 0, fp = 0;
  for (const auto& d : pool) {
    (d.tp ? tp : fp) += 1;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gt_count));
  }
  // Precision envelope: best precision achievable at recall >= r.
  std::vector<double> env = precision;
  for (std::size_t i = env.size(); i-- > 1;) env[i - 1] = std::max(env[i - 1], env[i]);

  if (interp == ApInterpolation::ElevenPoint) {
    double sum = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < recall.size(); ++i) {
        if (recall[i] >= r - 1e-12) {
          p = env[i];
          break;
        }
      }
      sum += p;
    }
    return sum / 11.0;
  }

  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * env[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

/// Fraction of ground-truth persons with no surviving detection (score >=
/// conf_thr matched at IoU >= 0.5).
inline double asr(const std::vector<EvalRecord>& records, double conf_thr = 0.5) {
  long long persons = 0, hidden = 0;
  for (const EvalRecord& r : records) {
    if (r.failed) continue;
    std::vector<const BoundingBox*> gts;
    for (const BoundingBox& g : r.gt.boxes) {
      if (g.class_id == kPersonClass) gts.push_back(&g);
    }
    persons += static_cast<long long>(gts.size());
    std::vector<bool> taken(gts.size(), false);
    for (const BoundingBox& d : r.detections.boxes) {  // already score-sorted
      if (d.class_id != kPersonClass || d.score.value_or(0.0) < conf_thr) continue;
      double best_iou = 0.0;
      int best = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (taken[g]) continue;
        const double iou = box_iou(d, *gts[g]);
        if (iou >= 0.5 && iou > best_iou) {
          best_iou = iou;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) taken[static_cast<std::size_t>(best)] = true;
    }
    for (bool t : taken) {
      if (!t) ++hidden;
    }
  }
  if (persons == 0) throw UndefinedMetricError("asr: no ground-truth persons");
  return static_cast<double>(hidden) / static_cast<double>(persons);
}

/// Summed mask IoU: one ratio over pooled pixel tallies, dominated by large
/// regions.
inline double smiou(const std::vector<PixelConfusion>& confusions) {
  if (confusions.empty()) throw UndefinedMetricError("smiou: empty input");
  long long tp = 0, denom = 0;
  for (const PixelConfusion& c : confusions) {
    tp += c.tp;
    denom += c.fp + c.tp + c.fn;
  }
  if (denom == 0) throw UndefinedMetricError("smiou: all confusions empty");
  return static_cast<double>(tp) / static_cast<double>(denom);
}

/// Per-image mask IoU averaged over images; an image where both masks are
/// empty counts as a perfect 1.
inline double nmiou(const std::vector<PixelConfusion>& confusions) {
  if (confusions.empty()) throw UndefinedMetricError("nmiou: empty input");
  double sum = 0.0;
  for (const PixelConfusion& c : confusions) {
    const long long denom = c.fp + c.tp + c.fn;
    sum += denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
  }
  return sum / static_cast<double>(confusions.size());
}

/// Mean wall-clock milliseconds per image, serial, first warmup_skip images
/// excluded from the mean.
template <typename Fn>
double time_cost_ms(Fn&& fn, const std::vector<ImageBuffer>& corpus, int warmup_skip = 3) {
  if (static_cast<int>(corpus.size()) <= warmup_skip) {
    throw InvalidInputError("time_cost: need more images than warm-up runs");
  }
  using clock = std::chrono::steady_clock;
  double total_ms = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto t0 = clock::now();
    fn(corpus[i]);
    const auto t1 = clock::now();
    if (static_cast<int>(i) >= warmup_skip) {
      total_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
  }
  return total_ms / static_cast<double>(corpus.size() - static_cast<std::size_t>(warmup_skip));
}

inline double time_cost(const Defense& defense, const std::vector<ImageBuffer>& corpus,
                        int warmup_skip = 3) {
  Rng rng(0);
  return time_cost_ms([&](const ImageBuffer& x) { (void)defense.apply(x, rng); }, corpus,
                      warmup_skip);
}

// ---------------------------------------------------------------------------
// Aggregate report

struct MetricCell {
  std::optional<double> ap50;
  std::optional<double> asr;
  std::optional<double> smiou;
  std::optional<double> nmiou;
  std::optional<double> mean_defense_ms;
  long long records = 0;
  long long failed = 0;
};

struct MetricReport {
  MetricCell overall;
  std::map<std::string, MetricCell> by_detector;
  std::map<std::string, MetricCell> by_attack;
};

namespace detail {

inline MetricCell compute_cell(const std::vector<EvalRecord>& records) {
  MetricCell cell;
  cell.records = static_cast<long long>(records.size());
  std::vector<PixelConfusion> confusions;
  double ms = 0.0;
  long long ms_n = 0;
  for (const EvalRecord& r : records) {
    if (r.failed) {
      ++cell.failed;
      continue;
    }
    if (r.pred_mask && r.gt_mask) confusions.push_back(pixel_confusion(*r.pred_mask, *r.gt_mask));
    ms += r.defense_ms;
    ++ms_n;
  }
  try {
    cell.ap50 = ap_at_iou(records);
  } catch (const UndefinedMetricError&) {
  }
  try {
    cell.asr = asr(records);
  } catch (const UndefinedMetricError&) {
  }
  if (!confusions.empty()) {
    try {
      cell.smiou = smiou(confusions);
    } catch (const UndefinedMetricError&) {
    }
    cell.nmiou = nmiou(confusions);
  }
  if (ms_n > 0) cell.mean_defense_ms = ms / static_cast<double>(ms_n);
  return cell;
}

}  // namespace detail

inline MetricReport compute_metrics(const std::vector<EvalRecord>& records) {
  MetricReport report;
  report.overall = detail::compute_cell(records);
  std::map<std::string, std::vector<EvalRecord>> by_det, by_att;
  for (const EvalRecord& r : records) {
    by_det[r.detector_name].push_back(r);
    by_att[r.attack_name].push_back(r);
  }
  for (auto& [k, v] : by_det) report.by_detector[k] = detail::compute_cell(v);
  for (auto& [k, v] : by_att) report.by_attack[k] = detail::compute_cell(v);
  return report;
}

// ---------------------------------------------------------------------------
// Record files: one JSON object per line, masks run-length encoded

inline nlohmann::json mask_to_json(const BinaryMask& m) {
  nlohmann::json runs = nlohmann::json::array();
  long long run = 0;
  bool value = false;  // runs alternate starting from 0
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (m.get(y, x) == value) {
        ++run;
      } else {
        runs.push_back(run);
        value = !value;
        run = 1;
      }
    }
  }
  runs.push_back(run);
  return {{"h", m.height}, {"w", m.width}, {"rle", runs}};
}

inline BinaryMask mask_from_json(const nlohmann::json& j) {
  BinaryMask m(j.at("h").get<int>(), j.at("w").get<int>());
  long long pos = 0;
  bool value = false;
  const long long total = static_cast<long long>(m.height) * m.width;
  for (const auto& r : j.at("rle")) {
    const long long run = r.get<long long>();
    if (run < 0 || pos + run > total) throw InvalidInputError("mask_from_json: bad run length");
    if (value) {
      for (long long k = pos; k < pos + run; ++k) {
        m.set(static_cast<int>(k / m.width), static_cast<int>(k % m.width), true);
      }
    }
    pos += run;
    value = !value;
  }
  if (pos != total) throw InvalidInputError("mask_from_json: runs do not cover mask");
  return m;
}

inline nlohmann::json box_to_json(const BoundingBox& b) {
  nlohmann::json j = {{"class_id", b.class_id},
                      {"box", {b.x_min, b.y_min, b.x_max, b.y_max}}};
  if (b.score) j["score"] = *b.score;
  return j;
}

inline BoundingBox box_from_json(const nlohmann::json& j) {
  BoundingBox b;
  b.class_id = j.at("class_id").get<int>();
  const auto& arr = j.at("box");
  b.x_min = arr.at(0).get<double>();
  b.y_min = arr.at(1).get<double>();
  b.x_max = arr.at(2).get<double>();
  b.y_max = arr.at(3).get<double>();
  if (j.contains("score")) b.score = j["score"].get<double>();
  return b;
}

inline nlohmann::json record_to_json(const EvalRecord& r) {
  nlohmann::json j;
  j["image_id"] = r.image_id;
  j["attack"] = r.attack_name;
  j["defense"] = r.defense_name;
  j["detector"] = r.detector_name;
  j["defense_ms"] = r.defense_ms;
  j["failed"] = r.failed;
  if (!r.error.empty()) j["error"] = r.error;
  j["detections"] = nlohmann::json::array();
  for (const BoundingBox& b : r.detections.boxes) j["detections"].push_back(box_to_json(b));
  j["gt"] = nlohmann::json::array();
  for (const BoundingBox& b : r.gt.boxes) j["gt"].push_back(box_to_json(b));
  j["pred_mask"] = r.pred_mask ? mask_to_json(*r.pred_mask) : nlohmann::json();
  j["gt_mask"] = r.gt_mask ? mask_to_json(*r.gt_mask) : nlohmann::json();
  return j;
}

inline EvalRecord record_from_json(const nlohmann::json& j) {
  EvalRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.attack_name = j.at("attack").get<std::string>();
  r.defense_name = j.at("defense").get<std::string>();
  r.detector_name = j.at("detector").get<std::string>();
  r.defense_ms = j.at("defense_ms").get<double>();
  r.failed = j.value("failed", false);
  r.error = j.value("error", std::string());
  r.detections.image_id = r.image_id;
  for (const auto& b : j.at("detections")) r.detections.boxes.push_back(box_from_json(b));
  r.gt.image_id = r.image_id;
  for (const auto& b : j.at("gt")) r.gt.boxes.push_back(box_from_json(b));
  if (!j.at("pred_mask").is_null()) r.pred_mask = mask_from_json(j["pred_mask"]);
  if (!j.at("gt_mask").is_null()) r.gt_mask = mask_from_json(j["gt_mask"]);
  return r;
}

inline void write_records_jsonl(const std::string& path, const std::vector<EvalRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const EvalRecord& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<EvalRecord> read_records_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<EvalRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return records;
}

}  // namespace patchbench
