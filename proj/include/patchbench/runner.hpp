#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "patchbench/adaptive.hpp"
#include "patchbench/attack.hpp"
#include "patchbench/core.hpp"
#include "patchbench/dataset.hpp"
#include "patchbench/defense.hpp"
#include "patchbench/defense_adapter.hpp"
#include "patchbench/detector.hpp"
#include "patchbench/metrics.hpp"
#include "patchbench/parallel.hpp"
#include "patchbench/patch_io.hpp"
#include "patchbench/plot.hpp"
#include "patchbench/rng.hpp"

namespace patchbench {

inline constexpr const char* kToolkitVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Component factories (shared by the CLI and config-driven runs)

namespace detail {

inline std::vector<std::string> split_string(const std::string& s, char delim, int max_parts = -1) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    if (max_parts > 0 && static_cast<int>(parts.size()) == max_parts - 1) {
      parts.push_back(s.substr(start));
      return parts;
    }
    const std::size_t pos = s.find(delim, start);
    if (pos == std::string::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::map<std::string, std::string> parse_kv(const std::string& s) {
  std::map<std::string, std::string> kv;
  if (s.empty()) return kv;
  for (const std::string& part : split_string(s, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw InvalidConfigError("expected key=value, got: " + part);
    kv[part.substr(0, eq)] = part.substr(eq + 1);
  }
  return kv;
}

}  // namespace detail

/// Detector specs: "toy", "toy:<template.png>", "ext:<name>:<command>".
inline std::unique_ptr<Detector> make_detector(const std::string& spec) {
  const std::vector<std::string> parts = detail::split_string(spec, ':', 3);
  if (parts[0] == "toy") {
    ImageBuffer templ =
        parts.size() > 1 && !parts[1].empty() ? read_png(parts[1]) : make_checker_template();
    return std::make_unique<ToyDetector>(std::move(templ));
  }
  if (parts[0] == "ext") {
    if (parts.size() < 3 || parts[1].empty() || parts[2].empty()) {
      throw InvalidConfigError("external detector spec must be ext:<name>:<command>");
    }
    return std::make_unique<ExternalDetectorAdapter>(parts[1], parts[2]);
  }
  throw InvalidConfigError("unknown detector spec: " + spec);
}

/// Defense specs: "none" (no defense stage, returns null), "identity",
/// "lgs[:k=v,...]", "entropy[:k=v,...]", "dropout:<p>:<base spec>",
/// "ext:<name>:<command>".
inline std::shared_ptr<Defense> make_defense(const std::string& spec) {
  if (spec == "none") return nullptr;
  const std::vector<std::string> parts = detail::split_string(spec, ':', 2);
  const std::string& head = parts[0];
  const std::string rest = parts.size() > 1 ? parts[1] : std::string();

  if (head == "identity") return std::make_shared<IdentityDefense>();
  if (head == "lgs") {
    LgsConfig cfg;
    for (const auto& [k, v] : detail::parse_kv(rest)) {
      if (k == "window") cfg.window = std::stoi(v);
      else if (k == "threshold") cfg.gradient_threshold = std::stod(v);
      else if (k == "suppression") cfg.suppression = std::stod(v);
      else throw InvalidConfigError("lgs: unknown option " + k);
    }
    return std::make_shared<LgsDefense>(cfg);
  }
  if (head == "entropy") {
    EntropyConfig cfg;
    FillPolicy fill = FillPolicy::BorderMean;
    for (const auto& [k, v] : detail::parse_kv(rest)) {
      if (k == "window") cfg.window = std::stoi(v);
      else if (k == "bins") cfg.bins = std::stoi(v);
      else if (k == "threshold") cfg.entropy_threshold = std::stod(v);
      else if (k == "fill") fill = fill_policy_from_string(v);
      else throw InvalidConfigError("entropy: unknown option " + k);
    }
    return std::make_shared<EntropyDefense>(cfg, fill);
  }
  if (head == "dropout") {
    const std::vector<std::string> dp = detail::split_string(rest, ':', 2);
    if (dp.size() < 2) throw InvalidConfigError("dropout spec must be dropout:<p>:<base>");
    return std::make_shared<MaskDropoutDefense>(make_defense(dp[1]), std::stod(dp[0]));
  }
  if (head == "ext") {
    const std::vector<std::string> ep = detail::split_string(rest, ':', 2);
    if (ep.size() < 2 || ep[0].empty() || ep[1].empty()) {
      throw InvalidConfigError("external defense spec must be ext:<name>:<command>");
    }
    return std::make_shared<ExternalDefenseAdapter>(ep[0], ep[1]);
  }
  throw InvalidConfigError("unknown defense spec: " + spec);
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  std::string corpus_dir;
  std::vector<std::string> detector_specs{"toy"};
  std::vector<std::string> defense_specs;  // empty -> baseline "none" column only
  std::vector<std::string> patch_stems;
  bool include_clean = true;
  TransformSpec eval_transform;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out_dir;
  int time_cost_images = 16;

  void validate() const {
    if (corpus_dir.empty()) throw InvalidConfigError("ExperimentConfig: corpus path required");
    if (detector_specs.empty()) throw InvalidConfigError("ExperimentConfig: need a detector");
    if (workers < 1) throw InvalidConfigError("ExperimentConfig: workers must be >= 1");
    eval_transform.validate();
  }
};

inline Range range_from_json(const nlohmann::json& j) {
  if (j.is_array()) {
    if (j.size() != 2) throw InvalidConfigError("range must be a number or [lo, hi]");
    return Range(j.at(0).get<double>(), j.at(1).get<double>());
  }
  return Range::fixed(j.get<double>());
}

inline TransformSpec transform_spec_from_json(const nlohmann::json& j) {
  TransformSpec spec;
  if (j.contains("rotation_deg")) spec.rotation_deg = range_from_json(j["rotation_deg"]);
  if (j.contains("scale_ratio")) spec.scale_ratio = range_from_json(j["scale_ratio"]);
  if (j.contains("jitter")) spec.jitter = range_from_json(j["jitter"]);
  if (j.contains("brightness")) spec.brightness = range_from_json(j["brightness"]);
  if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
  spec.validate();
  return spec;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.corpus_dir = j.at("corpus").get<std::string>();
  if (j.contains("detectors")) {
    cfg.detector_specs.clear();
    for (const auto& d : j["detectors"]) cfg.detector_specs.push_back(d.get<std::string>());
  }
  if (j.contains("defenses")) {
    for (const auto& d : j["defenses"]) cfg.defense_specs.push_back(d.get<std::string>());
  }
  if (j.contains("patches")) {
    for (const auto& p : j["patches"]) cfg.patch_stems.push_back(p.get<std::string>());
  }
  cfg.include_clean = j.value("include_clean", true);
  if (j.contains("eval_transform")) {
    cfg.eval_transform = transform_spec_from_json(j["eval_transform"]);
  }
  cfg.seed = j.value("seed", 0ULL);
  cfg.workers = j.value("workers", 1);
  cfg.out_dir = j.value("out", std::string());
  cfg.time_cost_images = j.value("time_cost_images", 16);
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config: " + path);
  return experiment_config_from_json(nlohmann::json::parse(in));
}

/// Everything resolved up front so a bad id fails before any work starts.
struct ResolvedExperiment {
  Corpus corpus;
  std::vector<std::unique_ptr<Detector>> detectors;
  std::vector<std::pair<std::string, std::shared_ptr<Defense>>> defenses;  // name -> impl (null = none)
  std::vector<NamedPatch> patches;
};

inline ResolvedExperiment resolve_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ResolvedExperiment r;
  r.corpus = load_corpus(cfg.corpus_dir);
  if (r.corpus.empty()) throw InvalidInputError("resolve_experiment: empty corpus");
  for (const std::string& spec : cfg.detector_specs) r.detectors.push_back(make_detector(spec));
  std::vector<std::string> defense_specs = cfg.defense_specs;
  if (defense_specs.empty()) defense_specs.push_back("none");
  for (const std::string& spec : defense_specs) {
    std::shared_ptr<Defense> d = make_defense(spec);
    r.defenses.emplace_back(d ? d->name() : "none", std::move(d));
  }
  for (const std::string& stem : cfg.patch_stems) {
    NamedPatch np;
    np.id = std::filesystem::path(stem).filename().string();
    np.patch = load_patch(stem);
    r.patches.push_back(std::move(np));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Leaderboard

struct ApEntry {
  std::string detector;
  std::string defense;
  std::string attack;
  double ap = 0.0;
};

struct LeaderboardCell {
  std::optional<double> mean_ap;
  std::optional<double> min_ap;
};

/// Rows are detectors, columns defenses; the time-cost row ranks defenses by
/// mean per-image milliseconds (lower is better). best/second indices are -1
/// when a row has fewer than 1/2 filled cells.
struct Leaderboard {
  std::vector<std::string> defenses;
  std::vector<std::string> detectors;
  std::vector<std::vector<LeaderboardCell>> cells;  // [detector][defense]
  std::vector<int> best_col;
  std::vector<int> second_col;
  std::vector<std::optional<double>> time_ms;  // per defense
  int time_best = -1;
  int time_second = -1;
};

inline Leaderboard make_leaderboard(const std::vector<ApEntry>& entries,
                                    const std::map<std::string, double>& defense_time_ms) {
  Leaderboard board;
  for (const ApEntry& e : entries) {
    if (std::find(board.detectors.begin(), board.detectors.end(), e.detector) ==
        board.detectors.end()) {
      board.detectors.push_back(e.detector);
    }
    if (std::find(board.defenses.begin(), board.defenses.end(), e.defense) ==
        board.defenses.end()) {
      board.defenses.push_back(e.defense);
    }
  }
  board.cells.assign(board.detectors.size(), std::vector<LeaderboardCell>(board.defenses.size()));

  for (std::size_t r = 0; r < board.detectors.size(); ++r) {
    for (std::size_t c = 0; c < board.defenses.size(); ++c) {
      double sum = 0.0, mn = 0.0;
      int n = 0;
      for (const ApEntry& e : entries) {
        if (e.detector != board.detectors[r] || e.defense != board.defenses[c]) continue;
        sum += e.ap;
        mn = n == 0 ? e.ap : std::min(mn, e.ap);
        ++n;
      }
      if (n > 0) {
        board.cells[r][c].mean_ap = sum / n;
        board.cells[r][c].min_ap = mn;
      }
    }
  }

  board.best_col.assign(board.detectors.size(), -1);
  board.second_col.assign(board.detectors.size(), -1);
  for (std::size_t r = 0; r < board.detectors.size(); ++r) {
    int best = -1, second = -1;
    for (std::size_t c = 0; c < board.defenses.size(); ++c) {
      if (!board.cells[r][c].mean_ap) continue;
      const double v = *board.cells[r][c].mean_ap;
      if (best < 0 || v > *board.cells[r][static_cast<std::size_t>(best)].mean_ap) {
        second = best;
        best = static_cast<int>(c);
      } else if (second < 0 || v > *board.cells[r][static_cast<std::size_t>(second)].mean_ap) {
        second = static_cast<int>(c);
      }
    }
    board.best_col[r] = best;
    board.second_col[r] = second;
  }

  board.time_ms.assign(board.defenses.size(), std::nullopt);
  for (std::size_t c = 0; c < board.defenses.size(); ++c) {
    const auto it = defense_time_ms.find(board.defenses[c]);
    if (it != defense_time_ms.end()) board.time_ms[c] = it->second;
  }
  for (std::size_t c = 0; c < board.defenses.size(); ++c) {
    if (!board.time_ms[c]) continue;
    const double v = *board.time_ms[c];
    if (board.time_best < 0 || v < *board.time_ms[static_cast<std::size_t>(board.time_best)]) {
      board.time_second = board.time_best;
      board.time_best = static_cast<int>(c);
    } else if (board.time_second < 0 ||
               v < *board.time_ms[static_cast<std::size_t>(board.time_second)]) {
      board.time_second = static_cast<int>(c);
    }
  }
  return board;
}

namespace detail {

inline std::string fmt2(double v) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  out << v;
  return out.str();
}

}  // namespace detail

/// Markdown-ish table: best cell per row bolded, second best underlined.
inline std::string leaderboard_markdown(const Leaderboard& b) {
  std::ostringstream out;
  out << "| detector |";
  for (const std::string& d : b.defenses) out << ' ' << d << " |";
  out << '\n';
  out << "| --- |";
  for (std::size_t c = 0; c < b.defenses.size(); ++c) out << " --- |";
  out << '\n';
  for (std::size_t r = 0; r < b.detectors.size(); ++r) {
    out << "| " << b.detectors[r] << " |";
    for (std::size_t c = 0; c < b.defenses.size(); ++c) {
      const LeaderboardCell& cell = b.cells[r][c];
      if (!cell.mean_ap) {
        out << " - |";
        continue;
      }
      std::string text = detail::fmt2(*cell.mean_ap * 100.0) + " / " +
                         detail::fmt2(*cell.min_ap * 100.0);
      if (static_cast<int>(c) == b.best_col[r]) text = "**" + text + "**";
      else if (static_cast<int>(c) == b.second_col[r]) text = "_" + text + "_";
      out << ' ' << text << " |";
    }
    out << '\n';
  }
  out << "| time (ms) |";
  for (std::size_t c = 0; c < b.defenses.size(); ++c) {
    if (!b.time_ms[c]) {
      out << " - |";
      continue;
    }
    std::string text = detail::fmt2(*b.time_ms[c]);
    if (static_cast<int>(c) == b.time_best) text = "**" + text + "**";
    else if (static_cast<int>(c) == b.time_second) text = "_" + text + "_";
    out << ' ' << text << " |";
  }
  out << '\n';
  return out.str();
}

inline std::string leaderboard_csv(const Leaderboard& b) {
  std::ostringstream out;
  out << "detector";
  for (const std::string& d : b.defenses) out << ',' << d << "_mean," << d << "_min";
  out << '\n';
  for (std::size_t r = 0; r < b.detectors.size(); ++r) {
    out << b.detectors[r];
    for (std::size_t c = 0; c < b.defenses.size(); ++c) {
      const LeaderboardCell& cell = b.cells[r][c];
      out << ',';
      if (cell.mean_ap) out << *cell.mean_ap;
      out << ',';
      if (cell.min_ap) out << *cell.min_ap;
    }
    out << '\n';
  }
  out << "time_ms";
  for (std::size_t c = 0; c < b.defenses.size(); ++c) {
    out << ',';
    if (b.time_ms[c]) out << *b.time_ms[c];
    out << ',';
  }
  out << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Evaluation runs

struct RunResult {
  std::vector<EvalRecord> records;
  MetricReport report;
  Leaderboard leaderboard;
  std::map<std::string, double> defense_time_ms;
  std::vector<std::string> failures;
};

namespace detail {

inline nlohmann::ordered_json cell_to_json(const MetricCell& c) {
  nlohmann::ordered_json j;
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("ap50", c.ap50);
  put("asr", c.asr);
  put("smiou", c.smiou);
  put("nmiou", c.nmiou);
  put("mean_defense_ms", c.mean_defense_ms);
  j["records"] = c.records;
  j["failed"] = c.failed;
  return j;
}

inline nlohmann::ordered_json report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["overall"] = cell_to_json(r.overall);
  j["by_detector"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.by_detector) j["by_detector"][k] = cell_to_json(v);
  j["by_attack"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.by_attack) j["by_attack"][k] = cell_to_json(v);
  return j;
}

}  // namespace detail

/// Full sweep: for every (attack, defense, detector, image) stamp, defend,
/// detect, record. Per-record errors mark the record failed and the run
/// continues. Deterministic given the config seed; defense wall times in
/// records are informational while the serial time-cost pass is authoritative.
inline RunResult run_eval(const ExperimentConfig& cfg) {
  const ResolvedExperiment exp = resolve_experiment(cfg);
  RunResult result;

  struct AttackSlot {
    std::string name;
    const Patch* patch;  // null for the clean pass
  };
  std::vector<AttackSlot> attacks;
  if (cfg.include_clean) attacks.push_back({"clean", nullptr});
  for (const NamedPatch& np : exp.patches) attacks.push_back({np.id, &np.patch});
  if (attacks.empty()) throw InvalidConfigError("run_eval: nothing to evaluate");

  for (const AttackSlot& attack : attacks) {
    for (const auto& [defense_name, defense] : exp.defenses) {
      for (const std::unique_ptr<Detector>& detector : exp.detectors) {
        std::vector<EvalRecord> chunk(exp.corpus.size());
        const int workers = detector->thread_safe() ? cfg.workers : 1;
        parallel_for(exp.corpus.size(), workers, [&](std::size_t i) {
          const CorpusItem& item = exp.corpus[i];
          EvalRecord rec;
          rec.image_id = item.image.id;
          rec.attack_name = attack.name;
          rec.defense_name = defense_name;
          rec.detector_name = detector->name();
          rec.gt = item.gt;
          try {
            const ImageBuffer* current = &item.image;
            ImageBuffer stamped;
            if (attack.patch) {
              Rng rng(derive_seed(cfg.seed, "eval:" + attack.name + ":" + item.image.id, 0));
              ApplyResult ar =
                  apply_to_persons(item.image, *attack.patch, cfg.eval_transform, item.gt, rng);
              rec.gt_mask = std::move(ar.mask);
              stamped = std::move(ar.image);
              current = &stamped;
            }
            ImageBuffer purified;
            if (defense) {
              Rng drng(derive_seed(cfg.seed, "defense:" + attack.name + ":" + item.image.id, 0));
              const auto t0 = std::chrono::steady_clock::now();
              DefenseOutput out = defense->apply(*current, drng);
              const auto t1 = std::chrono::steady_clock::now();
              rec.defense_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
              rec.pred_mask = std::move(out.mask);
              purified = std::move(out.purified);
              current = &purified;
            }
            rec.detections = detector->detect(*current);
          } catch (const Error& e) {
            rec.failed = true;
            rec.error = e.what();
          }
          chunk[i] = std::move(rec);
        });
        for (EvalRecord& rec : chunk) {
          if (rec.failed) {
            result.failures.push_back(rec.attack_name + "/" + rec.defense_name + "/" +
                                      rec.detector_name + "/" + rec.image_id + ": " + rec.error);
          }
          result.records.push_back(std::move(rec));
        }
      }
    }
  }

  // Serial timing pass, one defense at a time, padded to clear the warm-up.
  std::vector<ImageBuffer> timing_images;
  for (const CorpusItem& item : exp.corpus) {
    timing_images.push_back(item.image);
    if (static_cast<int>(timing_images.size()) >= cfg.time_cost_images) break;
  }
  while (timing_images.size() < 8) timing_images.push_back(timing_images.front());
  for (const auto& [defense_name, defense] : exp.defenses) {
    if (!defense) continue;
    result.defense_time_ms[defense_name] = time_cost(*defense, timing_images);
  }

  result.report = compute_metrics(result.records);

  std::vector<ApEntry> entries;
  for (const AttackSlot& attack : attacks) {
    if (!attack.patch) continue;
    for (const auto& [defense_name, defense] : exp.defenses) {
      for (const std::unique_ptr<Detector>& detector : exp.detectors) {
        std::vector<EvalRecord> subset;
        for (const EvalRecord& r : result.records) {
          if (r.attack_name == attack.name && r.defense_name == defense_name &&
              r.detector_name == detector->name()) {
            subset.push_back(r);
          }
        }
        try {
          entries.push_back({detector->name(), defense_name, attack.name, ap_at_iou(subset)});
        } catch (const UndefinedMetricError&) {
        }
      }
    }
  }
  result.leaderboard = make_leaderboard(entries, result.defense_time_ms);

  if (!cfg.out_dir.empty()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(cfg.out_dir) / "plots", ec);
    if (!fs::is_directory(cfg.out_dir)) throw IoError("run_eval: cannot create " + cfg.out_dir);
    write_records_jsonl((fs::path(cfg.out_dir) / "records.jsonl").string(), result.records);
    {
      std::ofstream out((fs::path(cfg.out_dir) / "report.json").string(), std::ios::binary);
      out << detail::report_to_json(result.report).dump(2) << '\n';
    }
    {
      std::ofstream out((fs::path(cfg.out_dir) / "leaderboard.md").string(), std::ios::binary);
      out << leaderboard_markdown(result.leaderboard);
    }
    {
      std::ofstream out((fs::path(cfg.out_dir) / "leaderboard.csv").string(), std::ios::binary);
      out << leaderboard_csv(result.leaderboard);
    }
    {
      nlohmann::ordered_json log;
      log["version"] = kToolkitVersion;
      log["seed"] = cfg.seed;
      log["corpus"] = cfg.corpus_dir;
      log["detectors"] = cfg.detector_specs;
      log["defenses"] = cfg.defense_specs;
      log["patches"] = cfg.patch_stems;
      log["records"] = result.records.size();
      log["failures"] = result.failures;
      std::ofstream out((fs::path(cfg.out_dir) / "run_log.json").string(), std::ios::binary);
      out << log.dump(2) << '\n';
    }
    // Per-defense bar charts: ASR and mask IoU over attacked records only.
    std::vector<double> asr_bars, miou_bars;
    bool have_miou = false;
    for (const auto& [defense_name, defense] : exp.defenses) {
      std::vector<EvalRecord> subset;
      for (const EvalRecord& r : result.records) {
        if (r.defense_name == defense_name && r.attack_name != "clean") subset.push_back(r);
      }
      double asr_v = 0.0;
      try {
        asr_v = asr(subset);
      } catch (const UndefinedMetricError&) {
      }
      asr_bars.push_back(asr_v);
      std::vector<PixelConfusion> confusions;
      for (const EvalRecord& r : subset) {
        if (r.pred_mask && r.gt_mask) confusions.push_back(pixel_confusion(*r.pred_mask, *r.gt_mask));
      }
      if (!confusions.empty()) {
        miou_bars.push_back(nmiou(confusions));
        have_miou = true;
      } else {
        miou_bars.push_back(0.0);
      }
    }
    if (!asr_bars.empty()) {
      save_bar_chart((fs::path(cfg.out_dir) / "plots" / "asr_by_defense.png").string(), asr_bars);
    }
    if (have_miou) {
      save_bar_chart((fs::path(cfg.out_dir) / "plots" / "nmiou_by_defense.png").string(),
                     miou_bars);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Patch-size sweep

struct SweepPoint {
  double scale_ratio = 0.0;
  double asr_value = 0.0;
};

/// ASR as a function of patch area ratio, defense optional (null = none).
inline std::vector<SweepPoint> size_sweep(const Corpus& corpus, const Detector& detector,
                                          const Defense* defense, const Patch& patch,
                                          const std::vector<double>& scales,
                                          TransformSpec base_spec, std::uint64_t seed) {
  if (scales.empty()) throw InvalidInputError("size_sweep: no scales");
  IdentityDefense identity;
  const Defense& def = defense ? *defense : static_cast<const Defense&>(identity);
  std::vector<SweepPoint> points;
  for (std::size_t si = 0; si < scales.size(); ++si) {
    TransformSpec spec = base_spec;
    spec.scale_ratio = Range::fixed(scales[si]);
    spec.validate();
    const std::vector<EvalRecord> records = detail::post_defense_records(
        corpus, detector, def, patch, spec, derive_seed(seed, "sweep", si), "sweep");
    points.push_back({scales[si], asr(records)});
  }
  return points;
}

inline std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out << "scale_ratio,asr\n";
  for (const SweepPoint& p : points) out << p.scale_ratio << ',' << p.asr_value << '\n';
  return out.str();
}

}  // namespace patchbench
