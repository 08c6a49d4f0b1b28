// Command-line front end: generate toy corpora, optimize patches, build
// stamped datasets, run evaluations, and render reports. Every verb routes all
// randomness through --seed, so reruns with the same flags reproduce outputs.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "patchbench/patchbench.hpp"

namespace pb = patchbench;
namespace fs = std::filesystem;

namespace {

pb::Range parse_range(const std::string& s) {
  const auto pos = s.find(':');
  if (pos == std::string::npos) return pb::Range::fixed(std::stod(s));
  return pb::Range(std::stod(s.substr(0, pos)), std::stod(s.substr(pos + 1)));
}

struct TransformFlags {
  std::string rotation = "0";
  std::string scale = "0.2";
  std::string jitter = "0";
  std::string brightness = "1";

  void attach(CLI::App* app) {
    app->add_option("--rotation", rotation, "rotation in degrees, fixed or lo:hi");
    app->add_option("--scale", scale, "patch/box area ratio, fixed or lo:hi");
    app->add_option("--jitter", jitter, "placement jitter in pixels, fixed or lo:hi");
    app->add_option("--brightness", brightness, "brightness factor, fixed or lo:hi");
  }

  pb::TransformSpec spec() const {
    pb::TransformSpec t;
    t.rotation_deg = parse_range(rotation);
    t.scale_ratio = parse_range(scale);
    t.jitter = parse_range(jitter);
    t.brightness = parse_range(brightness);
    t.validate();
    return t;
  }
};

struct AttackFlags {
  std::string goal = "hiding";
  std::string loss = "max";
  std::string optimizer = "sign-gd";
  std::string tv_kind = "anisotropic";
  double tv_weight = 0.0;
  int steps = 200;
  double lr = 0.03;
  double lr_decay = 1.0;
  int eot = 1;
  std::vector<double> region;
  int target_class = pb::kPersonClass;
  TransformFlags transform;

  void attach(CLI::App* app) {
    app->add_option("--goal", goal, "hiding or appearing");
    app->add_option("--loss", loss, "max, mean, or target-class");
    app->add_option("--optimizer", optimizer, "sign-gd or gd");
    app->add_option("--tv-kind", tv_kind, "anisotropic or isotropic");
    app->add_option("--tv-weight", tv_weight, "smoothness weight");
    app->add_option("--steps", steps, "optimization steps");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--lr-decay", lr_decay, "per-step learning-rate multiplier");
    app->add_option("--eot", eot, "transform samples per image per step");
    app->add_option("--region", region, "appearing target region: x0 y0 x1 y1")->expected(4);
    app->add_option("--target-class", target_class, "appearing target class id");
    transform.attach(app);
  }

  pb::AttackConfig config(std::uint64_t seed) const {
    pb::AttackConfig cfg;
    cfg.goal = pb::goal_from_string(goal);
    cfg.loss_mode = pb::loss_mode_from_string(loss);
    cfg.optimizer = optimizer == "gd" ? pb::OptimizerKind::Gd : pb::OptimizerKind::SignGd;
    if (optimizer != "gd" && optimizer != "sign-gd") {
      throw pb::InvalidConfigError("unknown optimizer: " + optimizer);
    }
    cfg.tv_kind = tv_kind == "isotropic" ? pb::TvKind::Isotropic : pb::TvKind::Anisotropic;
    if (tv_kind != "isotropic" && tv_kind != "anisotropic") {
      throw pb::InvalidConfigError("unknown tv kind: " + tv_kind);
    }
    cfg.tv_weight = tv_weight;
    cfg.steps = steps;
    cfg.learning_rate = lr;
    cfg.lr_decay = lr_decay;
    cfg.eot_samples = eot;
    cfg.seed = seed;
    cfg.transform = transform.spec();
    cfg.target_class = target_class;
    if (!region.empty()) {
      cfg.target_region =
          pb::BoundingBox{region[0], region[1], region[2], region[3], target_class, std::nullopt};
    }
    cfg.validate();
    return cfg;
  }
};

pb::Patch make_init_patch(const std::string& init_stem, int patch_size, bool circular,
                          std::uint64_t seed) {
  if (!init_stem.empty()) return pb::load_patch(init_stem);
  pb::Rng rng(pb::derive_seed(seed, "init-patch", 0));
  pb::Patch p = pb::Patch::uniform_random(patch_size, patch_size, rng);
  if (circular) p.make_circular();
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw pb::IoError("cannot write " + path.string());
  out << text;
}

void write_trace_csv(const fs::path& path, const pb::OptimizationTrace& trace) {
  std::ostringstream out;
  out << "step,total_loss,attack_loss,tv_loss,extra_loss\n";
  for (std::size_t i = 0; i < trace.total_loss.size(); ++i) {
    out << i << ',' << trace.total_loss[i] << ',' << trace.attack_loss[i] << ','
        << trace.tv_loss[i] << ',' << trace.extra_loss[i] << '\n';
  }
  write_text(path, out.str());
}

int run(int argc, char** argv) {
  CLI::App app{"adversarial patch attack/defense benchmark"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int workers = 1;
  app.add_option("--seed", seed, "root seed for all randomness")->capture_default_str();
  app.add_option("--workers", workers, "worker threads for image-level loops")
      ->capture_default_str();

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "write a synthetic scene corpus");
  std::string gen_out;
  int gen_images = 8, gen_side = 128, gen_persons = 1;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--images", gen_images, "number of scenes");
  gen->add_option("--side", gen_side, "scene side in pixels");
  gen->add_option("--persons", gen_persons, "template instances per scene");

  // attack
  auto* attack = app.add_subcommand("attack", "optimize a patch against a detector");
  std::string atk_corpus, atk_detector = "toy", atk_out, atk_init;
  int atk_patch_size = 48;
  bool atk_circular = false;
  AttackFlags atk;
  attack->add_option("--corpus", atk_corpus, "corpus directory")->required();
  attack->add_option("--detector", atk_detector, "detector spec");
  attack->add_option("--out", atk_out, "output patch stem")->required();
  attack->add_option("--init", atk_init, "initial patch stem (default: random)");
  attack->add_option("--patch-size", atk_patch_size, "side of a fresh random patch");
  attack->add_flag("--circular", atk_circular, "disc-shaped mask for a fresh patch");
  atk.attach(attack);

  // build-dataset
  auto* build = app.add_subcommand("build-dataset", "stamp patches over a corpus");
  std::string bd_corpus, bd_out, bd_mode = "pad";
  std::vector<std::string> bd_patches;
  int bd_side = 416;
  double bd_pad = 0.5;
  TransformFlags bd_transform;
  build->add_option("--corpus", bd_corpus, "corpus directory")->required();
  build->add_option("--patch", bd_patches, "patch stem (repeatable)")->required();
  build->add_option("--out", bd_out, "dataset root")->required();
  build->add_option("--side", bd_side, "canvas side");
  build->add_option("--mode", bd_mode, "pad or resize");
  build->add_option("--pad-value", bd_pad, "letterbox fill value");
  bd_transform.attach(build);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "run the attack x defense x detector sweep");
  std::string ev_config, ev_corpus, ev_out;
  std::vector<std::string> ev_patches, ev_defenses, ev_detectors;
  bool ev_no_clean = false;
  TransformFlags ev_transform;
  eval->add_option("--config", ev_config, "JSON experiment config");
  eval->add_option("--corpus", ev_corpus, "corpus directory (overrides config)");
  eval->add_option("--patch", ev_patches, "patch stem (repeatable)");
  eval->add_option("--defense", ev_defenses, "defense spec (repeatable)");
  eval->add_option("--detector", ev_detectors, "detector spec (repeatable)");
  eval->add_option("--out", ev_out, "output directory");
  eval->add_flag("--no-clean", ev_no_clean, "skip the clean baseline pass");
  ev_transform.attach(eval);

  // adaptive
  auto* adap = app.add_subcommand("adaptive", "defense-aware patch optimization");
  std::string ad_corpus, ad_detector = "toy", ad_defense = "lgs", ad_out, ad_init;
  std::string ad_regularizer = "none", ad_gradient = "straight-through";
  double ad_mu = 0.0;
  int ad_draws = 1, ad_patch_size = 48;
  bool ad_circular = false;
  AttackFlags ad_attack;
  adap->add_option("--corpus", ad_corpus, "corpus directory")->required();
  adap->add_option("--detector", ad_detector, "detector spec");
  adap->add_option("--defense", ad_defense, "defense spec to attack through");
  adap->add_option("--out", ad_out, "output patch stem")->required();
  adap->add_option("--init", ad_init, "initial patch stem (default: random)");
  adap->add_option("--patch-size", ad_patch_size, "side of a fresh random patch");
  adap->add_flag("--circular", ad_circular, "disc-shaped mask for a fresh patch");
  adap->add_option("--mu", ad_mu, "defense-bypass objective weight");
  adap->add_option("--regularizer", ad_regularizer, "none, tv, or entropy");
  adap->add_option("--gradient", ad_gradient, "exact or straight-through");
  adap->add_option("--draws", ad_draws, "defense samples per step");
  ad_attack.attach(adap);

  // analyze
  auto* ana = app.add_subcommand("analyze", "patch distribution diagnostics");
  std::string an_corpus, an_out;
  std::vector<std::string> an_patches;
  int an_crop = 16, an_stride = 4, an_bins = 16;
  ana->add_option("--patch", an_patches, "patch stem (repeatable, >= 2)")->required();
  ana->add_option("--corpus", an_corpus, "clean corpus directory")->required();
  ana->add_option("--out", an_out, "output directory")->required();
  ana->add_option("--crop", an_crop, "embedding crop side");
  ana->add_option("--stride", an_stride, "crop stride");
  ana->add_option("--bins", an_bins, "radial spectrum bins");

  // report
  auto* rep = app.add_subcommand("report", "recompute metrics from archived records");
  std::vector<std::string> rp_records;
  std::string rp_out;
  rep->add_option("--records", rp_records, "records.jsonl (repeatable)")->required();
  rep->add_option("--out", rp_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    pb::SceneConfig scfg;
    scfg.side = gen_side;
    scfg.persons = gen_persons;
    pb::save_corpus(gen_out, pb::make_toy_corpus(gen_images, seed, scfg));
    std::cout << "wrote " << gen_images << " scenes to " << gen_out << '\n';
    return 0;
  }

  if (attack->parsed()) {
    const pb::Corpus corpus = pb::load_corpus(atk_corpus);
    const std::unique_ptr<pb::Detector> detector = pb::make_detector(atk_detector);
    pb::AttackConfig cfg = atk.config(seed);
    pb::Patch init = make_init_patch(atk_init, atk_patch_size, atk_circular, seed);
    init.meta.victim_detector = detector->name();
    init.meta.goal = cfg.goal;
    auto [patch, trace] = pb::optimize_patch(corpus, *detector, cfg, init);
    pb::save_patch(atk_out, patch);
    write_trace_csv(atk_out + "_trace.csv", trace);
    std::cout << "loss " << trace.total_loss.front() << " -> " << trace.total_loss.back()
              << " over " << cfg.steps << " steps; patch at " << atk_out << ".png\n";
    return 0;
  }

  if (build->parsed()) {
    pb::BuildConfig cfg;
    cfg.canvas.side = bd_side;
    if (bd_mode == "resize") cfg.canvas.mode = pb::CanvasPolicy::Mode::Resize;
    else if (bd_mode != "pad") throw pb::InvalidConfigError("unknown canvas mode: " + bd_mode);
    cfg.canvas.pad_value = bd_pad;
    cfg.transform = bd_transform.spec();
    cfg.seed = seed;
    cfg.workers = workers;
    std::vector<pb::NamedPatch> patches;
    for (const std::string& stem : bd_patches) {
      patches.push_back({fs::path(stem).filename().string(), pb::load_patch(stem)});
    }
    pb::DatasetManifest manifest =
        pb::build_dataset(patches, pb::load_corpus(bd_corpus), cfg, bd_out);
    pb::split_dataset(manifest, seed);
    pb::save_manifest((fs::path(bd_out) / "manifest.json").string(), manifest);
    int train = 0;
    for (const pb::DatasetEntry& e : manifest.entries) train += e.split == "train" ? 1 : 0;
    std::cout << manifest.entries.size() << " entries (" << train << " train, "
              << manifest.entries.size() - train << " test), " << manifest.skipped.size()
              << " skipped\n";
    for (const std::string& w : manifest.warnings) std::cout << "warning: " << w << '\n';
    return 0;
  }

  if (eval->parsed()) {
    pb::ExperimentConfig cfg;
    if (!ev_config.empty()) cfg = pb::load_experiment_config(ev_config);
    if (!ev_corpus.empty()) cfg.corpus_dir = ev_corpus;
    if (!ev_patches.empty()) cfg.patch_stems = ev_patches;
    if (!ev_defenses.empty()) cfg.defense_specs = ev_defenses;
    if (!ev_detectors.empty()) cfg.detector_specs = ev_detectors;
    if (!ev_out.empty()) cfg.out_dir = ev_out;
    if (ev_no_clean) cfg.include_clean = false;
    if (eval->count("--rotation") || eval->count("--scale") || eval->count("--jitter") ||
        eval->count("--brightness")) {
      cfg.eval_transform = ev_transform.spec();
    }
    if (app.count("--seed")) cfg.seed = seed;
    if (app.count("--workers")) cfg.workers = workers;
    const pb::RunResult result = pb::run_eval(cfg);
    std::cout << result.records.size() << " records, " << result.failures.size() << " failed\n";
    std::cout << pb::leaderboard_markdown(result.leaderboard);
    if (!cfg.out_dir.empty()) std::cout << "outputs under " << cfg.out_dir << '\n';
    for (const std::string& f : result.failures) std::cout << "failed: " << f << '\n';
    return 0;
  }

  if (adap->parsed()) {
    const pb::Corpus corpus = pb::load_corpus(ad_corpus);
    const std::unique_ptr<pb::Detector> detector = pb::make_detector(ad_detector);
    const std::shared_ptr<pb::Defense> defense = pb::make_defense(ad_defense);
    if (!defense) throw pb::InvalidConfigError("adaptive: defense must not be none");
    pb::AdaptiveConfig cfg;
    cfg.base = ad_attack.config(seed);
    cfg.bypass_weight = ad_mu;
    cfg.regularizer = pb::regularizer_from_string(ad_regularizer);
    cfg.gradient_mode = pb::gradient_mode_from_string(ad_gradient);
    cfg.defense_draws = ad_draws;
    pb::Patch init = make_init_patch(ad_init, ad_patch_size, ad_circular, seed);
    init.meta.victim_detector = detector->name();
    init.meta.goal = cfg.base.goal;
    const pb::AdaptiveResult result =
        pb::run_adaptive_attack(corpus, *detector, *defense, cfg, init);
    pb::save_patch(ad_out, result.patch);
    write_trace_csv(ad_out + "_trace.csv", result.trace);
    std::cout << "post-" << result.report.defense_name << " success rate: baseline "
              << result.report.baseline_asr << ", adaptive " << result.report.adaptive_asr
              << " (delta " << result.report.delta() << ") over " << result.report.images
              << " images; patch at " << ad_out << ".png\n";
    return 0;
  }

  if (ana->parsed()) {
    if (an_patches.size() < 2) throw pb::InvalidConfigError("analyze: need >= 2 patches");
    pb::AnalysisConfig cfg;
    cfg.crop = an_crop;
    cfg.stride = an_stride;
    cfg.spectrum_bins = an_bins;

    std::vector<pb::Patch> given, reference;
    for (const std::string& stem : an_patches) given.push_back(pb::load_patch(stem));
    for (std::size_t i = 0; i < given.size(); ++i) {
      pb::Rng rng(pb::derive_seed(seed, "reference-patch", i));
      pb::Patch r = pb::Patch::uniform_random(given[i].height, given[i].width, rng);
      r.shape_mask = given[i].shape_mask;
      reference.push_back(std::move(r));
    }

    const pb::Corpus corpus = pb::load_corpus(an_corpus);
    std::vector<pb::ImageBuffer> clean_crops;
    pb::Rng crop_rng(pb::derive_seed(seed, "clean-crops", 0));
    for (const pb::CorpusItem& item : corpus) {
      for (pb::ImageBuffer& c : pb::detail::sliding_crops(item.image, cfg.crop, cfg.crop)) {
        clean_crops.push_back(std::move(c));
      }
    }
    if (clean_crops.size() > 512) {
      for (std::size_t i = clean_crops.size() - 1; i > 0; --i) {
        std::swap(clean_crops[i], clean_crops[crop_rng.uniform_int(0, static_cast<int>(i))]);
      }
      clean_crops.resize(512);
    }

    const pb::DistributionReport report =
        pb::distribution_report(given, reference, clean_crops, cfg);

    std::error_code ec;
    fs::create_directories(an_out, ec);
    std::ostringstream fid_csv;
    fid_csv << "unit";
    for (const std::string& n : report.unit_names) fid_csv << ',' << n;
    fid_csv << '\n';
    for (Eigen::Index r = 0; r < report.fid_matrix.rows(); ++r) {
      fid_csv << report.unit_names[static_cast<std::size_t>(r)];
      for (Eigen::Index c = 0; c < report.fid_matrix.cols(); ++c) {
        fid_csv << ',' << report.fid_matrix(r, c);
      }
      fid_csv << '\n';
    }
    write_text(fs::path(an_out) / "fid_matrix.csv", fid_csv.str());

    std::ostringstream spec_csv;
    spec_csv << "group";
    for (int b = 0; b < cfg.spectrum_bins; ++b) spec_csv << ",bin" << b;
    spec_csv << '\n';
    const char* group_names[3] = {"given", "reference", "clean"};
    for (int g = 0; g < 3; ++g) {
      spec_csv << group_names[g];
      for (double v : report.group_mean_spectrum[static_cast<std::size_t>(g)]) {
        spec_csv << ',' << v;
      }
      spec_csv << '\n';
    }
    write_text(fs::path(an_out) / "spectrum.csv", spec_csv.str());

    std::vector<std::vector<double>> heat;
    for (Eigen::Index r = 0; r < report.fid_matrix.rows(); ++r) {
      std::vector<double> row;
      for (Eigen::Index c = 0; c < report.fid_matrix.cols(); ++c) {
        row.push_back(report.fid_matrix(r, c));
      }
      heat.push_back(std::move(row));
    }
    pb::save_heatmap((fs::path(an_out) / "fid_matrix.png").string(), heat);

    std::cout << "cross-group mean FID " << report.cross_group_mean_fid
              << ", within-reference mean " << report.within_second_group_mean_fid
              << (report.first_group_more_distant ? " (given patches are the outliers)\n"
                                                  : " (no separation)\n");
    std::cout << "high-frequency energy: given " << report.group_high_freq_fraction[0]
              << ", reference " << report.group_high_freq_fraction[1] << ", clean "
              << report.group_high_freq_fraction[2] << '\n';
    std::cout << "outputs under " << an_out << '\n';
    return 0;
  }

  if (rep->parsed()) {
    std::vector<pb::EvalRecord> records;
    for (const std::string& path : rp_records) {
      for (pb::EvalRecord& r : pb::read_records_jsonl(path)) records.push_back(std::move(r));
    }
    const pb::MetricReport report = pb::compute_metrics(records);
    std::vector<pb::ApEntry> entries;
    std::map<std::string, std::map<std::string, std::vector<pb::EvalRecord>>> by_key;
    for (const pb::EvalRecord& r : records) {
      if (r.attack_name == "clean") continue;
      by_key[r.detector_name + "\t" + r.defense_name][r.attack_name].push_back(r);
    }
    for (const auto& [key, attacks] : by_key) {
      const auto tab = key.find('\t');
      for (const auto& [attack_name, subset] : attacks) {
        try {
          entries.push_back(
              {key.substr(0, tab), key.substr(tab + 1), attack_name, pb::ap_at_iou(subset)});
        } catch (const pb::UndefinedMetricError&) {
        }
      }
    }
    const pb::Leaderboard board = pb::make_leaderboard(entries, {});
    std::error_code ec;
    fs::create_directories(rp_out, ec);
    write_text(fs::path(rp_out) / "leaderboard.md", pb::leaderboard_markdown(board));
    write_text(fs::path(rp_out) / "leaderboard.csv", pb::leaderboard_csv(board));
    write_text(fs::path(rp_out) / "report.json",
               pb::detail::report_to_json(report).dump(2) + "\n");
    std::cout << records.size() << " records -> " << rp_out << '\n';
    std::cout << pb::leaderboard_markdown(board);
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const pb::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
