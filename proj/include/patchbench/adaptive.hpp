#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "patchbench/attack.hpp"
#include "patchbench/defense.hpp"
#include "patchbench/detector.hpp"
#include "patchbench/metrics.hpp"
#include "patchbench/rng.hpp"

namespace patchbench {

enum class RegularizerKind { None, Tv, Entropy };
enum class GradientMode { Exact, StraightThrough };

inline RegularizerKind regularizer_from_string(const std::string& s) {
  if (s == "none") return RegularizerKind::None;
  if (s == "tv") return RegularizerKind::Tv;
  if (s == "entropy") return RegularizerKind::Entropy;
  throw InvalidConfigError("unknown regularizer: " + s);
}

inline GradientMode gradient_mode_from_string(const std::string& s) {
  if (s == "exact") return GradientMode::Exact;
  if (s == "straight-through") return GradientMode::StraightThrough;
  throw InvalidConfigError("unknown gradient mode: " + s);
}

struct AdaptiveConfig {
  AttackConfig base;
  double bypass_weight = 0.0;  // μ
  RegularizerKind regularizer = RegularizerKind::None;
  GradientMode gradient_mode = GradientMode::StraightThrough;
  int defense_draws = 1;  // loss averaged over this many defense samples per step

  void validate() const {
    base.validate();
    if (bypass_weight < 0.0) throw InvalidConfigError("AdaptiveConfig: bypass weight must be >= 0");
    if (defense_draws < 1) throw InvalidConfigError("AdaptiveConfig: defense_draws must be >= 1");
  }
};

/// Differentiable stand-in for a defense's selection criterion, added to the
/// attack objective with weight μ so the optimizer steers the patch under the
/// defense's radar.
class AdaptiveRegularizer {
public:
  virtual ~AdaptiveRegularizer() = default;
  virtual std::string name() const = 0;
  virtual double evaluate(const Patch& p) const = 0;
  virtual std::vector<double> gradient(const Patch& p) const = 0;
};

class TvRegularizer final : public AdaptiveRegularizer {
public:
  std::string name() const override { return "tv"; }
  double evaluate(const Patch& p) const override { return tv_loss(p, TvKind::Anisotropic); }
  std::vector<double> gradient(const Patch& p) const override {
    return tv_loss_grad(p, TvKind::Anisotropic).second;
  }
};

/// Mean per-tile entropy of a kernel-smoothed intensity histogram, in bits.
/// Gaussian kernel with bandwidth 1/bins makes the histogram, and therefore
/// the entropy, smooth in the pixel values.
class SoftEntropyRegularizer final : public AdaptiveRegularizer {
public:
  explicit SoftEntropyRegularizer(EntropyConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  std::string name() const override { return "entropy"; }

  double evaluate(const Patch& p) const override {
    double total = 0.0;
    int tiles = 0;
    const std::vector<double> inten = intensity_of(p);
    detail::for_each_tile(p.height, p.width, cfg_.window, [&](int y0, int y1, int x0, int x1) {
      total += tile_entropy_bits(p, inten, y0, y1, x0, x1, nullptr);
      ++tiles;
    });
    return tiles > 0 ? total / tiles : 0.0;
  }

  std::vector<double> gradient(const Patch& p) const override {
    std::vector<double> grad(p.pixels.size(), 0.0);
    int tiles = 0;
    const std::vector<double> inten = intensity_of(p);
    detail::for_each_tile(p.height, p.width, cfg_.window, [&](int, int, int, int) { ++tiles; });
    const double scale = tiles > 0 ? 1.0 / tiles : 0.0;
    detail::for_each_tile(p.height, p.width, cfg_.window, [&](int y0, int y1, int x0, int x1) {
      std::vector<double> dv((y1 - y0) * (x1 - x0), 0.0);
      tile_entropy_bits(p, inten, y0, y1, x0, x1, &dv);
      int idx = 0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x, ++idx) {
          const double g = dv[idx] * scale / 3.0;  // intensity is the channel mean
          const std::size_t k = (static_cast<std::size_t>(y) * p.width + x) * 3;
          grad[k] += g;
          grad[k + 1] += g;
          grad[k + 2] += g;
        }
      }
    });
    return grad;
  }

  const EntropyConfig& config() const { return cfg_; }

private:
  static std::vector<double> intensity_of(const Patch& p) {
    std::vector<double> v(static_cast<std::size_t>(p.height) * p.width);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = (p.pixels[i * 3] + p.pixels[i * 3 + 1] + p.pixels[i * 3 + 2]) / 3.0;
    }
    return v;
  }

  /// Entropy of one tile; when dv is non-null also writes d entropy / d
  /// intensity for each tile pixel (row-major within the tile).
  double tile_entropy_bits(const Patch& p, const std::vector<double>& inten, int y0, int y1,
                           int x0, int x1, std::vector<double>* dv) const {
    const int n = (y1 - y0) * (x1 - x0);
    const int bins = cfg_.bins;
    const double h = 1.0 / bins;
    std::vector<double> weight(static_cast<std::size_t>(n) * bins);
    std::vector<double> bin_sum(static_cast<std::size_t>(bins), 0.0);
    double total = 0.0;
    int idx = 0;
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x, ++idx) {
        const double v = inten[static_cast<std::size_t>(y) * p.width + x];
        for (int b = 0; b < bins; ++b) {
          const double u = (v - (b + 0.5) * h) / h;
          const double w = std::exp(-0.5 * u * u);
          weight[static_cast<std::size_t>(idx) * bins + b] = w;
          bin_sum[static_cast<std::size_t>(b)] += w;
          total += w;
        }
      }
    }
    constexpr double kLn2 = 0.6931471805599453;
    double entropy = 0.0;
    double plogp = 0.0;  // Σ P_b ln P_b
    std::vector<double> lnp(static_cast<std::size_t>(bins), 0.0);
    for (int b = 0; b < bins; ++b) {
      const double pb = bin_sum[static_cast<std::size_t>(b)] / total;
      if (pb > 0.0) {
        lnp[static_cast<std::size_t>(b)] = std::log(pb);
        entropy -= pb * lnp[static_cast<std::size_t>(b)] / kLn2;
        plogp += pb * lnp[static_cast<std::size_t>(b)];
      }
    }
    if (dv) {
      idx = 0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x, ++idx) {
          const double v = inten[static_cast<std::size_t>(y) * p.width + x];
          double acc = 0.0;
          for (int b = 0; b < bins; ++b) {
            const double pb = bin_sum[static_cast<std::size_t>(b)] / total;
            if (pb <= 0.0) continue;
            const double dh_ds = (plogp - lnp[static_cast<std::size_t>(b)]) / (total * kLn2);
            const double w = weight[static_cast<std::size_t>(idx) * bins + b];
            const double ds_dv = w * ((b + 0.5) * h - v) / (h * h);
            acc += dh_ds * ds_dv;
          }
          (*dv)[static_cast<std::size_t>(idx)] = acc;
        }
      }
    }
    return entropy;
  }

  EntropyConfig cfg_;
};

inline std::unique_ptr<AdaptiveRegularizer> make_regularizer(RegularizerKind kind,
                                                             EntropyConfig entropy_cfg = {}) {
  switch (kind) {
    case RegularizerKind::None: return nullptr;
    case RegularizerKind::Tv: return std::make_unique<TvRegularizer>();
    case RegularizerKind::Entropy: return std::make_unique<SoftEntropyRegularizer>(entropy_cfg);
  }
  return nullptr;
}

/// Backward rule for hard (non-differentiable) stages: pass the gradient
/// through unchanged.
inline std::vector<double> straight_through_backward(std::vector<double> grad) { return grad; }

/// Runs localize+purify between stamping and detection. Backward either
/// passes gradients straight through or differentiates the purify stage
/// exactly, holding the localization mask fixed at its forward value.
class DefenseHook final : public ImageHook {
public:
  DefenseHook(const Defense& defense, GradientMode mode) : defense_(defense), mode_(mode) {}

  ImageBuffer forward(const ImageBuffer& stamped, Rng& rng) const override {
    DefenseOutput out = defense_.apply(stamped, rng);
    last_mask_ = std::move(out.mask);
    return std::move(out.purified);
  }

  std::vector<double> backward(const ImageBuffer& stamped, const ImageBuffer&,
                               const std::vector<double>& grad_processed) const override {
    if (mode_ == GradientMode::StraightThrough) return straight_through_backward(grad_processed);
    return exact_backward(defense_, stamped, last_mask_, grad_processed);
  }

  const BinaryMask& last_mask() const { return last_mask_; }

  /// d L / d input for purify(input, mask) with the mask held fixed.
  static std::vector<double> exact_backward(const Defense& defense, const ImageBuffer& x,
                                            const BinaryMask& mask,
                                            const std::vector<double>& grad) {
    if (dynamic_cast<const IdentityDefense*>(&defense)) return grad;
    if (const auto* dropout = dynamic_cast<const MaskDropoutDefense*>(&defense)) {
      return exact_backward(dropout->base(), x, mask, grad);
    }
    if (const auto* lgs = dynamic_cast<const LgsDefense*>(&defense)) {
      return lgs_backward(x, mask, lgs->config(), grad);
    }
    if (const auto* ent = dynamic_cast<const EntropyDefense*>(&defense)) {
      return erase_backward(x, mask, ent->fill(), grad);
    }
    throw InvalidConfigError("exact gradient unavailable for defense '" + defense.name() +
                             "'; use straight-through");
  }

private:
  static std::vector<double> lgs_backward(const ImageBuffer& x, const BinaryMask& mask,
                                          const LgsConfig& cfg, const std::vector<double>& grad) {
    std::vector<double> out(grad.size(), 0.0);
    const double keep = 1.0 - cfg.suppression;
    detail::for_each_tile(x.height, x.width, cfg.window, [&](int y0, int y1, int x0, int x1) {
      const double inv_n = 1.0 / ((y1 - y0) * (x1 - x0));
      double masked_sum[3] = {0.0, 0.0, 0.0};
      for (int y = y0; y < y1; ++y) {
        for (int xx = x0; xx < x1; ++xx) {
          const std::size_t k = (static_cast<std::size_t>(y) * x.width + xx) * 3;
          if (mask.get(y, xx)) {
            for (int c = 0; c < 3; ++c) masked_sum[c] += grad[k + c];
            for (int c = 0; c < 3; ++c) out[k + c] += keep * grad[k + c];
          } else {
            for (int c = 0; c < 3; ++c) out[k + c] += grad[k + c];
          }
        }
      }
      // Tile mean depends on every tile pixel; masked outputs carry weight
      // suppression on it.
      for (int y = y0; y < y1; ++y) {
        for (int xx = x0; xx < x1; ++xx) {
          const std::size_t k = (static_cast<std::size_t>(y) * x.width + xx) * 3;
          for (int c = 0; c < 3; ++c) out[k + c] += cfg.suppression * masked_sum[c] * inv_n;
        }
      }
    });
    return out;
  }

  static std::vector<double> erase_backward(const ImageBuffer& x, const BinaryMask& mask,
                                            FillPolicy fill, const std::vector<double>& grad) {
    std::vector<double> out(grad.size(), 0.0);
    const std::size_t npix = static_cast<std::size_t>(x.height) * x.width;
    for (std::size_t k = 0; k < npix; ++k) {
      const int y = static_cast<int>(k) / x.width, xx = static_cast<int>(k) % x.width;
      if (!mask.get(y, xx)) {
        for (int c = 0; c < 3; ++c) out[k * 3 + c] = grad[k * 3 + c];
      }
    }
    if (fill == FillPolicy::Black) return out;

    if (fill == FillPolicy::Mean) {
      double masked_sum[3] = {0.0, 0.0, 0.0};
      for (std::size_t k = 0; k < npix; ++k) {
        const int y = static_cast<int>(k) / x.width, xx = static_cast<int>(k) % x.width;
        if (!mask.get(y, xx)) continue;
        for (int c = 0; c < 3; ++c) masked_sum[c] += grad[k * 3 + c];
      }
      const double inv_all = 1.0 / static_cast<double>(npix);
      for (std::size_t k = 0; k < npix; ++k) {
        for (int c = 0; c < 3; ++c) out[k * 3 + c] += masked_sum[c] * inv_all;
      }
      return out;
    }

    int count = 0;
    const std::vector<int> labels = detail::label_components(mask, &count);
    for (int comp = 1; comp <= count; ++comp) {
      BinaryMask one(mask.height, mask.width);
      double comp_grad[3] = {0.0, 0.0, 0.0};
      for (int y = 0; y < mask.height; ++y) {
        for (int xx = 0; xx < mask.width; ++xx) {
          if (labels[static_cast<std::size_t>(y) * mask.width + xx] != comp) continue;
          one.set(y, xx, true);
          const std::size_t k = (static_cast<std::size_t>(y) * mask.width + xx) * 3;
          for (int c = 0; c < 3; ++c) comp_grad[c] += grad[k + c];
        }
      }
      const BinaryMask grown = dilate(one, 2);
      std::vector<std::size_t> ring;
      for (int y = 0; y < mask.height; ++y) {
        for (int xx = 0; xx < mask.width; ++xx) {
          if (grown.get(y, xx) && !mask.get(y, xx)) {
            ring.push_back(static_cast<std::size_t>(y) * mask.width + xx);
          }
        }
      }
      if (ring.empty()) {
        const double inv_all = 1.0 / static_cast<double>(npix);
        for (std::size_t k = 0; k < npix; ++k) {
          for (int c = 0; c < 3; ++c) out[k * 3 + c] += comp_grad[c] * inv_all;
        }
      } else {
        const double inv_ring = 1.0 / static_cast<double>(ring.size());
        for (std::size_t k : ring) {
          for (int c = 0; c < 3; ++c) out[k * 3 + c] += comp_grad[c] * inv_ring;
        }
      }
    }
    return out;
  }

  const Defense& defense_;
  GradientMode mode_;
  mutable BinaryMask last_mask_;
};

/// Full adaptive objective at one seed: EOT attack term through the defense,
/// plus TV, plus μ times the bypass regularizer. With the identity defense and
/// μ = 0 this equals the base objective bit for bit.
inline double adaptive_loss(const CorpusItem& item, const Patch& patch, const Defense& defense,
                            const Detector& detector, const AdaptiveConfig& cfg,
                            std::uint64_t step_seed = 0) {
  cfg.validate();
  patch.validate();
  DefenseHook hook(defense, cfg.gradient_mode);
  Corpus one;
  one.push_back(item);
  const StepEval ev =
      attack_step_eval(one, detector, cfg.base, patch, step_seed, &hook, cfg.defense_draws);
  double total = ev.attack_loss + cfg.base.tv_weight * tv_loss(patch, cfg.base.tv_kind);
  if (auto reg = make_regularizer(cfg.regularizer)) {
    total += cfg.bypass_weight * reg->evaluate(patch);
  }
  if (!std::isfinite(total)) throw NumericError("adaptive_loss: non-finite value");
  return total;
}

struct BypassReport {
  std::string defense_name;
  double baseline_asr = 0.0;  // non-adaptive patch, evaluated after the defense
  double adaptive_asr = 0.0;
  int images = 0;
  double delta() const { return adaptive_asr - baseline_asr; }
};

struct AdaptiveResult {
  Patch patch;
  OptimizationTrace trace;
  BypassReport report;
};

namespace detail {

/// Stamp, defend, detect; paired evaluation uses the same eval_seed for every
/// patch so transform and defense draws match.
inline std::vector<EvalRecord> post_defense_records(const Corpus& corpus, const Detector& detector,
                                                    const Defense& defense, const Patch& patch,
                                                    const TransformSpec& spec,
                                                    std::uint64_t eval_seed,
                                                    const std::string& attack_name) {
  std::vector<EvalRecord> records;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Rng trng(derive_seed(eval_seed, "eval-transform", i));
    const ApplyResult ar = apply_to_persons(corpus[i].image, patch, spec, corpus[i].gt, trng);
    Rng drng(derive_seed(eval_seed, "eval-defense", i));
    const DefenseOutput def = defense.apply(ar.image, drng);
    EvalRecord rec;
    rec.image_id = corpus[i].image.id;
    rec.attack_name = attack_name;
    rec.defense_name = defense.name();
    rec.detector_name = detector.name();
    rec.detections = detector.detect(def.purified);
    rec.gt = corpus[i].gt;
    rec.pred_mask = def.mask;
    rec.gt_mask = ar.mask;
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace detail

/// Optimizes a patch through the defense and reports post-defense ASR against
/// the non-adaptive baseline trained from the same initialization.
inline AdaptiveResult run_adaptive_attack(const Corpus& corpus, const Detector& detector,
                                          const Defense& defense, const AdaptiveConfig& cfg,
                                          const Patch& init) {
  cfg.validate();

  auto [baseline_patch, baseline_trace] = optimize_patch(corpus, detector, cfg.base, init);
  (void)baseline_trace;

  DefenseHook hook(defense, cfg.gradient_mode);
  const std::unique_ptr<AdaptiveRegularizer> reg = make_regularizer(cfg.regularizer);
  ExtraObjective extra;
  if (reg) {
    extra.weight = cfg.bypass_weight;
    extra.eval = [&reg](const Patch& p, std::vector<double>& grad_accum, double weight) {
      const std::vector<double> g = reg->gradient(p);
      for (std::size_t k = 0; k < grad_accum.size(); ++k) grad_accum[k] += weight * g[k];
      return weight * reg->evaluate(p);
    };
  }
  auto [adaptive_patch, adaptive_trace] =
      optimize_patch(corpus, detector, cfg.base, init, &hook,
                     extra.weight != 0.0 ? &extra : nullptr, cfg.defense_draws);

  const std::uint64_t eval_seed = derive_seed(cfg.base.seed, "bypass-eval", 0);
  BypassReport report;
  report.defense_name = defense.name();
  report.images = static_cast<int>(corpus.size());
  report.baseline_asr = asr(detail::post_defense_records(corpus, detector, defense, baseline_patch,
                                                         cfg.base.transform, eval_seed, "baseline"));
  report.adaptive_asr = asr(detail::post_defense_records(corpus, detector, defense, adaptive_patch,
                                                         cfg.base.transform, eval_seed, "adaptive"));
  return {std::move(adaptive_patch), std::move(adaptive_trace), std::move(report)};
}

}  // namespace patchbench
