#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "patchbench/applier.hpp"
#include "patchbench/core.hpp"
#include "patchbench/detector.hpp"
#include "patchbench/rng.hpp"

namespace patchbench {

enum class LossMode { MaxObjectness, MeanObjectness, TargetClass };
enum class OptimizerKind { SignGd, Gd };
enum class TvKind { Anisotropic, Isotropic };

inline LossMode loss_mode_from_string(const std::string& s) {
  if (s == "max" || s == "max-objectness") return LossMode::MaxObjectness;
  if (s == "mean" || s == "mean-objectness") return LossMode::MeanObjectness;
  if (s == "target-class") return LossMode::TargetClass;
  throw InvalidConfigError("unknown loss mode: " + s);
}

struct AttackConfig {
  Goal goal = Goal::Hiding;
  LossMode loss_mode = LossMode::MaxObjectness;
  double tv_weight = 0.0;  // λ
  int steps = 100;
  double learning_rate = 0.03;
  int eot_samples = 1;
  std::uint64_t seed = 0;
  TransformSpec transform;
  OptimizerKind optimizer = OptimizerKind::SignGd;
  double lr_decay = 1.0;  // per-step multiplier on the learning rate
  TvKind tv_kind = TvKind::Anisotropic;
  int target_class = kPersonClass;           // appearing goal
  std::optional<BoundingBox> target_region;  // appearing goal

  void validate() const {
    if (steps < 1) throw InvalidConfigError("AttackConfig: steps must be >= 1");
    if (learning_rate <= 0.0) throw InvalidConfigError("AttackConfig: learning_rate must be > 0");
    if (eot_samples < 1) throw InvalidConfigError("AttackConfig: eot_samples must be >= 1");
    if (tv_weight < 0.0) throw InvalidConfigError("AttackConfig: tv_weight must be >= 0");
    if (lr_decay <= 0.0 || lr_decay > 1.0) throw InvalidConfigError("AttackConfig: lr_decay in (0,1]");
    if (goal == Goal::Appearing && !target_region) {
      throw InvalidConfigError("AttackConfig: appearing goal needs a target region");
    }
    transform.validate();
  }
};

struct OptimizationTrace {
  std::vector<double> total_loss;
  std::vector<double> attack_loss;
  std::vector<double> tv_loss;
  std::vector<double> extra_loss;  // defense-bypass term, when present
};

/// Total variation over neighbor pairs that lie inside the shape mask.
/// Anisotropic: sum |dh| + |dv|. Isotropic: sum sqrt(dh^2 + dv^2) with the
/// horizontal/vertical differences paired per pixel.
inline double tv_loss(const Patch& p, TvKind kind = TvKind::Anisotropic) {
  double total = 0.0;
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      if (!p.in_shape(y, x)) continue;
      const bool has_r = x + 1 < p.width && p.in_shape(y, x + 1);
      const bool has_d = y + 1 < p.height && p.in_shape(y + 1, x);
      for (int c = 0; c < 3; ++c) {
        const double dh = has_r ? p.at(y, x + 1, c) - p.at(y, x, c) : 0.0;
        const double dv = has_d ? p.at(y + 1, x, c) - p.at(y, x, c) : 0.0;
        if (kind == TvKind::Anisotropic) {
          total += std::abs(dh) + std::abs(dv);
        } else {
          total += std::sqrt(dh * dh + dv * dv);
        }
      }
    }
  }
  return total;
}

inline std::pair<double, std::vector<double>> tv_loss_grad(const Patch& p,
                                                           TvKind kind = TvKind::Anisotropic) {
  std::vector<double> grad(p.pixels.size(), 0.0);
  double total = 0.0;
  auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      if (!p.in_shape(y, x)) continue;
      const bool has_r = x + 1 < p.width && p.in_shape(y, x + 1);
      const bool has_d = y + 1 < p.height && p.in_shape(y + 1, x);
      for (int c = 0; c < 3; ++c) {
        const double dh = has_r ? p.at(y, x + 1, c) - p.at(y, x, c) : 0.0;
        const double dv = has_d ? p.at(y + 1, x, c) - p.at(y, x, c) : 0.0;
        const std::size_t i = (static_cast<std::size_t>(y) * p.width + x) * 3 + c;
        if (kind == TvKind::Anisotropic) {
          total += std::abs(dh) + std::abs(dv);
          if (has_r) {
            const double s = sgn(dh);
            grad[(static_cast<std::size_t>(y) * p.width + x + 1) * 3 + c] += s;
            grad[i] -= s;
          }
          if (has_d) {
            const double s = sgn(dv);
            grad[(static_cast<std::size_t>(y + 1) * p.width + x) * 3 + c] += s;
            grad[i] -= s;
          }
        } else {
          const double mag = std::sqrt(dh * dh + dv * dv);
          total += mag;
          if (mag > 1e-12) {
            if (has_r) {
              grad[(static_cast<std::size_t>(y) * p.width + x + 1) * 3 + c] += dh / mag;
              grad[i] -= dh / mag;
            }
            if (has_d) {
              grad[(static_cast<std::size_t>(y + 1) * p.width + x) * 3 + c] += dv / mag;
              grad[i] -= dv / mag;
            }
          }
        }
      }
    }
  }
  return {total, std::move(grad)};
}

/// A loss over detector candidates, parameterized so gradients can be pulled
/// through the per-candidate confidences.
struct CandidateLoss {
  double value = 0.0;
  bool nothing_to_suppress = false;
  std::vector<std::pair<int, double>> terms;  // (candidate index, d value / d confidence)
};

inline constexpr double kCandidateOverlapIou = 0.25;

/// Confidence of person candidates overlapping ground-truth persons; minimize
/// to suppress detection.
inline CandidateLoss hiding_loss(const std::vector<Candidate>& candidates,
                                 const GroundTruthSet& gt, LossMode mode) {
  std::vector<int> overlapping;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Candidate& c = candidates[i];
    if (c.box.class_id != kPersonClass) continue;
    for (const BoundingBox& g : gt.boxes) {
      if (g.class_id == kPersonClass && box_iou(c.box, g) >= kCandidateOverlapIou) {
        overlapping.push_back(static_cast<int>(i));
        break;
      }
    }
  }
  CandidateLoss out;
  if (overlapping.empty()) {
    out.nothing_to_suppress = true;
    return out;
  }
  if (mode == LossMode::MeanObjectness) {
    const double w = 1.0 / static_cast<double>(overlapping.size());
    for (int i : overlapping) {
      out.value += w * candidates[i].confidence;
      out.terms.emplace_back(i, w);
    }
  } else {
    int best = overlapping.front();
    for (int i : overlapping) {
      if (candidates[i].confidence > candidates[best].confidence) best = i;
    }
    out.value = candidates[best].confidence;
    out.terms.emplace_back(best, 1.0);
  }
  return out;
}

/// Negative confidence of the target class inside the target region; minimize
/// to make a phantom object appear.
inline CandidateLoss appearing_loss(const std::vector<Candidate>& candidates, int target_class,
                                    const BoundingBox& target_region) {
  int best = -1;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Candidate& c = candidates[i];
    if (c.box.class_id != target_class) continue;
    const double cx = c.box.center_x(), cy = c.box.center_y();
    if (cx < target_region.x_min || cx >= target_region.x_max || cy < target_region.y_min ||
        cy >= target_region.y_max) {
      continue;
    }
    if (best < 0 || c.confidence > candidates[best].confidence) best = static_cast<int>(i);
  }
  CandidateLoss out;
  if (best < 0) {
    out.nothing_to_suppress = true;
    return out;
  }
  out.value = -candidates[best].confidence;
  out.terms.emplace_back(best, -1.0);
  return out;
}

/// Optional stage between stamping and detection (the adaptive module routes
/// defenses through here). Backward receives the gradient w.r.t. the processed
/// image and must return the gradient w.r.t. the stamped image.
class ImageHook {
public:
  virtual ~ImageHook() = default;
  virtual ImageBuffer forward(const ImageBuffer& stamped, Rng& rng) const = 0;
  virtual std::vector<double> backward(const ImageBuffer& stamped, const ImageBuffer& processed,
                                       const std::vector<double>& grad_processed) const = 0;
};

/// Additive patch regularizer with its own gradient (the adaptive module's
/// bypass terms plug in here).
struct ExtraObjective {
  std::function<double(const Patch&, std::vector<double>& grad_accum, double weight)> eval;
  double weight = 0.0;
};

struct StepEval {
  double attack_loss = 0.0;
  std::vector<double> grad;  // w.r.t. patch pixels
  int nothing_to_suppress = 0;
};

/// One EOT estimate of the attack term and its patch gradient at a fixed
/// patch. Deterministic given step_seed. hook_draws > 1 averages over the
/// hook's own randomness (stochastic defenses) at a fixed transform.
inline StepEval attack_step_eval(const Corpus& corpus, const Detector& detector,
                                 const AttackConfig& cfg, const Patch& patch,
                                 std::uint64_t step_seed, const ImageHook* hook = nullptr,
                                 int hook_draws = 1) {
  if (hook_draws < 1) throw InvalidConfigError("attack_step_eval: hook_draws must be >= 1");
  StepEval ev;
  ev.grad.assign(patch.pixels.size(), 0.0);
  int samples = 0;
  const int draws = hook ? hook_draws : 1;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (int e = 0; e < cfg.eot_samples; ++e) {
      Rng rng(derive_seed(step_seed, "transform", i * 7919ULL + static_cast<std::uint64_t>(e)));
      ApplyResult ar;
      if (cfg.goal == Goal::Hiding) {
        ar = apply_to_persons(corpus[i].image, patch, cfg.transform, corpus[i].gt, rng);
      } else {
        const ConcreteTransform t = sample_transform(cfg.transform, rng);
        ar = apply_patch(corpus[i].image, patch, t,
                         Placement::fixed(cfg.target_region->center_x(),
                                          cfg.target_region->center_y()));
      }

      for (int d = 0; d < draws; ++d) {
        Rng defense_rng(derive_seed(step_seed, "defense",
                                    (i * 7919ULL + static_cast<std::uint64_t>(e)) * 8191ULL +
                                        static_cast<std::uint64_t>(d)));
        const ImageBuffer* eval_image = &ar.image;
        ImageBuffer processed;
        if (hook) {
          processed = hook->forward(ar.image, defense_rng);
          eval_image = &processed;
        }

        const std::vector<Candidate> candidates = detector.confidence_field(*eval_image);
        CandidateLoss loss;
        if (cfg.goal == Goal::Hiding) {
          loss = hiding_loss(candidates, corpus[i].gt, cfg.loss_mode);
        } else {
          loss = appearing_loss(candidates, cfg.target_class, *cfg.target_region);
        }
        ev.attack_loss += loss.value;
        ev.nothing_to_suppress += loss.nothing_to_suppress ? 1 : 0;
        ++samples;

        for (const auto& [ci, w] : loss.terms) {
          std::vector<double> gimg = detector.confidence_gradient(*eval_image, candidates[ci]);
          if (hook) gimg = hook->backward(ar.image, *eval_image, gimg);
          const std::vector<double> gpatch = applier_backward(ar, patch, gimg);
          for (std::size_t k = 0; k < ev.grad.size(); ++k) ev.grad[k] += w * gpatch[k];
        }
      }
    }
  }
  if (samples > 0) {
    const double inv = 1.0 / static_cast<double>(samples);
    ev.attack_loss *= inv;
    for (double& g : ev.grad) g *= inv;
  }
  return ev;
}

/// Iterative first-order descent on the EOT attack objective plus TV
/// regularization, patch projected to [0,1] after every step.
inline std::pair<Patch, OptimizationTrace> optimize_patch(const Corpus& corpus,
                                                          const Detector& detector,
                                                          const AttackConfig& cfg,
                                                          const Patch& init,
                                                          const ImageHook* hook = nullptr,
                                                          const ExtraObjective* extra = nullptr,
                                                          int hook_draws = 1) {
  cfg.validate();
  init.validate();
  if (corpus.empty()) throw InvalidInputError("optimize_patch: empty corpus");

  Patch patch = init;
  OptimizationTrace trace;
  double lr = cfg.learning_rate;
  auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };

  for (int step = 0; step < cfg.steps; ++step) {
    const std::uint64_t step_seed = derive_seed(cfg.seed, "step", static_cast<std::uint64_t>(step));
    StepEval ev = attack_step_eval(corpus, detector, cfg, patch, step_seed, hook, hook_draws);
    auto [tv_val, tv_grad] = tv_loss_grad(patch, cfg.tv_kind);

    double extra_val = 0.0;
    std::vector<double> total_grad = std::move(ev.grad);
    for (std::size_t k = 0; k < total_grad.size(); ++k) total_grad[k] += cfg.tv_weight * tv_grad[k];
    if (extra && extra->weight != 0.0) {
      extra_val = extra->eval(patch, total_grad, extra->weight);
    }
    const double total = ev.attack_loss + cfg.tv_weight * tv_val + extra_val;

    if (!std::isfinite(total)) {
      throw NumericError("optimize_patch: non-finite loss at step " + std::to_string(step));
    }
    for (double g : total_grad) {
      if (!std::isfinite(g)) {
        throw NumericError("optimize_patch: non-finite gradient at step " + std::to_string(step));
      }
    }

    for (int y = 0; y < patch.height; ++y) {
      for (int x = 0; x < patch.width; ++x) {
        if (!patch.in_shape(y, x)) continue;
        for (int c = 0; c < 3; ++c) {
          const std::size_t k = (static_cast<std::size_t>(y) * patch.width + x) * 3 + c;
          const double delta = (cfg.optimizer == OptimizerKind::SignGd)
                                   ? lr * sgn(total_grad[k])
                                   : lr * total_grad[k];
          patch.pixels[k] = std::clamp(patch.pixels[k] - delta, 0.0, 1.0);
        }
      }
    }

    trace.total_loss.push_back(total);
    trace.attack_loss.push_back(ev.attack_loss);
    trace.tv_loss.push_back(tv_val);
    trace.extra_loss.push_back(extra_val);
    lr *= cfg.lr_decay;
  }
  return {std::move(patch), std::move(trace)};
}

}  // namespace patchbench
