#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "patchbench/core.hpp"
#include "patchbench/rng.hpp"

namespace patchbench {

/// Components smaller than this are dropped by every localizer, so mask
/// metrics compare defenses on equal footing.
inline constexpr int kMinComponentArea = 16;

struct DefenseOutput {
  BinaryMask mask;
  ImageBuffer purified;
};

/// Localize-then-purify contract. Purify must leave pixels outside the mask
/// untouched, exactly. Stateless implementations are safe to share across
/// threads; stochastic ones draw only from the rng handed in.
class Defense {
public:
  virtual ~Defense() = default;
  virtual std::string name() const = 0;
  virtual bool differentiable() const { return false; }
  virtual bool stochastic() const { return false; }
  virtual BinaryMask localize(const ImageBuffer& x, Rng& rng) const = 0;
  virtual ImageBuffer purify(const ImageBuffer& x, const BinaryMask& mask) const = 0;

  DefenseOutput apply(const ImageBuffer& x, Rng& rng) const {
    BinaryMask m = localize(x, rng);
    ImageBuffer p = purify(x, m);
    return {std::move(m), std::move(p)};
  }
};

class IdentityDefense final : public Defense {
public:
  std::string name() const override { return "identity"; }
  bool differentiable() const override { return true; }
  BinaryMask localize(const ImageBuffer& x, Rng&) const override {
    return BinaryMask(x.height, x.width);
  }
  ImageBuffer purify(const ImageBuffer& x, const BinaryMask& mask) const override {
    if (!mask.same_shape(x)) throw InvalidInputError("purify: mask shape mismatch");
    return x;
  }
};

namespace detail {

inline void shape_check(const ImageBuffer& x, const BinaryMask& mask, const char* who) {
  if (!mask.same_shape(x)) throw InvalidInputError(std::string(who) + ": mask shape mismatch");
}

/// 8-connected component labels; 0 = background, components numbered from 1.
inline std::vector<int> label_components(const BinaryMask& m, int* count_out = nullptr) {
  std::vector<int> labels(static_cast<std::size_t>(m.height) * m.width, 0);
  int next = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.get(y, x) || labels[static_cast<std::size_t>(y) * m.width + x] != 0) continue;
      ++next;
      stack.push_back({y, x});
      labels[static_cast<std::size_t>(y) * m.width + x] = next;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
            std::size_t k = static_cast<std::size_t>(ny) * m.width + nx;
            if (m.get(ny, nx) && labels[k] == 0) {
              labels[k] = next;
              stack.push_back({ny, nx});
            }
          }
        }
      }
    }
  }
  if (count_out) *count_out = next;
  return labels;
}

}  // namespace detail

/// Removes 8-connected components with fewer than min_area pixels.
inline BinaryMask drop_small_components(const BinaryMask& m, int min_area = kMinComponentArea) {
  int count = 0;
  const std::vector<int> labels = detail::label_components(m, &count);
  std::vector<long long> areas(static_cast<std::size_t>(count) + 1, 0);
  for (int l : labels) ++areas[static_cast<std::size_t>(l)];
  BinaryMask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const int l = labels[static_cast<std::size_t>(y) * m.width + x];
      if (l > 0 && areas[static_cast<std::size_t>(l)] >= min_area) out.set(y, x, true);
    }
  }
  return out;
}

inline BinaryMask dilate(const BinaryMask& m, int rounds) {
  BinaryMask cur = m;
  for (int r = 0; r < rounds; ++r) {
    BinaryMask next = cur;
    for (int y = 0; y < cur.height; ++y) {
      for (int x = 0; x < cur.width; ++x) {
        if (cur.get(y, x)) continue;
        bool on = false;
        for (int dy = -1; dy <= 1 && !on; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny >= 0 && ny < cur.height && nx >= 0 && nx < cur.width && cur.get(ny, nx)) {
              on = true;
              break;
            }
          }
        }
        if (on) next.set(y, x, true);
      }
    }
    cur = std::move(next);
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Local gradient smoothing

struct LgsConfig {
  int window = 8;
  // Sits between the tile gradient of the textured toy person (0.25) and that
  // of a saturated adversarial texture (0.5+), so localization separates them.
  double gradient_threshold = 0.35;
  double suppression = 0.8;  // in [0,1]; 1 flattens masked tiles to their mean

  void validate() const {
    if (window < 2) throw InvalidConfigError("LgsConfig: window must be >= 2");
    if (suppression < 0.0 || suppression > 1.0) {
      throw InvalidConfigError("LgsConfig: suppression in [0,1]");
    }
    if (gradient_threshold < 0.0) throw InvalidConfigError("LgsConfig: negative threshold");
  }
};

namespace detail {

/// First-difference gradient magnitude |dh| + |dv| averaged over channels.
/// Per-channel differences are taken before the average; a patch whose channel
/// contrasts cancel in intensity still registers.
inline std::vector<double> gradient_magnitude(const ImageBuffer& x) {
  std::vector<double> mag(static_cast<std::size_t>(x.height) * x.width, 0.0);
  for (int y = 0; y < x.height; ++y) {
    for (int xx = 0; xx < x.width; ++xx) {
      double sum = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double v = x.at(y, xx, c);
        if (xx + 1 < x.width) sum += std::abs(x.at(y, xx + 1, c) - v);
        if (y + 1 < x.height) sum += std::abs(x.at(y + 1, xx, c) - v);
      }
      mag[static_cast<std::size_t>(y) * x.width + xx] = sum / 3.0;
    }
  }
  return mag;
}

/// Visits the image as non-overlapping window×window tiles (edge tiles may be
/// smaller). fn(y0, y1, x0, x1) with half-open bounds.
template <typename Fn>
void for_each_tile(int height, int width, int window, Fn&& fn) {
  for (int y0 = 0; y0 < height; y0 += window) {
    const int y1 = std::min(height, y0 + window);
    for (int x0 = 0; x0 < width; x0 += window) {
      fn(y0, y1, x0, std::min(width, x0 + window));
    }
  }
}

}  // namespace detail

/// Tiles whose mean first-difference gradient magnitude exceeds the threshold.
inline BinaryMask lgs_localize(const ImageBuffer& x, const LgsConfig& cfg) {
  cfg.validate();
  const std::vector<double> mag = detail::gradient_magnitude(x);
  BinaryMask mask(x.height, x.width);
  detail::for_each_tile(x.height, x.width, cfg.window, [&](int y0, int y1, int x0, int x1) {
    double sum = 0.0;
    for (int y = y0; y < y1; ++y) {
      for (int xx = x0; xx < x1; ++xx) sum += mag[static_cast<std::size_t>(y) * x.width + xx];
    }
    if (sum / ((y1 - y0) * (x1 - x0)) > cfg.gradient_threshold) {
      for (int y = y0; y < y1; ++y) {
        for (int xx = x0; xx < x1; ++xx) mask.set(y, xx, true);
      }
    }
  });
  return drop_small_components(mask);
}

/// Pulls masked pixels toward their tile mean: p' = m + (1 - suppression)(p - m).
inline ImageBuffer lgs_purify(const ImageBuffer& x, const BinaryMask& mask, const LgsConfig& cfg) {
  cfg.validate();
  detail::shape_check(x, mask, "lgs_purify");
  ImageBuffer out = x;
  detail::for_each_tile(x.height, x.width, cfg.window, [&](int y0, int y1, int x0, int x1) {
    double mean[3] = {0.0, 0.0, 0.0};
    const double inv = 1.0 / ((y1 - y0) * (x1 - x0));
    for (int y = y0; y < y1; ++y) {
      for (int xx = x0; xx < x1; ++xx) {
        for (int c = 0; c < 3; ++c) mean[c] += x.at(y, xx, c);
      }
    }
    for (int c = 0; c < 3; ++c) mean[c] *= inv;
    for (int y = y0; y < y1; ++y) {
      for (int xx = x0; xx < x1; ++xx) {
        if (!mask.get(y, xx)) continue;
        for (int c = 0; c < 3; ++c) {
          out.at(y, xx, c) = mean[c] + (1.0 - cfg.suppression) * (x.at(y, xx, c) - mean[c]);
        }
      }
    }
  });
  return out;
}

class LgsDefense final : public Defense {
public:
  explicit LgsDefense(LgsConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }
  std::string name() const override { return "lgs"; }
  bool differentiable() const override { return true; }  // purify affine given the mask
  BinaryMask localize(const ImageBuffer& x, Rng&) const override { return lgs_localize(x, cfg_); }
  ImageBuffer purify(const ImageBuffer& x, const BinaryMask& mask) const override {
    return lgs_purify(x, mask, cfg_);
  }
  const LgsConfig& config() const { return cfg_; }

private:
  LgsConfig cfg_;
};

// ---------------------------------------------------------------------------
// Entropy localization and erasure

struct EntropyConfig {
  int window = 8;
  int bins = 8;
  double entropy_threshold = 1.5;  // bits

  void validate() const {
    if (window < 2) throw InvalidConfigError("EntropyConfig: window must be >= 2");
    if (bins < 2) throw InvalidConfigError("EntropyConfig: bins must be >= 2");
  }
};

namespace detail {

inline double histogram_entropy_bits(const std::vector<long long>& counts, long long total) {
  double h = 0.0;
  for (long long c : counts) {
    if (c <= 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

}  // namespace detail

/// Tiles whose intensity-histogram entropy exceeds the threshold, small
/// components dropped.
inline BinaryMask entropy_localize(const ImageBuffer& x, const EntropyConfig& cfg) {
  cfg.validate();
  const std::vector<double> inten = x.intensity();
  BinaryMask mask(x.height, x.width);
  std::vector<long long> counts(static_cast<std::size_t>(cfg.bins), 0);
  detail::for_each_tile(x.height, x.width, cfg.window, [&](int y0, int y1, int x0, int x1) {
    std::fill(counts.begin(), counts.end(), 0);
    for (int y = y0; y < y1; ++y) {
      for (int xx = x0; xx < x1; ++xx) {
        const double v = inten[static_cast<std::size_t>(y) * x.width + xx];
        int b = static_cast<int>(v * cfg.bins);
        b = std::clamp(b, 0, cfg.bins - 1);
        ++counts[static_cast<std::size_t>(b)];
      }
    }
    const long long total = static_cast<long long>(y1 - y0) * (x1 - x0);
    if (detail::histogram_entropy_bits(counts, total) > cfg.entropy_threshold) {
      for (int y = y0; y < y1; ++y) {
        for (int xx = x0; xx < x1; ++xx) mask.set(y, xx, true);
      }
    }
  });
  return drop_small_components(mask);
}

enum class FillPolicy { Black, Mean, BorderMean };

inline FillPolicy fill_policy_from_string(const std::string& s) {
  if (s == "black") return FillPolicy::Black;
  if (s == "mean") return FillPolicy::Mean;
  if (s == "border-mean") return FillPolicy::BorderMean;
  throw InvalidConfigError("unknown fill policy: " + s);
}

/// Replaces masked pixels. black: zeros. mean: global per-channel image mean.
/// border-mean: per component, the mean over a 2-pixel ring just outside it
/// (whole-image mean when the ring is empty).
inline ImageBuffer erase(const ImageBuffer& x, const BinaryMask& mask, FillPolicy fill) {
  detail::shape_check(x, mask, "erase");
  ImageBuffer out = x;
  if (fill == FillPolicy::Black) {
    for (int y = 0; y < x.height; ++y) {
      for (int xx = 0; xx < x.width; ++xx) {
        if (!mask.get(y, xx)) continue;
        for (int c = 0; c < 3; ++c) out.at(y, xx, c) = 0.0;
      }
    }
    return out;
  }

  double global[3] = {0.0, 0.0, 0.0};
  const double inv_all = 1.0 / (static_cast<double>(x.height) * x.width);
  for (int y = 0; y < x.height; ++y) {
    for (int xx = 0; xx < x.width; ++xx) {
      for (int c = 0; c < 3; ++c) global[c] += x.at(y, xx, c) * inv_all;
    }
  }

  if (fill == FillPolicy::Mean) {
    for (int y = 0; y < x.height; ++y) {
      for (int xx = 0; xx < x.width; ++xx) {
        if (!mask.get(y, xx)) continue;
        for (int c = 0; c < 3; ++c) out.at(y, xx, c) = global[c];
      }
    }
    return out;
  }

  int count = 0;
  const std::vector<int> labels = detail::label_components(mask, &count);
  for (int comp = 1; comp <= count; ++comp) {
    BinaryMask one(mask.height, mask.width);
    for (int y = 0; y < mask.height; ++y) {
      for (int xx = 0; xx < mask.width; ++xx) {
        if (labels[static_cast<std::size_t>(y) * mask.width + xx] == comp) one.set(y, xx, true);
      }
    }
    const BinaryMask grown = dilate(one, 2);
    double ring[3] = {0.0, 0.0, 0.0};
    long long n = 0;
    for (int y = 0; y < mask.height; ++y) {
      for (int xx = 0; xx < mask.width; ++xx) {
        if (!grown.get(y, xx) || mask.get(y, xx)) continue;
        for (int c = 0; c < 3; ++c) ring[c] += x.at(y, xx, c);
        ++n;
      }
    }
    double fillv[3];
    for (int c = 0; c < 3; ++c) fillv[c] = n > 0 ? ring[c] / n : global[c];
    for (int y = 0; y < mask.height; ++y) {
      for (int xx = 0; xx < mask.width; ++xx) {
        if (labels[static_cast<std::size_t>(y) * mask.width + xx] != comp) continue;
        for (int c = 0; c < 3; ++c) out.at(y, xx, c) = fillv[c];
      }
    }
  }
  return out;
}

class EntropyDefense final : public Defense {
public:
  explicit EntropyDefense(EntropyConfig cfg = {}, FillPolicy fill = FillPolicy::BorderMean)
      : cfg_(cfg), fill_(fill) {
    cfg_.validate();
  }
  std::string name() const override {
    switch (fill_) {
      case FillPolicy::Black: return "entropy-erase-black";
      case FillPolicy::Mean: return "entropy-erase-mean";
      case FillPolicy::BorderMean: return "entropy";
    }
    return "entropy";
  }
  BinaryMask localize(const ImageBuffer& x, Rng&) const override {
    return entropy_localize(x, cfg_);
  }
  ImageBuffer purify(const ImageBuffer& x, const BinaryMask& mask) const override {
    detail::shape_check(x, mask, "entropy purify");
    return erase(x, mask, fill_);
  }
  const EntropyConfig& config() const { return cfg_; }
  FillPolicy fill() const { return fill_; }

private:
  EntropyConfig cfg_;
  FillPolicy fill_;
};

/// Wraps a defense, dropping each mask pixel independently with probability p.
/// Models defenses whose localization is randomized.
class MaskDropoutDefense final : public Defense {
public:
  MaskDropoutDefense(std::shared_ptr<const Defense> base, double drop_prob)
      : base_(std::move(base)), drop_prob_(drop_prob) {
    if (!base_) throw InvalidConfigError("MaskDropoutDefense: null base");
    if (drop_prob_ < 0.0 || drop_prob_ > 1.0) {
      throw InvalidConfigError("MaskDropoutDefense: drop probability in [0,1]");
    }
  }
  std::string name() const override { return base_->name() + "+dropout"; }
  bool stochastic() const override { return true; }
  bool differentiable() const override { return base_->differentiable(); }
  BinaryMask localize(const ImageBuffer& x, Rng& rng) const override {
    BinaryMask m = base_->localize(x, rng);
    BinaryMask out(m.height, m.width);
    for (int y = 0; y < m.height; ++y) {
      for (int xx = 0; xx < m.width; ++xx) {
        if (m.get(y, xx) && rng.uniform() >= drop_prob_) out.set(y, xx, true);
      }
    }
    return out;
  }
  ImageBuffer purify(const ImageBuffer& x, const BinaryMask& mask) const override {
    return base_->purify(x, mask);
  }
  const Defense& base() const { return *base_; }

private:
  std::shared_ptr<const Defense> base_;
  double drop_prob_;
};

/// Checks the defense contract on probe images: purify locality (exact), mask
/// shape, and determinism for non-stochastic defenses.
inline std::vector<std::string> check_defense_conformance(const Defense& d,
                                                          const std::vector<ImageBuffer>& probes,
                                                          std::uint64_t seed = 0) {
  std::vector<std::string> violations;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const ImageBuffer& x = probes[i];
    Rng rng(derive_seed(seed, "conformance", i));
    const BinaryMask mask = d.localize(x, rng);
    if (!mask.same_shape(x)) {
      violations.push_back("probe " + std::to_string(i) + ": mask shape mismatch");
      continue;
    }
    const ImageBuffer purified = d.purify(x, mask);
    if (!purified.same_shape(x)) {
      violations.push_back("probe " + std::to_string(i) + ": purified shape mismatch");
      continue;
    }
    for (int y = 0; y < x.height; ++y) {
      for (int xx = 0; xx < x.width; ++xx) {
        if (mask.get(y, xx)) continue;
        for (int c = 0; c < 3; ++c) {
          if (purified.at(y, xx, c) != x.at(y, xx, c)) {
            violations.push_back("probe " + std::to_string(i) + ": purify touched unmasked pixel (" +
                                 std::to_string(y) + "," + std::to_string(xx) + ")");
            y = x.height;
            xx = x.width;
            break;
          }
        }
      }
    }
    if (!d.stochastic()) {
      Rng rng2(derive_seed(seed, "conformance", i));
      const BinaryMask again = d.localize(x, rng2);
      if (again.bits != mask.bits) {
        violations.push_back("probe " + std::to_string(i) + ": localization not deterministic");
      }
    }
  }
  return violations;
}

}  // namespace patchbench
