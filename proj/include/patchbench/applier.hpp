#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "patchbench/core.hpp"
#include "patchbench/rng.hpp"

namespace patchbench {

enum class Goal { Hiding, Appearing };

inline const char* to_string(Goal g) {
  return g == Goal::Hiding ? "hiding" : "appearing";
}

inline Goal goal_from_string(const std::string& s) {
  if (s == "hiding") return Goal::Hiding;
  if (s == "appearing") return Goal::Appearing;
  throw InvalidConfigError("unknown goal: " + s);
}

struct PatchMeta {
  std::string attack_name;
  std::string victim_detector;
  Goal goal = Goal::Hiding;
};

/// Trainable patch: h x w x 3 pixels in [0,1] plus a shape mask that supports
/// non-rectangular patches.
struct Patch {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
  std::vector<std::uint8_t> shape_mask;
  PatchMeta meta;

  Patch() = default;

  Patch(int h, int w, double fill = 0.5) : height(h), width(w) {
    if (h <= 0 || w <= 0) throw InvalidInputError("Patch: dimensions must be positive");
    pixels.assign(static_cast<std::size_t>(h) * w * 3, fill);
    shape_mask.assign(static_cast<std::size_t>(h) * w, 1);
  }

  double& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool in_shape(int y, int x) const {
    return shape_mask[static_cast<std::size_t>(y) * width + x] != 0;
  }

  long long shape_area() const {
    long long n = 0;
    for (std::uint8_t b : shape_mask) n += (b != 0);
    return n;
  }

  void validate() const {
    if (height <= 0 || width <= 0) throw InvalidInputError("Patch: empty");
    if (shape_area() == 0) throw InvalidInputError("Patch: shape mask is empty");
    for (double v : pixels) {
      if (v < 0.0 || v > 1.0) throw InvalidInputError("Patch: pixel outside [0,1]");
    }
  }

  static Patch uniform_random(int h, int w, Rng& rng) {
    Patch p(h, w);
    for (double& v : p.pixels) v = rng.uniform();
    return p;
  }

  /// Disc-shaped mask inscribed in the patch rectangle.
  void make_circular() {
    const double cy = height / 2.0, cx = width / 2.0;
    const double r = std::min(cy, cx);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        shape_mask[static_cast<std::size_t>(y) * width + x] = (dy * dy + dx * dx <= r * r) ? 1 : 0;
      }
    }
  }
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  Range() = default;
  Range(double l, double h) : lo(l), hi(h) {}
  static Range fixed(double v) { return Range(v, v); }
  bool empty() const { return lo > hi; }
};

/// Sampling ranges for the applier transformations t.
struct TransformSpec {
  Range rotation_deg = Range::fixed(0.0);
  Range scale_ratio = Range::fixed(0.2);  // patch area / target box area
  Range jitter = Range::fixed(0.0);       // translation, pixels
  Range brightness = Range::fixed(1.0);   // multiplicative
  std::uint64_t seed = 0;

  void validate() const {
    if (rotation_deg.empty() || scale_ratio.empty() || jitter.empty() || brightness.empty()) {
      throw InvalidConfigError("TransformSpec: empty range");
    }
    if (scale_ratio.lo <= 0.0 || scale_ratio.hi > 1.0) {
      throw InvalidConfigError("TransformSpec: scale_ratio must lie in (0,1]");
    }
    if (brightness.lo <= 0.0) {
      throw InvalidConfigError("TransformSpec: brightness must be positive");
    }
  }
};

struct ConcreteTransform {
  double rotation_deg = 0.0;
  double scale_ratio = 0.2;
  double jitter_x = 0.0;
  double jitter_y = 0.0;
  double brightness = 1.0;
};

inline ConcreteTransform sample_transform(const TransformSpec& spec, Rng& rng) {
  spec.validate();
  ConcreteTransform t;
  t.rotation_deg = rng.uniform(spec.rotation_deg.lo, spec.rotation_deg.hi);
  t.scale_ratio = rng.uniform(spec.scale_ratio.lo, spec.scale_ratio.hi);
  t.jitter_x = rng.uniform(spec.jitter.lo, spec.jitter.hi);
  t.jitter_y = rng.uniform(spec.jitter.lo, spec.jitter.hi);
  t.brightness = rng.uniform(spec.brightness.lo, spec.brightness.hi);
  return t;
}

struct Placement {
  enum class Anchor { CenterOfBox, Fixed, FullImage };
  Anchor anchor = Anchor::CenterOfBox;
  std::optional<BoundingBox> target_box;  // required for CenterOfBox
  double x = 0.0;                         // stamp center for Fixed
  double y = 0.0;

  static Placement center_of(const BoundingBox& box) {
    Placement p;
    p.anchor = Anchor::CenterOfBox;
    p.target_box = box;
    return p;
  }
  static Placement fixed(double cx, double cy) {
    Placement p;
    p.anchor = Anchor::Fixed;
    p.x = cx;
    p.y = cy;
    return p;
  }
  static Placement full_image() {
    Placement p;
    p.anchor = Anchor::FullImage;
    return p;
  }
};

/// One stamped output pixel: the bilinear taps into patch cells plus what is
/// needed to push gradients back through the interpolation.
struct StampPixel {
  std::int32_t out_index = -1;  // y*W + x
  std::int32_t cell[4] = {-1, -1, -1, -1};
  double weight[4] = {0, 0, 0, 0};
  double brightness = 1.0;
  bool clamped[3] = {false, false, false};
};

/// One stamp as recorded for manifests: which ground-truth box anchored it
/// (-1 when placement was not box-anchored) and the concrete transform drawn.
struct StampRecord {
  int box_index = -1;
  ConcreteTransform transform;
};

struct ApplyResult {
  ImageBuffer image;
  BinaryMask mask;
  std::vector<StampPixel> stamped;  // final owner per masked pixel
  std::vector<StampRecord> stamps;
};

namespace detail {

// Exact values at multiples of 90 degrees so axis-aligned stamps stay on the
// pixel grid.
inline void rotation_sincos(double deg, double& s, double& c) {
  double m = std::fmod(deg, 360.0);
  if (m < 0) m += 360.0;
  if (m == 0.0) {
    s = 0.0; c = 1.0;
  } else if (m == 90.0) {
    s = 1.0; c = 0.0;
  } else if (m == 180.0) {
    s = 0.0; c = -1.0;
  } else if (m == 270.0) {
    s = -1.0; c = 0.0;
  } else {
    const double rad = deg * 3.14159265358979323846 / 180.0;
    s = std::sin(rad);
    c = std::cos(rad);
  }
}

inline void stamp_one(ImageBuffer& out, BinaryMask& mask, std::vector<StampPixel>& stamped,
                      std::vector<std::int32_t>& owner, const Patch& p,
                      const ConcreteTransform& t, double cx, double cy, double ref_area) {
  const double patch_cells = static_cast<double>(p.height) * p.width;
  const double scale = std::sqrt(t.scale_ratio * ref_area / patch_cells);
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw InvalidInputError("apply_patch: degenerate scale");
  }
  double sin_t, cos_t;
  rotation_sincos(t.rotation_deg, sin_t, cos_t);

  const double half_w = 0.5 * p.width * scale;
  const double half_h = 0.5 * p.height * scale;
  // bounding box of the rotated rectangle
  const double ext_x = std::abs(cos_t) * half_w + std::abs(sin_t) * half_h;
  const double ext_y = std::abs(sin_t) * half_w + std::abs(cos_t) * half_h;
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - ext_x)));
  const int x1 = std::min(out.width - 1, static_cast<int>(std::ceil(cx + ext_x)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ext_y)));
  const int y1 = std::min(out.height - 1, static_cast<int>(std::ceil(cy + ext_y)));

  const double pcx = 0.5 * p.width;
  const double pcy = 0.5 * p.height;

  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5) - cx;
      const double dy = (y + 0.5) - cy;
      // inverse rotation, then unscale into patch-local coordinates
      const double lx = (cos_t * dx + sin_t * dy) / scale + pcx;
      const double ly = (-sin_t * dx + cos_t * dy) / scale + pcy;
      if (lx < 0.0 || lx >= p.width || ly < 0.0 || ly >= p.height) continue;

      const int mx = std::min(static_cast<int>(lx), p.width - 1);
      const int my = std::min(static_cast<int>(ly), p.height - 1);
      if (!p.in_shape(my, mx)) continue;

      // bilinear taps, border-replicated
      const double gx = lx - 0.5;
      const double gy = ly - 0.5;
      const double fx0 = std::floor(gx);
      const double fy0 = std::floor(gy);
      const double fx = gx - fx0;
      const double fy = gy - fy0;
      const int ix0 = std::clamp(static_cast<int>(fx0), 0, p.width - 1);
      const int ix1 = std::clamp(static_cast<int>(fx0) + 1, 0, p.width - 1);
      const int iy0 = std::clamp(static_cast<int>(fy0), 0, p.height - 1);
      const int iy1 = std::clamp(static_cast<int>(fy0) + 1, 0, p.height - 1);

      StampPixel sp;
      sp.out_index = y * out.width + x;
      sp.cell[0] = iy0 * p.width + ix0;
      sp.cell[1] = iy0 * p.width + ix1;
      sp.cell[2] = iy1 * p.width + ix0;
      sp.cell[3] = iy1 * p.width + ix1;
      sp.weight[0] = (1.0 - fy) * (1.0 - fx);
      sp.weight[1] = (1.0 - fy) * fx;
      sp.weight[2] = fy * (1.0 - fx);
      sp.weight[3] = fy * fx;
      sp.brightness = t.brightness;

      for (int c = 0; c < 3; ++c) {
        double v = 0.0;
        for (int k = 0; k < 4; ++k) v += sp.weight[k] * p.pixels[sp.cell[k] * 3 + c];
        v *= t.brightness;
        sp.clamped[c] = (v < 0.0 || v > 1.0);
        out.pixels[static_cast<std::size_t>(sp.out_index) * 3 + c] = std::clamp(v, 0.0, 1.0);
      }
      mask.bits[sp.out_index] = 1;

      std::int32_t& slot = owner[sp.out_index];
      if (slot < 0) {
        slot = static_cast<std::int32_t>(stamped.size());
        stamped.push_back(sp);
      } else {
        stamped[slot] = sp;
      }
    }
  }
}

}  // namespace detail

/// Stamp one transformed patch onto the image. Output pixels equal the
/// transformed patch exactly where the returned mask is true and equal x
/// elsewhere.
inline ApplyResult apply_patch(const ImageBuffer& x, const Patch& p, const ConcreteTransform& t,
                               const Placement& place) {
  if (p.height <= 0 || p.width <= 0 || p.shape_area() == 0) {
    throw InvalidInputError("apply_patch: empty patch");
  }
  ApplyResult r;
  r.image = x;
  r.mask = BinaryMask(x.height, x.width, false, x.id);

  double cx, cy, ref_area;
  switch (place.anchor) {
    case Placement::Anchor::CenterOfBox: {
      if (!place.target_box) {
        throw PlacementError("apply_patch: center-of-box placement without a target box");
      }
      const BoundingBox& b = *place.target_box;
      if (!b.valid()) throw InvalidInputError("apply_patch: degenerate target box");
      cx = b.center_x() + t.jitter_x;
      cy = b.center_y() + t.jitter_y;
      ref_area = b.area();
      break;
    }
    case Placement::Anchor::Fixed:
      cx = place.x + t.jitter_x;
      cy = place.y + t.jitter_y;
      ref_area = static_cast<double>(x.height) * x.width;
      break;
    case Placement::Anchor::FullImage:
    default:
      cx = 0.5 * x.width + t.jitter_x;
      cy = 0.5 * x.height + t.jitter_y;
      ref_area = static_cast<double>(x.height) * x.width;
      break;
  }

  std::vector<std::int32_t> owner(static_cast<std::size_t>(x.height) * x.width, -1);
  detail::stamp_one(r.image, r.mask, r.stamped, owner, p, t, cx, cy, ref_area);
  r.stamps.push_back({place.anchor == Placement::Anchor::CenterOfBox ? 0 : -1, t});
  return r;
}

/// One patch per ground-truth person box (the pedestrian protocol default).
/// Transforms are drawn from the spec per stamp, in box order.
inline ApplyResult apply_to_persons(const ImageBuffer& x, const Patch& p,
                                    const TransformSpec& spec, const GroundTruthSet& gt,
                                    Rng& rng, int patches_per_box = 1) {
  std::vector<int> persons;
  for (std::size_t i = 0; i < gt.boxes.size(); ++i) {
    if (gt.boxes[i].class_id == kPersonClass) persons.push_back(static_cast<int>(i));
  }
  if (persons.empty()) {
    throw PlacementError("apply_to_persons: no ground-truth person box");
  }

  ApplyResult r;
  r.image = x;
  r.mask = BinaryMask(x.height, x.width, false, x.id);
  std::vector<std::int32_t> owner(static_cast<std::size_t>(x.height) * x.width, -1);
  for (int bi : persons) {
    const BoundingBox& b = gt.boxes[static_cast<std::size_t>(bi)];
    for (int k = 0; k < patches_per_box; ++k) {
      const ConcreteTransform t = sample_transform(spec, rng);
      detail::stamp_one(r.image, r.mask, r.stamped, owner, p, t, b.center_x() + t.jitter_x,
                        b.center_y() + t.jitter_y, b.area());
      r.stamps.push_back({bi, t});
    }
  }
  return r;
}

/// Pull a gradient w.r.t. the stamped image back to patch pixels. Clamped
/// channels pass zero gradient.
inline std::vector<double> applier_backward(const ApplyResult& r, const Patch& p,
                                            const std::vector<double>& grad_out) {
  std::vector<double> grad(static_cast<std::size_t>(p.height) * p.width * 3, 0.0);
  for (const StampPixel& sp : r.stamped) {
    for (int c = 0; c < 3; ++c) {
      if (sp.clamped[c]) continue;
      const double g = grad_out[static_cast<std::size_t>(sp.out_index) * 3 + c] * sp.brightness;
      if (g == 0.0) continue;
      for (int k = 0; k < 4; ++k) {
        grad[static_cast<std::size_t>(sp.cell[k]) * 3 + c] += sp.weight[k] * g;
      }
    }
  }
  return grad;
}

}  // namespace patchbench
