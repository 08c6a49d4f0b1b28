#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace patchbench {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidInputError : public Error {
public:
  using Error::Error;
};

class InvalidConfigError : public Error {
public:
  using Error::Error;
};

class PlacementError : public Error {
public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class NumericError : public Error {
public:
  using Error::Error;
};

inline constexpr int kPersonClass = 0;

/// H x W x 3 image, row-major, channel-last, values in [0,1].
struct ImageBuffer {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
  std::string id;

  ImageBuffer() = default;

  ImageBuffer(int h, int w, double fill = 0.0, std::string image_id = {})
      : height(h), width(w), id(std::move(image_id)) {
    if (h <= 0 || w <= 0) {
      throw InvalidInputError("ImageBuffer: height and width must be positive");
    }
    pixels.assign(static_cast<std::size_t>(h) * w * 3, fill);
  }

  double& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  bool same_shape(const ImageBuffer& o) const {
    return height == o.height && width == o.width;
  }

  void clamp01() {
    for (double& v : pixels) v = std::clamp(v, 0.0, 1.0);
  }

  double intensity(int y, int x) const {
    const std::size_t k = (static_cast<std::size_t>(y) * width + x) * 3;
    return (pixels[k] + pixels[k + 1] + pixels[k + 2]) / 3.0;
  }

  /// Per-pixel channel mean, row-major H*W.
  std::vector<double> intensity() const {
    std::vector<double> out(static_cast<std::size_t>(height) * width);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = (pixels[i * 3] + pixels[i * 3 + 1] + pixels[i * 3 + 2]) / 3.0;
    }
    return out;
  }
};

/// Axis-aligned box in continuous pixel units, half-open [min, max) when
/// rasterized. Ground-truth boxes carry no score.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;
  int class_id = kPersonClass;
  std::optional<double> score;

  double box_width() const { return x_max - x_min; }
  double box_height() const { return y_max - y_min; }
  double area() const { return box_width() * box_height(); }
  bool valid() const { return x_min < x_max && y_min < y_max; }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
};

struct DetectionSet {
  std::string image_id;
  std::vector<BoundingBox> boxes;

  /// Sort by descending score; boxes without a score sort last.
  void normalize() {
    std::stable_sort(boxes.begin(), boxes.end(),
                     [](const BoundingBox& a, const BoundingBox& b) {
                       return a.score.value_or(-1.0) > b.score.value_or(-1.0);
                     });
  }
};

struct GroundTruthSet {
  std::string image_id;
  std::vector<BoundingBox> boxes;
};

/// An image with its annotations; the unit most pipelines iterate over.
struct CorpusItem {
  ImageBuffer image;
  GroundTruthSet gt;
};
using Corpus = std::vector<CorpusItem>;

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;
  std::string image_id;

  BinaryMask() = default;

  BinaryMask(int h, int w, bool fill = false, std::string image_id_ = {})
      : height(h), width(w), image_id(std::move(image_id_)) {
    if (h <= 0 || w <= 0) {
      throw InvalidInputError("BinaryMask: height and width must be positive");
    }
    bits.assign(static_cast<std::size_t>(h) * w, fill ? 1 : 0);
  }

  bool get(int y, int x) const {
    return bits[static_cast<std::size_t>(y) * width + x] != 0;
  }
  void set(int y, int x, bool v) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }

  long long area() const {
    long long n = 0;
    for (std::uint8_t b : bits) n += (b != 0);
    return n;
  }

  bool same_shape(const BinaryMask& o) const {
    return height == o.height && width == o.width;
  }
  bool same_shape(const ImageBuffer& o) const {
    return height == o.height && width == o.width;
  }
};

/// Per-pixel tally of a predicted patch mask against the true one.
struct PixelConfusion {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
};

inline double box_iou(const BoundingBox& a, const BoundingBox& b) {
  if (!a.valid() || !b.valid()) {
    throw InvalidInputError("box_iou: degenerate box");
  }
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

inline PixelConfusion pixel_confusion(const BinaryMask& pred, const BinaryMask& gt) {
  if (!pred.same_shape(gt)) {
    throw InvalidInputError("pixel_confusion: mask shapes differ");
  }
  PixelConfusion c;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool p = pred.bits[i] != 0;
    const bool g = gt.bits[i] != 0;
    c.tp += (p && g);
    c.fp += (p && !g);
    c.fn += (!p && g);
  }
  return c;
}

}  // namespace patchbench
