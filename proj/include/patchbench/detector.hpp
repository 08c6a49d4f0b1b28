#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "patchbench/core.hpp"
#include "patchbench/png_io.hpp"
#include "patchbench/subprocess.hpp"

namespace patchbench {

/// One scored window from a detector's confidence field.
struct Candidate {
  BoundingBox box;
  double confidence = 0.0;
  int index = -1;
};

/// The detector contract every attack, defense, and metric consumes.
/// Differentiable detectors additionally expose a per-candidate confidence
/// field with exact input gradients.
class Detector {
public:
  virtual ~Detector() = default;
  virtual std::string name() const = 0;
  virtual DetectionSet detect(const ImageBuffer& x) const = 0;
  virtual bool differentiable() const { return false; }
  virtual bool thread_safe() const { return true; }

  virtual std::vector<Candidate> confidence_field(const ImageBuffer&) const {
    throw InvalidConfigError(name() + ": confidence field not exposed");
  }
  /// d(confidence of candidate)/d(input pixels), same layout as x.pixels.
  virtual std::vector<double> confidence_gradient(const ImageBuffer&, const Candidate&) const {
    throw InvalidConfigError(name() + ": gradients not exposed");
  }
};

/// Greedy NMS keeping the highest-scoring box per overlap group.
inline std::vector<BoundingBox> nms(std::vector<BoundingBox> boxes, double iou_thr) {
  std::stable_sort(boxes.begin(), boxes.end(), [](const BoundingBox& a, const BoundingBox& b) {
    return a.score.value_or(0.0) > b.score.value_or(0.0);
  });
  std::vector<BoundingBox> kept;
  for (const BoundingBox& b : boxes) {
    bool suppressed = false;
    for (const BoundingBox& k : kept) {
      if (b.class_id == k.class_id && box_iou(b, k) >= iou_thr) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

struct ToyDetectorConfig {
  int stride = 8;
  double temperature = 10.0;
  double ncc_midpoint = 0.5;     // logistic center in correlation units
  double detect_threshold = 0.5; // confidence needed to emit a detection
  double nms_iou = 0.5;
};

/// Default correlation template: a cells×cells checker of lo/hi gray. Strong
/// contrast at cell scale, flat inside cells, which keeps entropy and gradient
/// localizers quiet on clean template windows.
inline ImageBuffer make_checker_template(int side = 32, int cells = 2, double lo = 0.25,
                                         double hi = 0.75) {
  if (side < cells || cells < 1) throw InvalidConfigError("make_checker_template: bad geometry");
  ImageBuffer t(side, side, 0.0, "checker_template");
  const int cell = side / cells;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const bool odd = ((y / cell) + (x / cell)) % 2 != 0;
      const double v = odd ? hi : lo;
      for (int c = 0; c < 3; ++c) t.at(y, x, c) = v;
    }
  }
  return t;
}

/// Sliding-window normalized-correlation detector. Deterministic, attackable,
/// and differentiable everywhere, so the full optimization loop can run with
/// no trained weights.
class ToyDetector : public Detector {
public:
  ToyDetector(ImageBuffer templ, ToyDetectorConfig cfg = {})
      : template_(std::move(templ)), cfg_(cfg) {
    if (cfg_.stride <= 0) throw InvalidConfigError("ToyDetector: stride must be positive");
    if (cfg_.temperature <= 0.0) throw InvalidConfigError("ToyDetector: temperature must be positive");
    const std::size_t n = template_.pixels.size();
    double mean = 0.0;
    for (double v : template_.pixels) mean += v;
    mean /= static_cast<double>(n);
    unit_template_.resize(n);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      unit_template_[i] = template_.pixels[i] - mean;
      norm2 += unit_template_[i] * unit_template_[i];
    }
    const double norm = std::sqrt(norm2);
    if (norm < 1e-12) throw InvalidConfigError("ToyDetector: template has no contrast");
    for (double& v : unit_template_) v /= norm;
  }

  std::string name() const override { return "toy"; }
  bool differentiable() const override { return true; }

  int window_size() const { return template_.height; }
  const ToyDetectorConfig& config() const { return cfg_; }

  std::vector<Candidate> confidence_field(const ImageBuffer& x) const override {
    check_size(x);
    std::vector<Candidate> out;
    const int k = template_.height;
    int index = 0;
    for (int wy = 0; wy + k <= x.height; wy += cfg_.stride) {
      for (int wx = 0; wx + k <= x.width; wx += cfg_.stride) {
        WindowStats st = window_stats(x, wy, wx);
        Candidate c;
        c.box = BoundingBox{static_cast<double>(wx), static_cast<double>(wy),
                            static_cast<double>(wx + k), static_cast<double>(wy + k),
                            kPersonClass, confidence(st.ncc)};
        c.confidence = *c.box.score;
        c.index = index++;
        out.push_back(c);
      }
    }
    return out;
  }

  DetectionSet detect(const ImageBuffer& x) const override {
    std::vector<BoundingBox> hits;
    for (const Candidate& c : confidence_field(x)) {
      if (c.confidence > cfg_.detect_threshold) hits.push_back(c.box);
    }
    DetectionSet d;
    d.image_id = x.id;
    d.boxes = nms(std::move(hits), cfg_.nms_iou);
    d.normalize();
    return d;
  }

  std::vector<double> confidence_gradient(const ImageBuffer& x, const Candidate& cand) const override {
    check_size(x);
    const int k = template_.height;
    const int wy = static_cast<int>(cand.box.y_min);
    const int wx = static_cast<int>(cand.box.x_min);
    std::vector<double> grad(x.pixels.size(), 0.0);
    WindowStats st = window_stats(x, wy, wx);
    if (st.norm < kNormFloor) return grad;  // flat window, ncc pinned at 0

    const double conf = confidence(st.ncc);
    const double dconf_dncc = conf * (1.0 - conf) * cfg_.temperature;
    const double b = st.norm;
    const double a = st.dot;
    std::size_t t = 0;
    for (int y = 0; y < k; ++y) {
      for (int x2 = 0; x2 < k; ++x2) {
        for (int c = 0; c < 3; ++c, ++t) {
          const double z = x.at(wy + y, wx + x2, c) - st.mean;
          const double dncc = unit_template_[t] / b - a * z / (b * b * b);
          grad[((static_cast<std::size_t>(wy + y) * x.width) + (wx + x2)) * 3 + c] =
              dconf_dncc * dncc;
        }
      }
    }
    return grad;
  }

private:
  static constexpr double kNormFloor = 1e-9;

  struct WindowStats {
    double mean = 0.0;
    double dot = 0.0;   // <w - mean, unit template>
    double norm = 0.0;  // ||w - mean||
    double ncc = 0.0;
  };

  void check_size(const ImageBuffer& x) const {
    if (x.height < template_.height || x.width < template_.width) {
      throw InvalidInputError("ToyDetector: image smaller than template");
    }
  }

  double confidence(double ncc) const {
    return 1.0 / (1.0 + std::exp(-cfg_.temperature * (ncc - cfg_.ncc_midpoint)));
  }

  WindowStats window_stats(const ImageBuffer& x, int wy, int wx) const {
    const int k = template_.height;
    WindowStats st;
    const double n = static_cast<double>(k) * k * 3;
    for (int y = 0; y < k; ++y) {
      for (int x2 = 0; x2 < k; ++x2) {
        for (int c = 0; c < 3; ++c) st.mean += x.at(wy + y, wx + x2, c);
      }
    }
    st.mean /= n;
    double norm2 = 0.0;
    std::size_t t = 0;
    for (int y = 0; y < k; ++y) {
      for (int x2 = 0; x2 < k; ++x2) {
        for (int c = 0; c < 3; ++c, ++t) {
          const double z = x.at(wy + y, wx + x2, c) - st.mean;
          st.dot += z * unit_template_[t];
          norm2 += z * z;
        }
      }
    }
    st.norm = std::sqrt(norm2);
    st.ncc = (st.norm < kNormFloor) ? 0.0 : st.dot / st.norm;
    return st;
  }

  ImageBuffer template_;
  std::vector<double> unit_template_;
  ToyDetectorConfig cfg_;
};

/// File-exchange adapter for detectors that cannot be embedded. The command
/// receives an image path and prints one detection per line:
///   image_id class_id score x_min y_min x_max y_max
class ExternalDetectorAdapter : public Detector {
public:
  ExternalDetectorAdapter(std::string name, std::string command)
      : name_(std::move(name)), command_(std::move(command)) {}

  std::string name() const override { return name_; }
  bool thread_safe() const override { return false; }

  DetectionSet detect(const ImageBuffer& x) const override {
    namespace fs = std::filesystem;
    const fs::path tmp = fs::temp_directory_path() /
                         ("patchbench_req_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) +
                          "_" + x.id + ".png");
    write_png8(tmp.string(), x);
    CommandResult res;
    try {
      res = run_command(command_ + " " + tmp.string());
    } catch (...) {
      fs::remove(tmp);
      throw;
    }
    fs::remove(tmp);
    if (res.exit_code != 0) {
      throw IoError("external detector '" + name_ + "' exited with code " +
                    std::to_string(res.exit_code));
    }
    return parse_response(res.output, x.id);
  }

  static DetectionSet parse_response(const std::string& text, const std::string& fallback_id) {
    DetectionSet d;
    d.image_id = fallback_id;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string image_id;
      BoundingBox b;
      double score;
      if (!(ls >> image_id >> b.class_id >> score >> b.x_min >> b.y_min >> b.x_max >> b.y_max)) {
        throw IoError("external detector: malformed response line: " + line);
      }
      b.score = score;
      d.image_id = image_id;
      d.boxes.push_back(b);
    }
    d.normalize();
    return d;
  }

private:
  std::string name_;
  std::string command_;
};

/// Output-shape conformance checks for adapters. Returns human-readable
/// violations; empty means the detector passed.
inline std::vector<std::string> check_detector_conformance(const Detector& det,
                                                           const ImageBuffer& probe) {
  std::vector<std::string> violations;
  DetectionSet a = det.detect(probe);
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    const BoundingBox& b = a.boxes[i];
    if (!b.score || *b.score < 0.0 || *b.score > 1.0) {
      violations.push_back("detection " + std::to_string(i) + ": score outside [0,1]");
    }
    if (!b.valid()) {
      violations.push_back("detection " + std::to_string(i) + ": degenerate box");
    }
    if (i > 0 && a.boxes[i - 1].score.value_or(0) < b.score.value_or(0)) {
      violations.push_back("detections not sorted by descending score");
    }
  }
  DetectionSet b = det.detect(probe);
  if (b.boxes.size() != a.boxes.size()) {
    violations.push_back("detector is not deterministic on identical input");
  }
  return violations;
}

}  // namespace patchbench
