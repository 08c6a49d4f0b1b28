#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "patchbench/patchbench.hpp"

namespace testutil {

/// Scratch directory removed on scope exit.
class TempDir {
public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("patchbench_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& rel = {}) const {
    return rel.empty() ? path_.string() : (path_ / rel).string();
  }

private:
  std::filesystem::path path_;
};

/// Central finite difference of a scalar function of one coordinate.
inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double got, double want) {
  const double denom = std::max(std::abs(want), 1e-12);
  return std::abs(got - want) / denom;
}

inline patchbench::BinaryMask random_mask(int h, int w, double density, patchbench::Rng& rng) {
  patchbench::BinaryMask m(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) m.set(y, x, rng.uniform() < density);
  }
  return m;
}

inline patchbench::ImageBuffer random_image(int h, int w, patchbench::Rng& rng,
                                            std::string id = {}) {
  patchbench::ImageBuffer img(h, w, 0.0, std::move(id));
  for (double& v : img.pixels) v = rng.uniform();
  return img;
}

}  // namespace testutil
