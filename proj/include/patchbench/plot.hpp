#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "patchbench/core.hpp"
#include "patchbench/png_io.hpp"

namespace patchbench {

/// Chart rendering for report output. Deliberately minimal: bars and cells
/// only, numbers live in the CSV files written next to the images.

namespace detail {

inline void fill_rect(ImageBuffer& img, int y0, int y1, int x0, int x1, double r, double g,
                      double b) {
  y0 = std::max(0, y0);
  x0 = std::max(0, x0);
  y1 = std::min(img.height, y1);
  x1 = std::min(img.width, x1);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  }
}

}  // namespace detail

/// Vertical bars scaled to the value range [0, max]. Values below 0 clamp to 0.
inline ImageBuffer render_bar_chart(const std::vector<double>& values, int bar_width = 28,
                                    int gap = 10, int height = 220) {
  if (values.empty()) throw InvalidInputError("render_bar_chart: no values");
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;

  const int margin = 12;
  const int width = margin * 2 + static_cast<int>(values.size()) * bar_width +
                    (static_cast<int>(values.size()) - 1) * gap;
  ImageBuffer img(height, std::max(width, bar_width + 2 * margin), 1.0, "bar_chart");
  const int base = height - margin;
  detail::fill_rect(img, base, base + 2, 0, img.width, 0.2, 0.2, 0.2);

  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::max(0.0, values[i]) / vmax;
    const int bar_h = static_cast<int>(std::lround(v * (height - 2 * margin)));
    const int x0 = margin + static_cast<int>(i) * (bar_width + gap);
    detail::fill_rect(img, base - bar_h, base, x0, x0 + bar_width, 0.17, 0.35, 0.65);
  }
  return img;
}

/// Matrix as colored cells, min..max mapped dark blue to warm yellow.
inline ImageBuffer render_heatmap(const std::vector<std::vector<double>>& m, int cell = 18) {
  if (m.empty() || m.front().empty()) throw InvalidInputError("render_heatmap: empty matrix");
  const std::size_t cols = m.front().size();
  double lo = m[0][0], hi = m[0][0];
  for (const auto& row : m) {
    if (row.size() != cols) throw InvalidInputError("render_heatmap: ragged matrix");
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const double span = hi > lo ? hi - lo : 1.0;

  ImageBuffer img(static_cast<int>(m.size()) * cell, static_cast<int>(cols) * cell, 1.0,
                  "heatmap");
  for (std::size_t r = 0; r < m.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double t = (m[r][c] - lo) / span;
      detail::fill_rect(img, static_cast<int>(r) * cell, static_cast<int>(r + 1) * cell,
                        static_cast<int>(c) * cell, static_cast<int>(c + 1) * cell,
                        0.10 + 0.85 * t, 0.12 + 0.70 * t, 0.45 - 0.35 * t);
    }
  }
  return img;
}

inline void save_bar_chart(const std::string& path, const std::vector<double>& values) {
  write_png8(path, render_bar_chart(values));
}

inline void save_heatmap(const std::string& path, const std::vector<std::vector<double>>& m) {
  write_png8(path, render_heatmap(m));
}

}  // namespace patchbench
