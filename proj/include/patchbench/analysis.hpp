#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "patchbench/applier.hpp"
#include "patchbench/core.hpp"
#include "patchbench/rng.hpp"

namespace patchbench {

struct EmbeddingSet {
  Eigen::MatrixXd vectors;  // N×D, one embedding per row
  std::string embedder_name;
};

class Embedder {
public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual Eigen::VectorXd embed(const ImageBuffer& x) const = 0;
};

/// Average-pools to 16×16×3 and projects with a fixed seeded Gaussian matrix
/// to 64 dimensions. Needs no trained weights; absolute FID values are only
/// comparable within one embedder version.
class RandomProjectionEmbedder final : public Embedder {
public:
  static constexpr int kGrid = 16;
  static constexpr int kDim = 64;

  RandomProjectionEmbedder() : projection_(kDim, kGrid * kGrid * 3) {
    Rng rng(derive_seed(0, "rp16x64-v1", 0));
    const double scale = 1.0 / std::sqrt(static_cast<double>(kGrid * kGrid * 3));
    for (int r = 0; r < projection_.rows(); ++r) {
      for (int c = 0; c < projection_.cols(); ++c) projection_(r, c) = rng.normal() * scale;
    }
  }

  std::string name() const override { return "rp16x64-v1"; }

  Eigen::VectorXd embed(const ImageBuffer& x) const override {
    Eigen::VectorXd pooled(kGrid * kGrid * 3);
    for (int gy = 0; gy < kGrid; ++gy) {
      const int y0 = gy * x.height / kGrid;
      const int y1 = std::max(y0 + 1, (gy + 1) * x.height / kGrid);
      for (int gx = 0; gx < kGrid; ++gx) {
        const int x0 = gx * x.width / kGrid;
        const int x1 = std::max(x0 + 1, (gx + 1) * x.width / kGrid);
        double sum[3] = {0.0, 0.0, 0.0};
        for (int y = y0; y < y1; ++y) {
          for (int xx = x0; xx < x1; ++xx) {
            for (int c = 0; c < 3; ++c) sum[c] += x.at(y, xx, c);
          }
        }
        const double inv = 1.0 / ((y1 - y0) * (x1 - x0));
        for (int c = 0; c < 3; ++c) {
          pooled[(gy * kGrid + gx) * 3 + c] = sum[c] * inv;
        }
      }
    }
    return projection_ * pooled;
  }

private:
  Eigen::MatrixXd projection_;
};

inline EmbeddingSet embed_images(const std::vector<ImageBuffer>& images, const Embedder& embedder) {
  if (images.empty()) throw InvalidInputError("embed_images: empty input");
  const Eigen::VectorXd first = embedder.embed(images.front());
  EmbeddingSet set;
  set.embedder_name = embedder.name();
  set.vectors.resize(static_cast<Eigen::Index>(images.size()), first.size());
  set.vectors.row(0) = first;
  for (std::size_t i = 1; i < images.size(); ++i) {
    set.vectors.row(static_cast<Eigen::Index>(i)) = embedder.embed(images[i]);
  }
  return set;
}

namespace detail {

inline constexpr double kCovarianceShrinkage = 1e-6;

/// Unbiased covariance with a small diagonal shrinkage guarding
/// near-singular sets.
inline void gaussian_moments(const Eigen::MatrixXd& x, Eigen::VectorXd& mean,
                             Eigen::MatrixXd& cov) {
  const Eigen::Index n = x.rows();
  mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  cov.diagonal().array() += kCovarianceShrinkage;
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// from roundoff are clipped.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  const Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

/// Fréchet distance between Gaussian fits of the two embedding sets.
inline double fid(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.vectors.cols() != b.vectors.cols()) {
    throw InvalidInputError("fid: embedding dimensions differ");
  }
  if (a.vectors.rows() < 2 || b.vectors.rows() < 2) {
    throw InvalidInputError("fid: each set needs at least 2 vectors");
  }
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  detail::gaussian_moments(a.vectors, mu_a, cov_a);
  detail::gaussian_moments(b.vectors, mu_b, cov_b);

  const Eigen::MatrixXd root_a = detail::psd_sqrt(cov_a);
  const Eigen::MatrixXd inner = root_a * cov_b * root_a;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()));
  const double trace_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double d = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt;
  return std::max(0.0, d);
}

// ---------------------------------------------------------------------------
// Radial frequency spectrum

struct SpectrumHistogram {
  std::vector<double> bin_edges;       // bins+1 edges over [0, 0.5]
  std::vector<double> energy_fraction; // sums to 1; radii beyond 0.5 fold into the last bin
  double total_energy = 0.0;           // sum |X|^2 / N over channels, pre-normalization
};

namespace detail {

inline void fft1d(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n < 2) return;
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

inline int next_pow2(int v) {
  int p = 1;
  while (p < v) p <<= 1;
  return p;
}

}  // namespace detail

/// Energy of the 2-D spectrum binned by normalized radial frequency, summed
/// over channels. The image is zero-padded to a power-of-two square, so
/// total_energy equals the spatial sum of squares (Parseval).
inline SpectrumHistogram radial_spectrum(const ImageBuffer& x, int bins) {
  if (bins < 1) throw InvalidConfigError("radial_spectrum: bins must be >= 1");
  const int side = detail::next_pow2(std::max(x.height, x.width));
  const std::size_t n2 = static_cast<std::size_t>(side) * side;

  SpectrumHistogram hist;
  hist.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) {
    hist.bin_edges[static_cast<std::size_t>(b)] = 0.5 * b / bins;
  }
  hist.energy_fraction.assign(static_cast<std::size_t>(bins), 0.0);

  std::vector<std::complex<double>> grid(n2);
  std::vector<std::complex<double>> col(static_cast<std::size_t>(side));
  for (int c = 0; c < 3; ++c) {
    std::fill(grid.begin(), grid.end(), std::complex<double>(0.0, 0.0));
    for (int y = 0; y < x.height; ++y) {
      for (int xx = 0; xx < x.width; ++xx) {
        grid[static_cast<std::size_t>(y) * side + xx] = x.at(y, xx, c);
      }
    }
    for (int y = 0; y < side; ++y) {
      std::vector<std::complex<double>> row(grid.begin() + static_cast<std::ptrdiff_t>(y) * side,
                                            grid.begin() + static_cast<std::ptrdiff_t>(y + 1) * side);
      detail::fft1d(row);
      std::copy(row.begin(), row.end(), grid.begin() + static_cast<std::ptrdiff_t>(y) * side);
    }
    for (int xx = 0; xx < side; ++xx) {
      for (int y = 0; y < side; ++y) col[static_cast<std::size_t>(y)] = grid[static_cast<std::size_t>(y) * side + xx];
      detail::fft1d(col);
      for (int y = 0; y < side; ++y) grid[static_cast<std::size_t>(y) * side + xx] = col[static_cast<std::size_t>(y)];
    }
    for (int v = 0; v < side; ++v) {
      const double fv = (v <= side / 2 ? v : side - v) / static_cast<double>(side);
      for (int u = 0; u < side; ++u) {
        const double fu = (u <= side / 2 ? u : side - u) / static_cast<double>(side);
        const double energy = std::norm(grid[static_cast<std::size_t>(v) * side + u]) /
                              static_cast<double>(n2);
        const double r = std::sqrt(fu * fu + fv * fv);
        int b = static_cast<int>(r / 0.5 * bins);
        b = std::min(b, bins - 1);
        hist.energy_fraction[static_cast<std::size_t>(b)] += energy;
        hist.total_energy += energy;
      }
    }
  }
  if (hist.total_energy > 0.0) {
    for (double& f : hist.energy_fraction) f /= hist.total_energy;
  } else {
    hist.energy_fraction[0] = 1.0;  // all-zero image: call it pure DC
  }
  return hist;
}

inline ImageBuffer patch_to_image(const Patch& p, const std::string& id = "patch") {
  ImageBuffer img(p.height, p.width, 0.0, id);
  img.pixels = p.pixels;
  return img;
}

inline SpectrumHistogram radial_spectrum(const Patch& p, int bins) {
  return radial_spectrum(patch_to_image(p), bins);
}

// ---------------------------------------------------------------------------
// Group-level distribution diagnostics

struct AnalysisConfig {
  int crop = 16;          // sliding-crop side for per-patch embedding sets
  int stride = 4;
  int spectrum_bins = 16;

  void validate() const {
    if (crop < 2 || stride < 1) throw InvalidConfigError("AnalysisConfig: bad crop/stride");
    if (spectrum_bins < 3) throw InvalidConfigError("AnalysisConfig: need >= 3 spectrum bins");
  }
};

struct DistributionReport {
  std::vector<std::string> unit_names;  // one per patch, plus "clean"
  std::vector<int> unit_group;          // 0 = first group, 1 = second group, 2 = clean
  Eigen::MatrixXd fid_matrix;           // pairwise over units
  std::vector<std::vector<double>> group_mean_spectrum;  // 3 × spectrum_bins
  std::vector<double> group_high_freq_fraction;          // energy in the top-third radius band
  double within_second_group_mean_fid = 0.0;
  double cross_group_mean_fid = 0.0;
  bool first_group_more_distant = false;  // cross-group FIDs exceed within-second-group FIDs
};

namespace detail {

inline std::vector<ImageBuffer> sliding_crops(const ImageBuffer& img, int crop, int stride) {
  std::vector<ImageBuffer> out;
  for (int y = 0; y + crop <= img.height; y += stride) {
    for (int x = 0; x + crop <= img.width; x += stride) {
      ImageBuffer c(crop, crop, 0.0, img.id + "@" + std::to_string(y) + "," + std::to_string(x));
      for (int yy = 0; yy < crop; ++yy) {
        for (int xx = 0; xx < crop; ++xx) {
          for (int ch = 0; ch < 3; ++ch) c.at(yy, xx, ch) = img.at(y + yy, x + xx, ch);
        }
      }
      out.push_back(std::move(c));
    }
  }
  if (out.empty()) out.push_back(img);  // patch smaller than the crop window
  return out;
}

}  // namespace detail

/// Pairwise FIDs between per-patch crop embeddings (clean crops as one extra
/// unit) plus per-group mean spectra. The flag reports whether the first
/// group sits farther from the second than the second's internal spread, the
/// signature of a distributionally distinct patch family.
inline DistributionReport distribution_report(const std::vector<Patch>& first_group,
                                              const std::vector<Patch>& second_group,
                                              const std::vector<ImageBuffer>& clean_crops,
                                              const AnalysisConfig& cfg = {},
                                              const Embedder* embedder = nullptr) {
  cfg.validate();
  if (first_group.size() < 2 || second_group.size() < 2) {
    throw InvalidInputError("distribution_report: need at least 2 patches per group");
  }
  if (clean_crops.size() < 2) {
    throw InvalidInputError("distribution_report: need at least 2 clean crops");
  }
  RandomProjectionEmbedder default_embedder;
  const Embedder& emb = embedder ? *embedder : default_embedder;

  DistributionReport report;
  std::vector<EmbeddingSet> sets;
  std::vector<SpectrumHistogram> spectra;
  auto add_patch_unit = [&](const Patch& p, int group, std::size_t index) {
    const std::string base = p.meta.attack_name.empty() ? "patch" : p.meta.attack_name;
    report.unit_names.push_back(base + "#" + std::to_string(index));
    report.unit_group.push_back(group);
    const ImageBuffer img = patch_to_image(p, report.unit_names.back());
    sets.push_back(embed_images(detail::sliding_crops(img, cfg.crop, cfg.stride), emb));
    spectra.push_back(radial_spectrum(img, cfg.spectrum_bins));
  };
  for (std::size_t i = 0; i < first_group.size(); ++i) add_patch_unit(first_group[i], 0, i);
  for (std::size_t i = 0; i < second_group.size(); ++i) add_patch_unit(second_group[i], 1, i);

  report.unit_names.push_back("clean");
  report.unit_group.push_back(2);
  sets.push_back(embed_images(clean_crops, emb));
  {
    SpectrumHistogram mean_clean;
    for (std::size_t i = 0; i < clean_crops.size(); ++i) {
      const SpectrumHistogram h = radial_spectrum(clean_crops[i], cfg.spectrum_bins);
      if (i == 0) {
        mean_clean = h;
      } else {
        for (std::size_t b = 0; b < h.energy_fraction.size(); ++b) {
          mean_clean.energy_fraction[b] += h.energy_fraction[b];
        }
        mean_clean.total_energy += h.total_energy;
      }
    }
    for (double& f : mean_clean.energy_fraction) f /= static_cast<double>(clean_crops.size());
    spectra.push_back(std::move(mean_clean));
  }

  const Eigen::Index n = static_cast<Eigen::Index>(sets.size());
  report.fid_matrix = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = fid(sets[static_cast<std::size_t>(i)], sets[static_cast<std::size_t>(j)]);
      report.fid_matrix(i, j) = d;
      report.fid_matrix(j, i) = d;
    }
  }

  report.group_mean_spectrum.assign(3, std::vector<double>(static_cast<std::size_t>(cfg.spectrum_bins), 0.0));
  std::vector<int> group_count(3, 0);
  for (std::size_t u = 0; u < spectra.size(); ++u) {
    const int g = report.unit_group[u];
    ++group_count[static_cast<std::size_t>(g)];
    for (std::size_t b = 0; b < spectra[u].energy_fraction.size(); ++b) {
      report.group_mean_spectrum[static_cast<std::size_t>(g)][b] += spectra[u].energy_fraction[b];
    }
  }
  report.group_high_freq_fraction.assign(3, 0.0);
  const std::size_t high_start = static_cast<std::size_t>(cfg.spectrum_bins) -
                                 static_cast<std::size_t>(cfg.spectrum_bins) / 3;
  for (int g = 0; g < 3; ++g) {
    if (group_count[static_cast<std::size_t>(g)] == 0) continue;
    for (double& v : report.group_mean_spectrum[static_cast<std::size_t>(g)]) {
      v /= group_count[static_cast<std::size_t>(g)];
    }
    for (std::size_t b = high_start; b < report.group_mean_spectrum[static_cast<std::size_t>(g)].size(); ++b) {
      report.group_high_freq_fraction[static_cast<std::size_t>(g)] +=
          report.group_mean_spectrum[static_cast<std::size_t>(g)][b];
    }
  }

  double within = 0.0, cross = 0.0;
  int within_n = 0, cross_n = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const int gi = report.unit_group[static_cast<std::size_t>(i)];
      const int gj = report.unit_group[static_cast<std::size_t>(j)];
      if (gi == 1 && gj == 1) {
        within += report.fid_matrix(i, j);
        ++within_n;
      } else if ((gi == 0 && gj == 1) || (gi == 1 && gj == 0)) {
        cross += report.fid_matrix(i, j);
        ++cross_n;
      }
    }
  }
  report.within_second_group_mean_fid = within_n > 0 ? within / within_n : 0.0;
  report.cross_group_mean_fid = cross_n > 0 ? cross / cross_n : 0.0;
  report.first_group_more_distant =
      report.cross_group_mean_fid > report.within_second_group_mean_fid;
  return report;
}

}  // namespace patchbench
