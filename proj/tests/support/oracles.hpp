#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <random>
#include <vector>

#include "thz/common.hpp"
#include "thz/metrics.hpp"

// Reference implementations shared by the unit tests and the acceptance run.
// Written from the definitions, without the library's fast paths.
namespace thz::testing {

using metrics::PointCloud;

// Independent DFT coefficient at an exact frequency.
inline std::complex<double> dft_at(const std::vector<double>& x, double f, double dt) {
  long double re = 0, im = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const long double a = -2.0L * 3.14159265358979323846L * f * static_cast<long double>(k) * dt;
    re += x[k] * std::cos(a);
    im += x[k] * std::sin(a);
  }
  const long double s = 2.0L / static_cast<long double>(x.size());
  return {static_cast<double>(re * s), static_cast<double>(im * s)};
}

// Disk of radius r (pixels) about the grid centre, 4x4 supersampled.
inline Image disk(std::size_t n, double r, double value = 1.0) {
  Image img(n, n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      int hits = 0;
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
          const double y = static_cast<double>(i) - c + (a + 0.5) / 4.0 - 0.5;
          const double x = static_cast<double>(j) - c + (b + 0.5) / 4.0 - 0.5;
          if (x * x + y * y <= r * r) ++hits;
        }
      }
      img(i, j) = value * hits / 16.0;
    }
  }
  return img;
}

inline std::vector<double> uniform_angles(std::size_t count) {
  std::vector<double> a(count);
  for (std::size_t i = 0; i < count; ++i) a[i] = 180.0 * static_cast<double>(i) / static_cast<double>(count);
  return a;
}

// Relative RMSE over pixels at least `margin` inside the disk of radius r.
inline double disk_interior_rel_rmse(const Image& rec, const Image& truth, double r, double margin) {
  const double c = (static_cast<double>(truth.rows()) - 1.0) / 2.0;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.rows(); ++i) {
    for (std::size_t j = 0; j < truth.cols(); ++j) {
      const double y = static_cast<double>(i) - c, x = static_cast<double>(j) - c;
      if (std::sqrt(x * x + y * y) > r - margin) continue;
      const double d = rec(i, j) - truth(i, j);
      num += d * d;
      den += truth(i, j) * truth(i, j);
    }
  }
  return std::sqrt(num / den);
}

inline double rel_rmse(const Image& rec, const Image& truth) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const double d = rec.data()[k] - truth.data()[k];
    num += d * d;
    den += truth.data()[k] * truth.data()[k];
  }
  return std::sqrt(num / den);
}

// Independent references written from the definitions.
inline double sq(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dz = a[0] - b[0], dy = a[1] - b[1], dx = a[2] - b[2];
  return dz * dz + dy * dy + dx * dx;
}

inline double ref_fraction_within(const PointCloud& q, const PointCloud& r, double tau) {
  std::size_t hit = 0;
  for (const auto& p : q.points) {
    for (const auto& s : r.points) {
      if (sq(p, s) <= tau * tau) {
        ++hit;
        break;
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(q.size());
}

inline double ref_fscore(const PointCloud& a, const PointCloud& b, double tau) {
  const double p = ref_fraction_within(a, b, tau), r = ref_fraction_within(b, a, tau);
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

inline double ref_mean_min_sq(const PointCloud& q, const PointCloud& r) {
  double sum = 0.0;
  for (const auto& p : q.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : r.points) best = std::min(best, sq(p, s));
    sum += best;
  }
  return sum / static_cast<double>(q.size());
}

inline double ref_chamfer(const PointCloud& a, const PointCloud& b) {
  return 0.5 * (ref_mean_min_sq(a, b) + ref_mean_min_sq(b, a));
}

inline double ref_iou(const Grid3& a, const Grid3& b, double t) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const bool x = a.data()[k] >= t, y = b.data()[k] >= t;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double extent, bool lattice) {
  std::uniform_real_distribution<double> u(0.0, extent);
  std::uniform_int_distribution<int> k(0, static_cast<int>(extent * 2));
  PointCloud pc;
  for (std::size_t i = 0; i < n; ++i) {
    if (lattice) {
      pc.points.push_back({0.5 * k(rng), 0.5 * k(rng), 0.5 * k(rng)});
    } else {
      pc.points.push_back({u(rng), u(rng), u(rng)});
    }
  }
  return pc;
}

inline Grid3 random_grid(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Grid3 g(n, n, n);
  for (double& v : g.data()) v = u(rng);
  return g;
}

}  // namespace thz::testing
