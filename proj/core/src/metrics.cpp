#include "thz/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

namespace thz::metrics {

double psnr(const Image& x, const Image& y) {
  if (!x.same_shape(y)) throw ShapeError("psnr: image shapes differ");
  if (x.empty()) throw ShapeError("psnr: empty images");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x.data()[i] - y.data()[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(1.0 / mse);
}

double cross_section_mse(const Grid3& vol, const Grid3& gt) {
  if (!vol.same_shape(gt)) throw ShapeError("cross_section_mse: volume shapes differ");
  if (vol.size() == 0) throw ShapeError("cross_section_mse: empty volumes");
  const std::size_t plane = vol.rows() * vol.cols();
  double total = 0.0;
  for (std::size_t d = 0; d < vol.depth(); ++d) {
    double acc = 0.0;
    for (std::size_t i = d * plane; i < (d + 1) * plane; ++i) {
      const double e = vol.data()[i] - gt.data()[i];
      acc += e * e;
    }
    total += acc / static_cast<double>(plane);
  }
  return total / static_cast<double>(vol.depth());
}

double iou(const Grid3& a, const Grid3& b, double threshold) {
  if (!a.same_shape(b)) throw ShapeError("iou: volume shapes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a.data()[i] >= threshold, pb = b.data()[i] >= threshold;
    inter += pa && pb;
    uni += pa || pb;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Grid3 minmax_normalize(const Grid3& g) {
  Grid3 out(g.depth(), g.rows(), g.cols());
  if (g.size() == 0) return out;
  const auto [lo, hi] = std::minmax_element(g.data().begin(), g.data().end());
  const double range = *hi - *lo;
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < g.size(); ++i) out.data()[i] = (g.data()[i] - *lo) / range;
  return out;
}

PointCloud volume_to_pointcloud(const Grid3& vol, double threshold, double voxel_size) {
  PointCloud pc;
  const long D = static_cast<long>(vol.depth()), R = static_cast<long>(vol.rows()), C = static_cast<long>(vol.cols());
  auto occ = [&](long d, long r, long c) {
    if (d < 0 || r < 0 || c < 0 || d >= D || r >= R || c >= C) return false;
    return vol(d, r, c) >= threshold;
  };
  for (long d = 0; d < D; ++d) {
    for (long r = 0; r < R; ++r) {
      for (long c = 0; c < C; ++c) {
        if (!occ(d, r, c)) continue;
        const bool interior = occ(d - 1, r, c) && occ(d + 1, r, c) && occ(d, r - 1, c) && occ(d, r + 1, c) &&
                              occ(d, r, c - 1) && occ(d, r, c + 1);
        if (interior) continue;
        pc.points.push_back({(static_cast<double>(d) + 0.5) * voxel_size, (static_cast<double>(r) + 0.5) * voxel_size,
                             (static_cast<double>(c) + 0.5) * voxel_size});
      }
    }
  }
  return pc;
}

double bbox_diagonal(const PointCloud& pc) {
  if (pc.empty()) throw DomainError("bbox_diagonal: empty point cloud");
  std::array<double, 3> lo = pc.points[0], hi = pc.points[0];
  for (const auto& p : pc.points) {
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
  }
  return std::sqrt((hi[0] - lo[0]) * (hi[0] - lo[0]) + (hi[1] - lo[1]) * (hi[1] - lo[1]) +
                   (hi[2] - lo[2]) * (hi[2] - lo[2]));
}

double default_tau(const PointCloud& gt) {
  const double diag = bbox_diagonal(gt);
  // A single-point ground truth has no extent; fall back to one unit.
  return diag > 0.0 ? 0.01 * diag : 0.01;
}

namespace {

void require_nonempty(const PointCloud& a, const PointCloud& b, const char* what) {
  if (a.empty() || b.empty()) throw DomainError(std::string(what) + ": empty point cloud");
}

inline double sq_dist(const std::array<double, 3>& p, const std::array<double, 3>& q) {
  const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
  return dx * dx + dy * dy + dz * dz;
}

// Uniform bucket grid over a reference cloud.
class Buckets {
 public:
  Buckets(const PointCloud& ref, double cell) : ref_(ref), cell_(cell) {
    lo_ = ref.points[0];
    for (const auto& p : ref.points) {
      for (int k = 0; k < 3; ++k) lo_[k] = std::min(lo_[k], p[k]);
    }
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const auto c = cell_of(ref.points[i]);
      for (int k = 0; k < 3; ++k) extent_[k] = std::max(extent_[k], c[k]);
      cells_[key(c)].push_back(i);
    }
  }

  [[nodiscard]] std::array<long, 3> cell_of(const std::array<double, 3>& p) const {
    std::array<long, 3> c{};
    for (int k = 0; k < 3; ++k) c[k] = static_cast<long>(std::floor((p[k] - lo_[k]) / cell_));
    return c;
  }

  // Calls f(index) for every reference point in cells at Chebyshev ring r
  // around cell c.
  template <typename F>
  void visit_ring(const std::array<long, 3>& c, long r, F&& f) const {
    for (long i = -r; i <= r; ++i) {
      for (long j = -r; j <= r; ++j) {
        for (long k = -r; k <= r; ++k) {
          if (std::max({std::labs(i), std::labs(j), std::labs(k)}) != r) continue;
          auto it = cells_.find(key({c[0] + i, c[1] + j, c[2] + k}));
          if (it == cells_.end()) continue;
          for (std::size_t idx : it->second) f(idx);
        }
      }
    }
  }

  // Ring beyond which no occupied cell can exist.
  [[nodiscard]] long max_ring(const std::array<long, 3>& c) const {
    long r = 0;
    for (int k = 0; k < 3; ++k) r = std::max({r, std::labs(c[k]), std::labs(extent_[k] - c[k])});
    return r;
  }

  [[nodiscard]] const PointCloud& ref() const { return ref_; }
  [[nodiscard]] double cell() const { return cell_; }

 private:
  static std::uint64_t key(const std::array<long, 3>& c) {
    // 21 bits per axis with an offset; bucket grids here are far smaller.
    const auto u = [](long v) { return static_cast<std::uint64_t>(v + (1L << 20)) & ((1ULL << 21) - 1); };
    return (u(c[0]) << 42) | (u(c[1]) << 21) | u(c[2]);
  }

  const PointCloud& ref_;
  double cell_;
  std::array<double, 3> lo_{};
  std::array<long, 3> extent_{0, 0, 0};
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

double auto_cell(const PointCloud& ref) {
  const double diag = bbox_diagonal(ref);
  if (diag <= 0.0) return 1.0;
  // Roughly a handful of points per occupied cell for surface-like clouds.
  return std::max(diag / std::sqrt(static_cast<double>(ref.size())), diag * 1e-6);
}

double fraction_within(const PointCloud& query, const PointCloud& ref, double tau) {
  const double tau2 = tau * tau;
  // Cap the bucket count: never use cells much smaller than the cloud spacing.
  const Buckets grid(ref, std::max(tau, auto_cell(ref) * 1e-3));
  const long rings = static_cast<long>(std::ceil(tau / grid.cell()));
  std::size_t hits = 0;
  for (const auto& q : query.points) {
    const auto c = grid.cell_of(q);
    bool found = false;
    const long limit = std::min(rings + 1, grid.max_ring(c));  // +1 for rounding at cell edges
    for (long r = 0; r <= limit && !found; ++r) {
      grid.visit_ring(c, r, [&](std::size_t i) {
        if (!found && sq_dist(q, ref.points[i]) <= tau2) found = true;
      });
    }
    hits += found;
  }
  return static_cast<double>(hits) / static_cast<double>(query.size());
}

double f_from(double precision, double recall) {
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

std::vector<double> nearest_sq_dist(const PointCloud& query, const PointCloud& ref) {
  require_nonempty(query, ref, "nearest_sq_dist");
  const Buckets grid(ref, auto_cell(ref));
  const double h = grid.cell();
  std::vector<double> out(query.size());
  for (std::size_t qi = 0; qi < query.size(); ++qi) {
    const auto& q = query.points[qi];
    const auto c = grid.cell_of(q);
    double best = std::numeric_limits<double>::infinity();
    const long limit = grid.max_ring(c);
    for (long r = 0; r <= limit; ++r) {
      grid.visit_ring(c, r, [&](std::size_t i) { best = std::min(best, sq_dist(q, ref.points[i])); });
      // Points in ring r+1 lie at least r cells away; the half-cell margin
      // absorbs rounding in the cell assignment.
      const double bound = (static_cast<double>(r) - 0.5) * h;
      if (bound > 0.0 && best <= bound * bound) break;
    }
    out[qi] = best;
  }
  return out;
}

double fscore(const PointCloud& a, const PointCloud& b, double tau) {
  require_nonempty(a, b, "fscore");
  if (!(tau > 0.0)) throw DomainError("fscore: tau must be positive");
  return f_from(fraction_within(a, b, tau), fraction_within(b, a, tau));
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  require_nonempty(a, b, "chamfer");
  const auto ab = nearest_sq_dist(a, b);
  const auto ba = nearest_sq_dist(b, a);
  double sa = 0.0, sb = 0.0;
  for (double d : ab) sa += d;
  for (double d : ba) sb += d;
  return 0.5 * (sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size()));
}

double fscore_brute(const PointCloud& a, const PointCloud& b, double tau) {
  require_nonempty(a, b, "fscore");
  if (!(tau > 0.0)) throw DomainError("fscore: tau must be positive");
  const double tau2 = tau * tau;
  auto frac = [&](const PointCloud& q, const PointCloud& r) {
    std::size_t hits = 0;
    for (const auto& p : q.points) {
      for (const auto& s : r.points) {
        if (sq_dist(p, s) <= tau2) {
          ++hits;
          break;
        }
      }
    }
    return static_cast<double>(hits) / static_cast<double>(q.size());
  };
  return f_from(frac(a, b), frac(b, a));
}

double chamfer_brute(const PointCloud& a, const PointCloud& b) {
  require_nonempty(a, b, "chamfer");
  auto side = [](const PointCloud& q, const PointCloud& r) {
    double s = 0.0;
    for (const auto& p : q.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& t : r.points) best = std::min(best, sq_dist(p, t));
      s += best;
    }
    return s / static_cast<double>(q.size());
  };
  return 0.5 * (side(a, b) + side(b, a));
}

}  // namespace thz::metrics
