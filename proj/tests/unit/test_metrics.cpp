#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "oracles.hpp"
#include "thz/metrics.hpp"

namespace {

using namespace thz::testing;

using namespace thz;
using namespace thz::metrics;

TEST(Psnr, IdenticalIsSentinel) {
  Image a(4, 4, 0.3);
  EXPECT_EQ(psnr(a, a), kPsnrIdentical);
  EXPECT_TRUE(std::isinf(kPsnrIdentical));
}

TEST(Psnr, ConstantOffsetIsTwentyDb) {
  const Image a(6, 5, 0.2), b(6, 5, 0.3);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
}

TEST(Psnr, MatchesDoubleLoop) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image a(8, 8), b(8, 8);
  for (double& v : a.data()) v = u(rng);
  for (double& v : b.data()) v = u(rng);
  double mse = 0.0;
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) mse += (a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
  mse /= 64.0;
  EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(1.0 / mse), 1e-9);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
}

TEST(Psnr, StrictlyDecreasingInNoiseVariance) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  std::normal_distribution<double> g;
  Image clean(64, 64);
  for (double& v : clean.data()) v = u(rng);
  std::vector<double> unit(clean.size());
  for (double& v : unit) v = g(rng);
  double prev = kPsnrIdentical;
  for (double sigma : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    Image noisy = clean;
    for (std::size_t k = 0; k < unit.size(); ++k) noisy.data()[k] += sigma * unit[k];
    const double p = psnr(noisy, clean);
    EXPECT_LT(p, prev) << sigma;
    prev = p;
  }
}

TEST(Psnr, ShapeErrors) {
  EXPECT_THROW(psnr(Image(2, 3), Image(3, 2)), ShapeError);
  EXPECT_THROW(psnr(Image(), Image()), ShapeError);
}

TEST(CrossSectionMse, TrivialCases) {
  const Grid3 a(3, 4, 5, 0.25), b(3, 4, 5, 0.75);
  EXPECT_EQ(cross_section_mse(a, a), 0.0);
  EXPECT_NEAR(cross_section_mse(a, b), 0.25, 1e-15);
  EXPECT_THROW(cross_section_mse(a, Grid3(3, 5, 4)), ShapeError);
}

TEST(CrossSectionMse, MatchesTripleLoop) {
  std::mt19937_64 rng(8);
  const auto a = random_grid(rng, 4), b = random_grid(rng, 4);
  double total = 0.0;
  for (std::size_t d = 0; d < 4; ++d) {
    double s = 0.0;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) s += std::pow(a(d, r, c) - b(d, r, c), 2);
    total += s / 16.0;
  }
  EXPECT_NEAR(cross_section_mse(a, b), total / 4.0, 1e-12);
}

TEST(Iou, TrivialCases) {
  Grid3 a(4, 4, 4), b(4, 4, 4);
  EXPECT_EQ(iou(a, b), 1.0);  // both empty
  a(0, 0, 0) = 1.0;
  EXPECT_EQ(iou(a, a), 1.0);
  b(3, 3, 3) = 1.0;
  EXPECT_EQ(iou(a, b), 0.0);
  EXPECT_THROW(iou(a, Grid3(4, 4, 5)), ShapeError);
}

TEST(Iou, HalfOverlappingCubesGiveOneThird) {
  Grid3 a(8, 8, 8), b(8, 8, 8);
  for (std::size_t d = 0; d < 4; ++d)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        a(d, r, c) = 1.0;
        b(d, r, c + 2) = 1.0;
      }
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
}

TEST(Iou, ThresholdIsInclusive) {
  Grid3 a(1, 1, 2), b(1, 1, 2);
  a(0, 0, 0) = 0.5;
  b(0, 0, 0) = 0.5;
  b(0, 0, 1) = 0.4999;
  EXPECT_EQ(iou(a, b), 1.0);
}

TEST(MinmaxNormalize, RangeAndConstant) {
  Grid3 g(2, 2, 2);
  for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] = 3.0 + 2.0 * static_cast<double>(k);
  const auto n = minmax_normalize(g);
  EXPECT_EQ(*std::min_element(n.data().begin(), n.data().end()), 0.0);
  EXPECT_EQ(*std::max_element(n.data().begin(), n.data().end()), 1.0);
  const auto z = minmax_normalize(Grid3(2, 2, 2, 7.0));
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(PointCloud, SingleVoxelAndEmpty) {
  Grid3 g(5, 5, 5);
  EXPECT_TRUE(volume_to_pointcloud(g).empty());
  g(1, 2, 3) = 1.0;
  const auto pc = volume_to_pointcloud(g, 0.5, 2.0);
  ASSERT_EQ(pc.size(), 1u);
  EXPECT_EQ(pc.points[0], (std::array<double, 3>{3.0, 5.0, 7.0}));
}

TEST(PointCloud, SolidCubeHasTwentySixBoundaryPoints) {
  Grid3 g(5, 5, 5);
  for (std::size_t d = 1; d < 4; ++d)
    for (std::size_t r = 1; r < 4; ++r)
      for (std::size_t c = 1; c < 4; ++c) g(d, r, c) = 1.0;
  const auto pc = volume_to_pointcloud(g);
  EXPECT_EQ(pc.size(), 26u);
  for (const auto& p : pc.points) EXPECT_FALSE(p[0] == 2.5 && p[1] == 2.5 && p[2] == 2.5);
  // A cube touching the grid faces is bounded by the outside too.
  EXPECT_EQ(volume_to_pointcloud(Grid3(3, 3, 3, 1.0)).size(), 26u);
}

TEST(PointCloud, BoundaryMatchesNeighbourEnumeration) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_grid(rng, 6);
    std::size_t expected = 0;
    const auto occ = [&](long d, long r, long c) {
      if (d < 0 || r < 0 || c < 0 || d >= 6 || r >= 6 || c >= 6) return false;
      return g(d, r, c) >= 0.3;
    };
    for (long d = 0; d < 6; ++d)
      for (long r = 0; r < 6; ++r)
        for (long c = 0; c < 6; ++c) {
          if (!occ(d, r, c)) continue;
          expected += !(occ(d - 1, r, c) && occ(d + 1, r, c) && occ(d, r - 1, c) && occ(d, r + 1, c) &&
                        occ(d, r, c - 1) && occ(d, r, c + 1));
        }
    EXPECT_EQ(volume_to_pointcloud(g, 0.3).size(), expected);
  }
}

TEST(Fscore, TrivialCases) {
  std::mt19937_64 rng(2);
  const auto a = random_cloud(rng, 30, 5.0, false);
  for (double tau : {1e-6, 0.1, 10.0}) EXPECT_EQ(fscore(a, a, tau), 1.0);
  PointCloud p, q;
  p.points = {{0.0, 0.0, 0.0}};
  q.points = {{0.0, 3.0, 4.0}};
  EXPECT_EQ(fscore(p, q, 4.99), 0.0);
  EXPECT_EQ(fscore(p, q, 5.0), 1.0);
}

TEST(Fscore, Errors) {
  PointCloud p, empty;
  p.points = {{0.0, 0.0, 0.0}};
  EXPECT_THROW(fscore(p, empty, 1.0), DomainError);
  EXPECT_THROW(fscore(empty, p, 1.0), DomainError);
  EXPECT_THROW(fscore(p, p, 0.0), DomainError);
  EXPECT_THROW(chamfer(p, empty), DomainError);
}

TEST(Chamfer, TrivialCases) {
  std::mt19937_64 rng(3);
  const auto a = random_cloud(rng, 40, 5.0, false);
  EXPECT_EQ(chamfer(a, a), 0.0);
  PointCloud p, q;
  p.points = {{1.0, 1.0, 1.0}};
  q.points = {{1.0, 3.0, 1.0}};
  EXPECT_DOUBLE_EQ(chamfer(p, q), 4.0);
}

TEST(Chamfer, ZeroIffSameSet) {
  PointCloud a, b;
  a.points = {{0, 0, 0}, {1, 0, 0}, {0, 2, 0}};
  b.points = {{0, 2, 0}, {0, 0, 0}, {1, 0, 0}, {1, 0, 0}};
  EXPECT_EQ(chamfer(a, b), 0.0);
  b.points.push_back({0, 0, 1e-3});
  EXPECT_GT(chamfer(a, b), 0.0);
}

// Accelerated paths against the references above and the library's own
// brute-force versions, on 100 random instances of up to 200 points. Half of
// the instances sit on a half-unit lattice so exact ties at tau occur.
TEST(ShapeMetrics, AcceleratedMatchesBruteForce) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> count(1, 200);
  std::uniform_real_distribution<double> extent(0.5, 20.0);
  for (int trial = 0; trial < 100; ++trial) {
    const bool lattice = trial % 2 == 0;
    const double e = lattice ? 4.0 : extent(rng);
    const auto a = random_cloud(rng, count(rng), e, lattice);
    const auto b = random_cloud(rng, count(rng), e, lattice);
    for (double tau : {0.5, 1.0, 0.05 * e, default_tau(b)}) {
      if (!(tau > 0.0)) continue;
      const double f = fscore(a, b, tau);
      EXPECT_EQ(f, ref_fscore(a, b, tau)) << "trial " << trial << " tau " << tau;
      EXPECT_EQ(f, fscore_brute(a, b, tau));
      EXPECT_EQ(f, fscore(b, a, tau));
    }
    const double c = chamfer(a, b), ref = ref_chamfer(a, b);
    EXPECT_NEAR(c, ref, 1e-9 * std::max(1.0, ref)) << "trial " << trial;
    EXPECT_NEAR(chamfer_brute(a, b), ref, 1e-9 * std::max(1.0, ref));
    EXPECT_EQ(c, chamfer(b, a));

    const auto nn = nearest_sq_dist(a, b);
    for (std::size_t i = 0; i < a.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& s : b.points) best = std::min(best, sq(a.points[i], s));
      EXPECT_EQ(nn[i], best);
    }
  }
}

TEST(ShapeMetrics, IouMatchesReferenceOnRandomVolumes) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> side(1, 8);
  std::uniform_real_distribution<double> thr(0.05, 0.95);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = side(rng);
    const auto a = random_grid(rng, n), b = random_grid(rng, n);
    const double t = thr(rng);
    EXPECT_EQ(iou(a, b, t), ref_iou(a, b, t));
    EXPECT_EQ(iou(a, b, t), iou(b, a, t));
  }
}

TEST(ShapeMetrics, PointCloudMetricsOnVolumes) {
  // Clouds from voxel volumes: the path used by evaluation.
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ga = random_grid(rng, 8), gb = random_grid(rng, 8);
    const auto a = volume_to_pointcloud(ga, 0.4, 0.5), b = volume_to_pointcloud(gb, 0.4, 0.5);
    ASSERT_FALSE(a.empty());
    ASSERT_FALSE(b.empty());
    const double tau = default_tau(b);
    EXPECT_EQ(fscore(a, b, tau), ref_fscore(a, b, tau));
    EXPECT_NEAR(chamfer(a, b), ref_chamfer(a, b), 1e-9);
  }
}

TEST(ShapeMetrics, DefaultTauIsOnePercentOfDiagonal) {
  PointCloud pc;
  pc.points = {{0, 0, 0}, {3, 4, 12}};
  EXPECT_DOUBLE_EQ(bbox_diagonal(pc), 13.0);
  EXPECT_DOUBLE_EQ(default_tau(pc), 0.13);
}

}  // namespace
