#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "thz/phantom.hpp"
#include "thz/tomo.hpp"

namespace {

using namespace thz::testing;

using namespace thz;
using namespace thz::tomo;
namespace fs = std::filesystem;

double max_abs(const Image& img) {
  double m = 0.0;
  for (double v : img.data()) m = std::max(m, std::abs(v));
  return m;
}

phantom::ShapeSpec spec_from(const std::string& grid, double voxel, const std::string& primitives) {
  return phantom::parse_shape_spec(R"({"grid":)" + grid + R"(,"voxel_size_mm":)" + std::to_string(voxel) +
                                   R"(,"primitives":)" + primitives + "}");
}

TEST(ForwardRadon, DiskChordLength) {
  const std::size_t n = 96;
  const double r = 30.0, pixel = 0.5;
  const auto sino = forward_radon(disk(n, r), uniform_angles(6), pixel);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  for (std::size_t a = 0; a < 6; ++a) {
    for (std::size_t j = 0; j < n; ++j) {
      const double s = static_cast<double>(j) - c;
      const double chord = s * s < r * r ? 2.0 * std::sqrt(r * r - s * s) * pixel : 0.0;
      EXPECT_NEAR(sino.data(a, j), chord, 1.5 * pixel) << "angle " << a << " bin " << j;
    }
  }
}

TEST(ForwardRadon, ZeroImageGivesZeroSinogram) {
  const auto sino = forward_radon(Image(32, 32), uniform_angles(10));
  EXPECT_EQ(max_abs(sino.data), 0.0);
}

TEST(ForwardRadon, RotationallySymmetricRowsAgree) {
  // Smooth radial profile so interpolation error stays small.
  const std::size_t n = 80;
  Image img(n, n);
  const double c = (n - 1) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double rr = (i - c) * (i - c) + (j - c) * (j - c);
      img(i, j) = std::exp(-rr / (2.0 * 10.0 * 10.0));
    }
  }
  const auto sino = forward_radon(img, uniform_angles(12));
  for (std::size_t a = 1; a < 12; ++a) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      num += std::pow(sino.data(a, j) - sino.data(0, j), 2);
      den += std::pow(sino.data(0, j), 2);
    }
    EXPECT_LT(std::sqrt(num / den), 1e-3) << "angle " << a;
  }
}

TEST(ForwardRadon, MassPreservation) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 48;
  Image img(n, n);
  const double c = (n - 1) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if ((i - c) * (i - c) + (j - c) * (j - c) < 0.35 * 0.35 * n * n) img(i, j) = u(rng);
    }
  }
  const double pixel = 0.25;
  const double mass = std::accumulate(img.data().begin(), img.data().end(), 0.0) * pixel;
  const std::vector<double> angles{0.0, 17.0, 45.0, 90.0, 133.0, 179.0};
  const auto sino = forward_radon(img, angles, pixel);
  for (std::size_t a = 0; a < angles.size(); ++a) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += sino.data(a, j);
    EXPECT_NEAR(row / mass, 1.0, 1e-3) << "angle " << angles[a];
  }
}

TEST(ForwardRadon, AdjointIdentity) {
  // <A x, y> == <x, A^T y> for the projector pair used by SART.
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  const std::size_t n = 24;
  Image x(n, n);
  for (double& v : x.data()) v = g(rng);
  std::vector<double> y(n);
  for (double& v : y) v = g(rng);
  for (double theta : {0.0, 30.0, 77.5, 150.0}) {
    const auto ax = project_angle(x, theta, 0.7);
    Image aty(n, n);
    backproject_adjoint(y, theta, 0.7, aty);
    const double lhs = std::inner_product(ax.begin(), ax.end(), y.begin(), 0.0);
    const double rhs = std::inner_product(x.data().begin(), x.data().end(), aty.data().begin(), 0.0);
    EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(ForwardRadon, InputErrors) {
  EXPECT_THROW(forward_radon(Image(8, 9), uniform_angles(4)), ShapeError);
  EXPECT_THROW(forward_radon(Image(8, 8), std::vector<double>{180.0}), RangeError);
  EXPECT_THROW(forward_radon(Image(8, 8), std::vector<double>{-1.0}), RangeError);
}

TEST(Fbp, DiskRoundTrip) {
  const std::size_t n = 128;
  const double r = 40.0;
  const auto truth = disk(n, r);
  for (auto filter : {FbpFilter::kRamp, FbpFilter::kRampRolloff, FbpFilter::kSheppLogan}) {
    const auto rec = fbp(forward_radon(truth, uniform_angles(60)), filter);
    ASSERT_EQ(rec.rows(), n);
    EXPECT_LT(disk_interior_rel_rmse(rec, truth, r, 2.0), 0.05) << static_cast<int>(filter);
  }
}

TEST(Fbp, ScaleFollowsBinSize) {
  const auto truth = disk(64, 20.0, 0.8);
  const auto rec = fbp(forward_radon(truth, uniform_angles(60), 0.3));
  EXPECT_LT(disk_interior_rel_rmse(rec, truth, 20.0, 2.0), 0.05);
}

TEST(Fbp, ZeroAndLinearity) {
  Sinogram zero;
  zero.angles_deg = uniform_angles(8);
  zero.data = Image(8, 16);
  EXPECT_EQ(max_abs(fbp(zero)), 0.0);

  auto sino = forward_radon(disk(32, 10.0), uniform_angles(20));
  const auto once = fbp(sino);
  for (double& v : sino.data.data()) v *= 2.0;
  const auto twice = fbp(sino);
  for (std::size_t k = 0; k < once.size(); ++k) EXPECT_NEAR(twice.data()[k], 2.0 * once.data()[k], 1e-12);
}

TEST(Fbp, SingleAngleIsDegenerate) {
  EXPECT_THROW(fbp(forward_radon(disk(16, 4.0), std::vector<double>{0.0})), DomainError);
}

TEST(Fbp, RejectsUnorderedAngles) {
  Sinogram s;
  s.angles_deg = {10.0, 5.0};
  s.data = Image(2, 8);
  EXPECT_THROW(fbp(s), ConfigError);
}

TEST(Sart, NoWorseThanFbpOnDisk) {
  const std::size_t n = 64;
  const double r = 20.0;
  const auto truth = disk(n, r);
  const auto sino = forward_radon(truth, uniform_angles(60));
  const double e_fbp = rel_rmse(fbp(sino), truth);
  SartOptions opt;
  opt.iterations = 20;
  opt.relaxation = 0.25;
  const auto res = sart(sino, opt);
  EXPECT_LE(rel_rmse(res.image, truth), e_fbp);
}

TEST(Sart, ResidualNonincreasing) {
  const auto sino = forward_radon(disk(64, 20.0), uniform_angles(60));
  SartOptions opt;
  opt.iterations = 20;
  opt.relaxation = 0.25;
  const auto res = sart(sino, opt);
  ASSERT_EQ(res.residuals.size(), 21u);
  for (std::size_t k = 1; k < res.residuals.size(); ++k) {
    EXPECT_LE(res.residuals[k], res.residuals[k - 1] * (1.0 + 1e-12)) << "sweep " << k;
  }
  EXPECT_LT(res.residuals.back(), 0.1 * res.residuals.front());
}

TEST(Sart, ZeroIsFixedPoint) {
  Sinogram s;
  s.angles_deg = uniform_angles(12);
  s.data = Image(12, 20);
  for (int iters : {1, 5}) {
    SartOptions opt;
    opt.iterations = iters;
    EXPECT_EQ(max_abs(sart(s, opt).image), 0.0);
  }
}

TEST(Sart, LinearWithoutClamp) {
  auto sino = forward_radon(disk(24, 7.0), uniform_angles(16));
  SartOptions opt;
  opt.iterations = 3;
  opt.nonnegative = false;
  const auto once = sart(sino, opt).image;
  for (double& v : sino.data.data()) v *= 3.0;
  const auto thrice = sart(sino, opt).image;
  for (std::size_t k = 0; k < once.size(); ++k) EXPECT_NEAR(thrice.data()[k], 3.0 * once.data()[k], 1e-10);
}

TEST(Sart, OptionErrors) {
  const auto sino = forward_radon(disk(16, 4.0), uniform_angles(4));
  SartOptions opt;
  for (double lambda : {0.0, -0.1, 1.01}) {
    opt.relaxation = lambda;
    EXPECT_THROW(sart(sino, opt), ConfigError) << lambda;
  }
  opt.relaxation = 1.0;
  EXPECT_NO_THROW(sart(sino, opt));
  opt.iterations = 0;
  EXPECT_THROW(sart(sino, opt), ConfigError);
  opt.iterations = 1;
  opt.init = Image(15, 15);
  EXPECT_THROW(sart(sino, opt), ShapeError);
}

TEST(ReconstructVolume, SphereOccupancyWithinTenPercent) {
  const auto ph = phantom::make_phantom(spec_from("96", 1.0, R"([{"type":"sphere","radius_mm":30}])"));
  const auto angles = uniform_angles(60);
  std::vector<Image> views;
  for (double a : angles) views.push_back(phantom::project_thickness(ph, a));
  const auto rec = reconstruct_volume(views, angles, ph.voxel_size_mm);
  ASSERT_TRUE(rec.volume.data.same_shape(ph.grid));
  double truth = 0.0, got = 0.0;
  for (double v : ph.grid.data()) truth += v >= 0.5;
  for (double v : rec.volume.data.data()) got += v >= 0.5;
  EXPECT_NEAR(got / truth, 1.0, 0.10);
}

TEST(ReconstructVolume, PhantomInteriorRmse) {
  // Cylinder with a box cut-out, 128 x 128 slices.
  const auto ph = phantom::make_phantom(spec_from("[8,128,128]", 0.5, R"([
      {"type":"cylinder","radius_mm":25,"height_mm":10},
      {"type":"box","op":"difference","center_mm":[6,-4,0],"size_mm":[10,8,20]}])"));
  const auto angles = uniform_angles(60);
  std::vector<Image> views;
  for (double a : angles) views.push_back(phantom::project_thickness(ph, a));
  const auto rec = reconstruct_volume(views, angles, ph.voxel_size_mm);
  // Interior: voxels whose 5x5 in-slice neighbourhood is uniform in the truth.
  const auto& g = ph.grid;
  double num = 0.0, den = 0.0;
  for (std::size_t d = 0; d < g.depth(); ++d) {
    for (std::size_t i = 2; i + 2 < g.rows(); ++i) {
      for (std::size_t j = 2; j + 2 < g.cols(); ++j) {
        bool uniform = true;
        for (int a = -2; a <= 2 && uniform; ++a)
          for (int b = -2; b <= 2 && uniform; ++b) uniform = g(d, i + a, j + b) == g(d, i, j);
        if (!uniform || g(d, i, j) == 0.0) continue;
        num += std::pow(rec.volume.data(d, i, j) - g(d, i, j), 2);
        den += g(d, i, j) * g(d, i, j);
      }
    }
  }
  ASSERT_GT(den, 0.0);
  EXPECT_LT(std::sqrt(num / den), 0.08);
}

TEST(ReconstructVolume, ZeroViewsGiveZeroVolume) {
  const std::vector<Image> views(6, Image(5, 12));
  for (auto method : {ReconMethod::kFbp, ReconMethod::kSart}) {
    ReconOptions opt;
    opt.method = method;
    opt.sart.iterations = 2;
    const auto rec = reconstruct_volume(views, uniform_angles(6), 1.0, opt);
    EXPECT_EQ(rec.volume.data.depth(), 5u);
    for (double v : rec.volume.data.data()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(rec.residuals.size(), method == ReconMethod::kSart ? 5u : 0u);
  }
}

TEST(ReconstructVolume, SlicesArePermutedWithRows) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t h = 4, bins = 16, nviews = 10;
  std::vector<Image> views(nviews, Image(h, bins));
  for (auto& v : views)
    for (double& x : v.data()) x = u(rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<Image> permuted(nviews, Image(h, bins));
  for (std::size_t k = 0; k < nviews; ++k)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < bins; ++c) permuted[k](r, c) = views[k](perm[r], c);
  const auto angles = uniform_angles(nviews);
  const auto a = reconstruct_volume(views, angles, 1.0).volume.data;
  const auto b = reconstruct_volume(permuted, angles, 1.0).volume.data;
  for (std::size_t r = 0; r < h; ++r) EXPECT_EQ(b.slice(r), a.slice(perm[r]));
}

TEST(ReconstructVolume, ViewOrderDoesNotMatter) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Image> views(6, Image(2, 10));
  for (auto& v : views)
    for (double& x : v.data()) x = u(rng);
  auto angles = uniform_angles(6);
  const auto a = reconstruct_volume(views, angles, 1.0).volume.data;
  std::reverse(views.begin(), views.end());
  std::reverse(angles.begin(), angles.end());
  const auto b = reconstruct_volume(views, angles, 1.0).volume.data;
  EXPECT_EQ(a, b);
}

TEST(ReconstructVolume, ShapeErrors) {
  std::vector<Image> views{Image(4, 8), Image(4, 9)};
  EXPECT_THROW(reconstruct_volume(views, uniform_angles(2), 1.0), ShapeError);
  views[1] = Image(4, 8);
  EXPECT_THROW(reconstruct_volume(views, uniform_angles(3), 1.0), ShapeError);
  EXPECT_THROW(reconstruct_volume(std::vector<Image>{}, std::vector<double>{}, 1.0), ShapeError);
}

TEST(VolumeIo, ExportLoadRoundTrip) {
  const auto dir = fs::temp_directory_path() / "thz_tomo_volume_io";
  fs::remove_all(dir);
  Volume v;
  v.voxel_size = 0.375;
  v.data = Grid3(3, 4, 5);
  for (std::size_t k = 0; k < v.data.size(); ++k) v.data.data()[k] = 0.25 * static_cast<double>(k);
  export_volume(dir, v, true);
  EXPECT_TRUE(fs::exists(dir / "previews" / "slice_0002.pgm"));
  EXPECT_EQ(fs::file_size(dir / "volume.f32"), v.data.size() * 4);
  const auto back = load_volume(dir);
  EXPECT_EQ(back.voxel_size, 0.375);
  EXPECT_EQ(back.data, v.data);  // quarter steps are exact in float32
  fs::remove_all(dir);
  EXPECT_THROW(load_volume(dir), MissingPrerequisite);
}

}  // namespace
