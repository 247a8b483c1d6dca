#pragma once

#include <array>
#include <limits>
#include <vector>

#include "thz/common.hpp"
#include "thz/tomo.hpp"

namespace thz::metrics {

/// Returned by psnr for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(1 / mse) with peak 1; kPsnrIdentical when mse == 0.
double psnr(const Image& x, const Image& y);

/// Mean over height slices of the per-slice MSE.
double cross_section_mse(const Grid3& vol, const Grid3& gt);

/// |A and B| / |A or B| after binarising both at `threshold` (value >= threshold
/// is occupied). Two empty volumes give 1.
double iou(const Grid3& a, const Grid3& b, double threshold = 0.5);

/// Rescales values to [0, 1]; a constant grid maps to all zeros.
Grid3 minmax_normalize(const Grid3& g);

struct PointCloud {
  std::vector<std::array<double, 3>> points;  ///< (z, y, x) in mm
  [[nodiscard]] std::size_t size() const { return points.size(); }
  [[nodiscard]] bool empty() const { return points.empty(); }
};

/// Centres of occupied voxels with at least one unoccupied 6-neighbour (the
/// outside of the grid counts as unoccupied), scaled by `voxel_size`.
PointCloud volume_to_pointcloud(const Grid3& vol, double threshold = 0.5, double voxel_size = 1.0);

/// Bounding-box diagonal of a cloud.
double bbox_diagonal(const PointCloud& pc);

/// Default F-score distance: 1% of the ground-truth bounding-box diagonal.
double default_tau(const PointCloud& gt);

/// Grid-bucketed. Empty cloud or tau <= 0 raises DomainError.
double fscore(const PointCloud& a, const PointCloud& b, double tau);
/// 1/2 (mean_A min_B |a-b|^2 + mean_B min_A |a-b|^2), grid-bucketed.
double chamfer(const PointCloud& a, const PointCloud& b);

/// O(M N) references for the two functions above.
double fscore_brute(const PointCloud& a, const PointCloud& b, double tau);
double chamfer_brute(const PointCloud& a, const PointCloud& b);

/// Squared distance from every point of `query` to its nearest point in `ref`.
std::vector<double> nearest_sq_dist(const PointCloud& query, const PointCloud& ref);

}  // namespace thz::metrics
