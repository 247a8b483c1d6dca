#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "thz/common.hpp"

namespace thz::tomo {

/// Parallel-beam projections: one row per angle, one column per detector bin.
struct Sinogram {
  Image data;
  std::vector<double> angles_deg;
  double bin_size = 1.0;  ///< physical width of one detector bin (and one pixel)
};

struct Volume {
  Grid3 data;  ///< (height, row, col)
  double voxel_size = 1.0;
};

/// Line integrals of a square image at one angle. Any angle is accepted here;
/// forward_radon restricts to [0, 180). Sampling is bilinear at half-pixel
/// steps along each ray and the result is scaled by `pixel_size`.
std::vector<double> project_angle(const Image& image, double theta_deg, double pixel_size = 1.0);

/// Adjoint of project_angle: scatters `row` back onto `image` (accumulating).
void backproject_adjoint(std::span<const double> row, double theta_deg, double pixel_size,
                         Image& image);

Sinogram forward_radon(const Image& image, std::span<const double> angles_deg, double pixel_size = 1.0);

enum class FbpFilter {
  kRamp,         ///< pure band-limited ramp
  kRampRolloff,  ///< ramp with raised-cosine rolloff above 0.8 of Nyquist
  kSheppLogan,
};

/// Filtered back-projection onto an S x S grid (S = detector bins).
Image fbp(const Sinogram& sino, FbpFilter filter = FbpFilter::kRampRolloff);

struct SartOptions {
  int iterations = 20;
  double relaxation = 0.25;
  bool nonnegative = true;
  std::optional<Image> init;
};

struct SartResult {
  Image image;
  /// ||b - A x||_2 before the first sweep and after every sweep.
  std::vector<double> residuals;
};

SartResult sart(const Sinogram& sino, const SartOptions& options = {});

enum class ReconMethod { kFbp, kSart };

struct ReconOptions {
  ReconMethod method = ReconMethod::kFbp;
  FbpFilter filter = FbpFilter::kRampRolloff;
  SartOptions sart;
  bool clamp_nonnegative = true;
};

struct VolumeRecon {
  Volume volume;
  /// Per-slice SART residual histories (empty for FBP).
  std::vector<std::vector<double>> residuals;
};

/// Row h of every view is the projection of slice h; each slice is
/// reconstructed independently and stacked.
VolumeRecon reconstruct_volume(std::span<const Image> views, std::span<const double> angles_deg,
                               double pixel_size, const ReconOptions& options = {});

/// Writes meta.json + volume.f32 and, optionally, 8-bit PGM slice previews.
void export_volume(const std::filesystem::path& dir, const Volume& volume, bool previews);
Volume load_volume(const std::filesystem::path& dir);

}  // namespace thz::tomo
