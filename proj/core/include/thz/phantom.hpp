#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "thz/common.hpp"
#include "thz/signal.hpp"

namespace thz::phantom {

enum class Primitive { kSphere, kBox, kCylinder, kTorus, kHelix };
enum class CsgOp { kUnion, kDifference };
enum class Axis { kX, kY, kZ };

/// One CSG element. Lengths in mm; positions relative to the grid centre with
/// x along columns, y along rows and z along height (slice index).
struct ShapeElement {
  Primitive type = Primitive::kSphere;
  CsgOp op = CsgOp::kUnion;
  std::array<double, 3> center_mm{0.0, 0.0, 0.0};
  double radius_mm = 0.0;        // sphere, cylinder, torus major, helix sweep
  double minor_radius_mm = 0.0;  // torus tube, helix tube
  std::array<double, 3> size_mm{0.0, 0.0, 0.0};  // box extents (x, y, z)
  double height_mm = 0.0;        // cylinder
  double pitch_mm = 0.0;         // helix rise per turn
  double turns = 0.0;            // helix
  Axis axis = Axis::kZ;          // cylinder and torus symmetry axis
};

struct ShapeSpec {
  std::array<std::size_t, 3> grid{64, 64, 64};  ///< (height, rows, cols)
  double voxel_size_mm = 0.25;
  std::string material_id = "default";
  std::vector<ShapeElement> elements;
};

/// Parses {"grid": N | [D,H,W], "voxel_size_mm", "material", "primitives": [...]}.
/// Errors are ConfigError whose message starts with the JSON pointer of the
/// offending key, prefixed by `where`.
ShapeSpec parse_shape_spec(std::string_view json_text, const std::string& where = "");
std::string shape_spec_to_json(const ShapeSpec& spec);

struct VoxelPhantom {
  Grid3 grid;  ///< occupancy in [0, 1], (height, rows, cols)
  double voxel_size_mm = 0.25;
  std::string material_id = "default";
};

VoxelPhantom make_phantom(const ShapeSpec& spec);

/// Thickness map (height x cols, mm) seen by a parallel beam at `theta_deg`.
Image project_thickness(const VoxelPhantom& phantom, double theta_deg);

/// One projection angle: ground truth, Time-max image and spectral cube.
struct ViewRecord {
  double theta_deg = 0.0;
  Image gt_thickness;  ///< mm
  Image timemax;
  signal::SpectralCube cube;
  std::string object_id;
  std::size_t view_index = 0;
};

/// Air-path (zero thickness) levels used to normalise network inputs.
struct ReferenceLevels {
  double timemax = 1.0;
  std::vector<double> amplitude;
  std::vector<double> phase;
};

ReferenceLevels reference_levels(const signal::MaterialProfile& material,
                                 const signal::ReferencePulse& pulse, const signal::BandSet& bands);

ViewRecord render_view(const Image& thickness_mm, const signal::MaterialProfile& material,
                       const signal::ReferencePulse& pulse, const signal::BandSet& bands);

struct PsfConfig {
  double beam_min_mm = 1.25;
  double k_blur = 1.0;
  double scan_step_mm = 0.25;
};

struct NoiseConfig {
  bool enabled = true;
  double snr_db = 30.0;
};

/// max(beam_min, k_blur * wavelength) in mm.
double psf_fwhm_mm(double f_thz, const PsfConfig& psf);

/// Gaussian PSF blur of every band (applied to the complex field) and of the
/// Time-max image (widest band PSF), then additive Gaussian noise.
ViewRecord corrupt_view(const ViewRecord& view, const PsfConfig& psf, const NoiseConfig& noise,
                        std::uint64_t seed);

/// Separable Gaussian blur with edge replication; identity for FWHM < 1e-3 px.
Image gaussian_blur(const Image& img, double fwhm_px);

struct AngleConfig {
  std::size_t count = 60;
  double start_deg = 0.0;
  double end_deg = 180.0;
};

/// `count` angles uniformly spaced over [start, end).
std::vector<double> make_angles(const AngleConfig& cfg);

struct AugmentParams {
  bool flip_h = false;
  bool flip_v = false;
  int rot90 = 0;  ///< quarter turns counter-clockwise
  std::size_t crop = 128;
  std::size_t crop_row = 0;
  std::size_t crop_col = 0;
};

/// Identity geometry with a centred crop.
AugmentParams identity_augment(std::size_t rows, std::size_t cols, std::size_t crop = 128);
AugmentParams draw_augment(std::uint64_t seed, std::size_t rows, std::size_t cols, std::size_t crop = 128);
/// Same geometric transform for the ground truth, Time-max and all bands.
ViewRecord apply_augment(const ViewRecord& record, const AugmentParams& params);
Image apply_augment(const Image& img, const AugmentParams& params);
ViewRecord augment(const ViewRecord& record, std::uint64_t seed, std::size_t crop = 128);

struct PulseConfig {
  std::size_t length = 1000;
  double dt_ps = 0.1;
  double t0_ps = 20.0;
  double fwhm_ps = 0.516;
};

struct ObjectSpec {
  std::string id;
  ShapeSpec shape;
};

struct DatasetConfig {
  std::vector<ObjectSpec> objects;
  AngleConfig angles;
  PsfConfig psf;
  NoiseConfig noise;
  PulseConfig pulse;
  signal::MaterialProfile material = signal::MaterialProfile::constant(1.55, 0.005);
  signal::BandSet bands = signal::default_band_set();
  std::uint64_t seed = 0;
};

/// A rendered object held in memory: clean and corrupted views share indices.
struct ObjectData {
  std::string id;
  VoxelPhantom phantom;
  std::vector<ViewRecord> clean;
  std::vector<ViewRecord> corrupted;
  double gt_scale_mm = 1.0;  ///< per-object max thickness; targets are gt / scale
};

/// Seed for the corruption stream of one view.
std::uint64_t view_seed(std::uint64_t seed, std::size_t object_index, std::size_t view_index);

ObjectData generate_object(const DatasetConfig& cfg, std::size_t object_index);

struct ManifestObject {
  std::string id;
  std::vector<double> angles_deg;
  double gt_scale_mm = 1.0;
  std::array<std::size_t, 2> image_shape{0, 0};
};

struct DatasetManifest {
  int format_version = 1;
  std::uint64_t seed = 0;
  std::vector<ManifestObject> objects;
  signal::BandSet bands;
  ReferenceLevels reference;
  PsfConfig psf;
  NoiseConfig noise;
  double voxel_size_mm = 0.25;
};

/// Renders every object and writes `<out>/<id>/view_<k>/...` plus manifest.json.
DatasetManifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir);

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);

std::string view_dir_name(std::size_t view_index);

/// Writes one view directory (meta.json, gt/timemax/amp/phase .f32; the clean
/// variant, when given, as *_clean.f32).
void write_view(const std::filesystem::path& dir, const ViewRecord& corrupted,
                const ViewRecord* clean, std::uint64_t seed, double gt_scale_mm);
/// Loads the corrupted variant (or the clean one when `clean` is set).
ViewRecord load_view(const std::filesystem::path& dir, bool clean = false);

}  // namespace thz::phantom
