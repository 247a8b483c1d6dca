#include "thz/tomo.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numeric>

#include "json.hpp"
#include "thz/io.hpp"

namespace thz::tomo {

namespace {

constexpr double kRayStep = 0.5;  // samples per pixel along a ray: 2

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

void require_square(const Image& image, const char* what) {
  if (image.rows() != image.cols() || image.empty())
    throw ShapeError(std::string(what) + ": image must be square and non-empty (pad upstream)");
}

// Visits every bilinear sample of every ray at angle theta. `visit(bin, x, y)`
// receives continuous pixel coordinates (x = column, y = row).
template <class Visit>
void for_each_sample(std::size_t size, double theta_deg, Visit&& visit) {
  const double theta = theta_deg * kPi / 180.0;
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  const double center = (static_cast<double>(size) - 1.0) / 2.0;
  const double lo = -1.0;
  const double hi = static_cast<double>(size);
  const long half = static_cast<long>(std::ceil(static_cast<double>(size) * std::sqrt(2.0) / 2.0 / kRayStep)) + 2;
  for (std::size_t j = 0; j < size; ++j) {
    const double s = static_cast<double>(j) - center;
    const double ax = center + s * ct;
    const double ay = center + s * st;
    // Parameter interval where (x, y) stays inside the bilinear support box.
    double tmin = -static_cast<double>(half) * kRayStep;
    double tmax = static_cast<double>(half) * kRayStep;
    auto clip = [&](double origin, double dir) {
      if (std::abs(dir) < 1e-12) {
        if (origin <= lo || origin >= hi) tmax = tmin - 1.0;
        return;
      }
      double t1 = (lo - origin) / dir;
      double t2 = (hi - origin) / dir;
      if (t1 > t2) std::swap(t1, t2);
      tmin = std::max(tmin, t1);
      tmax = std::min(tmax, t2);
    };
    clip(ax, -st);
    clip(ay, ct);
    if (tmax <= tmin) continue;
    const long k0 = static_cast<long>(std::ceil(tmin / kRayStep));
    const long k1 = static_cast<long>(std::floor(tmax / kRayStep));
    for (long k = k0; k <= k1; ++k) {
      const double t = static_cast<double>(k) * kRayStep;
      visit(j, ax - t * st, ay + t * ct);
    }
  }
}

struct Bilinear {
  long x0, y0;
  double wx, wy;
};

inline Bilinear bilinear_at(double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  return {static_cast<long>(fx), static_cast<long>(fy), x - fx, y - fy};
}

inline double sample(const Image& img, double x, double y) {
  const auto b = bilinear_at(x, y);
  const long n = static_cast<long>(img.cols());
  double v = 0.0;
  const double w[4] = {(1 - b.wx) * (1 - b.wy), b.wx * (1 - b.wy), (1 - b.wx) * b.wy, b.wx * b.wy};
  const long xs[4] = {b.x0, b.x0 + 1, b.x0, b.x0 + 1};
  const long ys[4] = {b.y0, b.y0, b.y0 + 1, b.y0 + 1};
  for (int i = 0; i < 4; ++i) {
    if (xs[i] >= 0 && xs[i] < n && ys[i] >= 0 && ys[i] < n) {
      v += w[i] * img(static_cast<std::size_t>(ys[i]), static_cast<std::size_t>(xs[i]));
    }
  }
  return v;
}

inline void scatter(Image& img, double x, double y, double value) {
  const auto b = bilinear_at(x, y);
  const long n = static_cast<long>(img.cols());
  const double w[4] = {(1 - b.wx) * (1 - b.wy), b.wx * (1 - b.wy), (1 - b.wx) * b.wy, b.wx * b.wy};
  const long xs[4] = {b.x0, b.x0 + 1, b.x0, b.x0 + 1};
  const long ys[4] = {b.y0, b.y0, b.y0 + 1, b.y0 + 1};
  for (int i = 0; i < 4; ++i) {
    if (xs[i] >= 0 && xs[i] < n && ys[i] >= 0 && ys[i] < n) {
      img(static_cast<std::size_t>(ys[i]), static_cast<std::size_t>(xs[i])) += w[i] * value;
    }
  }
}

void check_angles(std::span<const double> angles) {
  for (std::size_t i = 0; i < angles.size(); ++i) {
    if (!(angles[i] >= 0.0 && angles[i] < 180.0))
      throw RangeError("projection angles must lie in [0, 180) degrees");
  }
}

void check_sinogram(const Sinogram& sino) {
  if (sino.data.rows() != sino.angles_deg.size())
    throw ShapeError("sinogram row count does not match angle count");
  check_angles(sino.angles_deg);
  for (std::size_t i = 1; i < sino.angles_deg.size(); ++i) {
    if (!(sino.angles_deg[i] > sino.angles_deg[i - 1]))
      throw ConfigError("sinogram angles must be strictly ascending");
  }
  if (!(sino.bin_size > 0.0)) throw ConfigError("sinogram bin_size must be positive");
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Frequency response of the band-limited ramp built from its spatial-domain
// samples, with an optional apodisation window.
std::vector<double> ramp_response(std::size_t padded, FbpFilter filter) {
  std::vector<double> kernel(padded, 0.0);
  kernel[0] = 0.25;
  for (std::size_t i = 1; i <= padded / 2; ++i) {
    if (i % 2 == 1) {
      const double v = -1.0 / (kPi * kPi * static_cast<double>(i * i));
      kernel[i] = v;
      kernel[padded - i] = v;
    }
  }
  const std::size_t bins = padded / 2 + 1;
  double* in = fftw_alloc_real(padded);
  fftw_complex* out = fftw_alloc_complex(bins);
  std::copy(kernel.begin(), kernel.end(), in);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(padded), in, out, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::vector<double> response(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const double nu = static_cast<double>(k) / static_cast<double>(bins - 1);  // fraction of Nyquist
    double window = 1.0;
    switch (filter) {
      case FbpFilter::kRamp:
        break;
      case FbpFilter::kRampRolloff:
        if (nu > 0.8) window = 0.5 * (1.0 + std::cos(kPi * (nu - 0.8) / 0.2));
        break;
      case FbpFilter::kSheppLogan:
        if (nu > 0.0) window = std::sin(kPi * nu / 2.0) / (kPi * nu / 2.0);
        break;
    }
    response[k] = out[k][0] * window;
  }
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return response;
}

std::vector<std::size_t> sweep_order(std::size_t count) {
  // Golden-ratio ordering spreads consecutive updates across the angular range.
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  std::vector<double> key(count);
  for (std::size_t i = 0; i < count; ++i) {
    double v = static_cast<double>(i) * phi;
    key[i] = v - std::floor(v);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
  return order;
}

double residual_norm(const Sinogram& sino, const Image& x) {
  double acc = 0.0;
  for (std::size_t a = 0; a < sino.angles_deg.size(); ++a) {
    const auto row = project_angle(x, sino.angles_deg[a], sino.bin_size);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double r = sino.data(a, j) - row[j];
      acc += r * r;
    }
  }
  return std::sqrt(acc);
}

}  // namespace

std::vector<double> project_angle(const Image& image, double theta_deg, double pixel_size) {
  require_square(image, "project_angle");
  std::vector<double> row(image.cols(), 0.0);
  for_each_sample(image.cols(), theta_deg, [&](std::size_t j, double x, double y) {
    row[j] += sample(image, x, y);
  });
  const double scale = kRayStep * pixel_size;
  for (double& v : row) v *= scale;
  return row;
}

void backproject_adjoint(std::span<const double> row, double theta_deg, double pixel_size, Image& image) {
  require_square(image, "backproject_adjoint");
  if (row.size() != image.cols()) throw ShapeError("backproject_adjoint: row length mismatch");
  const double scale = kRayStep * pixel_size;
  for_each_sample(image.cols(), theta_deg, [&](std::size_t j, double x, double y) {
    scatter(image, x, y, row[j] * scale);
  });
}

Sinogram forward_radon(const Image& image, std::span<const double> angles_deg, double pixel_size) {
  require_square(image, "forward_radon");
  check_angles(angles_deg);
  Sinogram sino;
  sino.angles_deg.assign(angles_deg.begin(), angles_deg.end());
  sino.bin_size = pixel_size;
  sino.data = Image(angles_deg.size(), image.cols());
  for (std::size_t a = 0; a < angles_deg.size(); ++a) {
    const auto row = project_angle(image, angles_deg[a], pixel_size);
    std::copy(row.begin(), row.end(), sino.data.data().begin() + static_cast<std::ptrdiff_t>(a * image.cols()));
  }
  return sino;
}

Image fbp(const Sinogram& sino, FbpFilter filter) {
  check_sinogram(sino);
  const std::size_t n_angles = sino.angles_deg.size();
  if (n_angles < 2) throw DomainError("fbp: need at least two projection angles");
  const std::size_t bins = sino.data.cols();
  const std::size_t padded = std::max<std::size_t>(64, next_pow2(2 * bins));
  const auto response = ramp_response(padded, filter);
  const std::size_t nfreq = padded / 2 + 1;

  double* buf = fftw_alloc_real(padded);
  fftw_complex* spec = fftw_alloc_complex(nfreq);
  fftw_plan fwd, inv;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(padded), buf, spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(padded), spec, buf, FFTW_ESTIMATE);
  }
  Image filtered(n_angles, bins);
  for (std::size_t a = 0; a < n_angles; ++a) {
    std::fill(buf, buf + padded, 0.0);
    for (std::size_t j = 0; j < bins; ++j) buf[j] = sino.data(a, j);
    fftw_execute(fwd);
    for (std::size_t k = 0; k < nfreq; ++k) {
      spec[k][0] *= response[k];
      spec[k][1] *= response[k];
    }
    fftw_execute(inv);
    for (std::size_t j = 0; j < bins; ++j) filtered(a, j) = buf[j] / static_cast<double>(padded);
  }
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  fftw_free(buf);
  fftw_free(spec);

  Image out(bins, bins);
  const double center = (static_cast<double>(bins) - 1.0) / 2.0;
  const double scale = kPi / static_cast<double>(n_angles) / sino.bin_size;
  for (std::size_t a = 0; a < n_angles; ++a) {
    const double theta = sino.angles_deg[a] * kPi / 180.0;
    const double ct = std::cos(theta);
    const double st = std::sin(theta);
    for (std::size_t r = 0; r < bins; ++r) {
      const double y = static_cast<double>(r) - center;
      for (std::size_t c = 0; c < bins; ++c) {
        const double x = static_cast<double>(c) - center;
        const double s = x * ct + y * st + center;
        const double fs = std::floor(s);
        const long j0 = static_cast<long>(fs);
        const double w = s - fs;
        double v = 0.0;
        if (j0 >= 0 && j0 < static_cast<long>(bins)) v += (1.0 - w) * filtered(a, static_cast<std::size_t>(j0));
        if (j0 + 1 >= 0 && j0 + 1 < static_cast<long>(bins)) v += w * filtered(a, static_cast<std::size_t>(j0 + 1));
        out(r, c) += v;
      }
    }
  }
  for (double& v : out.data()) v *= scale;
  return out;
}

SartResult sart(const Sinogram& sino, const SartOptions& options) {
  check_sinogram(sino);
  if (options.iterations < 1) throw ConfigError("sart: iterations must be >= 1");
  if (!(options.relaxation > 0.0 && options.relaxation <= 1.0))
    throw ConfigError("sart: relaxation must lie in (0, 1]");
  const std::size_t n = sino.data.cols();
  const std::size_t n_angles = sino.angles_deg.size();
  Image x = options.init ? *options.init : Image(n, n);
  if (x.rows() != n || x.cols() != n) throw ShapeError("sart: init image shape mismatch");

  // Per-angle ray lengths (row sums) and pixel hit weights (column sums).
  const Image ones(n, n, 1.0);
  std::vector<std::vector<double>> row_sums(n_angles);
  std::vector<Image> col_sums(n_angles);
  for (std::size_t a = 0; a < n_angles; ++a) {
    row_sums[a] = project_angle(ones, sino.angles_deg[a], sino.bin_size);
    col_sums[a] = Image(n, n);
    const std::vector<double> unit(n, 1.0);
    backproject_adjoint(unit, sino.angles_deg[a], sino.bin_size, col_sums[a]);
  }

  SartResult result;
  result.residuals.push_back(residual_norm(sino, x));
  const auto order = sweep_order(n_angles);
  std::vector<double> correction(n);
  for (int it = 0; it < options.iterations; ++it) {
    for (std::size_t a : order) {
      const auto proj = project_angle(x, sino.angles_deg[a], sino.bin_size);
      for (std::size_t j = 0; j < n; ++j) {
        const double len = row_sums[a][j];
        correction[j] = len > 1e-12 ? (sino.data(a, j) - proj[j]) / len : 0.0;
      }
      Image update(n, n);
      backproject_adjoint(correction, sino.angles_deg[a], sino.bin_size, update);
      const auto& cs = col_sums[a].data();
      auto& xd = x.data();
      const auto& ud = update.data();
      for (std::size_t i = 0; i < xd.size(); ++i) {
        if (cs[i] > 1e-12) xd[i] += options.relaxation * ud[i] / cs[i];
      }
    }
    if (options.nonnegative) {
      for (double& v : x.data()) v = std::max(v, 0.0);
    }
    result.residuals.push_back(residual_norm(sino, x));
  }
  result.image = std::move(x);
  return result;
}

VolumeRecon reconstruct_volume(std::span<const Image> views, std::span<const double> angles_deg,
                               double pixel_size, const ReconOptions& options) {
  if (views.empty()) throw ShapeError("reconstruct_volume: no views");
  if (views.size() != angles_deg.size()) throw ShapeError("reconstruct_volume: view/angle count mismatch");
  const std::size_t height = views.front().rows();
  const std::size_t bins = views.front().cols();
  for (const auto& v : views) {
    if (v.rows() != height || v.cols() != bins) throw ShapeError("reconstruct_volume: inconsistent view shapes");
  }
  check_angles(angles_deg);
  std::vector<std::size_t> order(views.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return angles_deg[a] < angles_deg[b]; });

  VolumeRecon out;
  out.volume.voxel_size = pixel_size;
  out.volume.data = Grid3(height, bins, bins);
  Sinogram sino;
  sino.bin_size = pixel_size;
  for (std::size_t a : order) sino.angles_deg.push_back(angles_deg[a]);
  sino.data = Image(views.size(), bins);
  for (std::size_t h = 0; h < height; ++h) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      const Image& v = views[order[i]];
      for (std::size_t j = 0; j < bins; ++j) sino.data(i, j) = v(h, j);
    }
    Image slice;
    if (options.method == ReconMethod::kFbp) {
      slice = fbp(sino, options.filter);
    } else {
      auto res = sart(sino, options.sart);
      slice = std::move(res.image);
      out.residuals.push_back(std::move(res.residuals));
    }
    if (options.clamp_nonnegative) {
      for (double& v : slice.data()) v = std::max(v, 0.0);
    }
    out.volume.data.set_slice(h, slice);
  }
  return out;
}

void export_volume(const std::filesystem::path& dir, const Volume& volume, bool previews) {
  nlohmann::json meta;
  meta["shape"] = {volume.data.depth(), volume.data.rows(), volume.data.cols()};
  meta["voxel_size_mm"] = volume.voxel_size;
  meta["dtype"] = "float32";
  meta["byte_order"] = "little";
  meta["layout"] = "height,row,col";
  io::write_text(dir / "meta.json", meta.dump(2) + "\n");
  io::write_f32(dir / "volume.f32", volume.data.data());
  if (previews) {
    double hi = 0.0;
    for (double v : volume.data.data()) hi = std::max(hi, v);
    for (std::size_t d = 0; d < volume.data.depth(); ++d) {
      char name[32];
      std::snprintf(name, sizeof(name), "slice_%04zu.pgm", d);
      io::write_pgm(dir / "previews" / name, volume.data.slice(d), 0.0, hi > 0.0 ? hi : 1.0);
    }
  }
}

Volume load_volume(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "meta.json") || !std::filesystem::exists(dir / "volume.f32"))
    throw MissingPrerequisite("no volume found in " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(io::read_text(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataInconsistency("volume meta.json unreadable: " + std::string(e.what()));
  }
  if (!meta.contains("shape") || !meta["shape"].is_array() || meta["shape"].size() != 3)
    throw DataInconsistency("volume meta.json lacks a 3-element shape");
  const auto shape = meta["shape"].get<std::vector<std::size_t>>();
  Volume v;
  v.voxel_size = meta.value("voxel_size_mm", 1.0);
  v.data = Grid3(shape[0], shape[1], shape[2]);
  v.data.data() = io::read_f32(dir / "volume.f32", v.data.size());
  return v;
}

}  // namespace thz::tomo
