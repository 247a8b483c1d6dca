#include "thz/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <unordered_map>

#include "json.hpp"
#include "thz/io.hpp"
#include "thz/tomo.hpp"

namespace thz::phantom {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Shape specification parsing

[[noreturn]] void spec_error(const std::string& pointer, const std::string& what) {
  throw ConfigError(pointer + ": " + what);
}

double get_number(const json& j, const std::string& key, const std::string& ptr) {
  if (!j[key].is_number()) spec_error(ptr + "/" + key, "expected a number");
  return j[key].get<double>();
}

std::array<double, 3> get_vec3(const json& j, const std::string& key, const std::string& ptr) {
  const auto& v = j[key];
  if (!v.is_array() || v.size() != 3) spec_error(ptr + "/" + key, "expected an array of 3 numbers");
  std::array<double, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!v[i].is_number()) spec_error(ptr + "/" + key + "/" + std::to_string(i), "expected a number");
    out[i] = v[i].get<double>();
  }
  return out;
}

Primitive parse_primitive(const json& j, const std::string& ptr) {
  if (!j.is_string()) spec_error(ptr, "expected a primitive name");
  const auto name = j.get<std::string>();
  if (name == "sphere") return Primitive::kSphere;
  if (name == "box") return Primitive::kBox;
  if (name == "cylinder") return Primitive::kCylinder;
  if (name == "torus") return Primitive::kTorus;
  if (name == "helix") return Primitive::kHelix;
  spec_error(ptr, "unknown primitive '" + name + "' (supported: sphere, box, cylinder, torus, helix)");
}

const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::kSphere: return "sphere";
    case Primitive::kBox: return "box";
    case Primitive::kCylinder: return "cylinder";
    case Primitive::kTorus: return "torus";
    case Primitive::kHelix: return "helix";
  }
  return "?";
}

ShapeElement parse_element(const json& j, const std::string& ptr) {
  if (!j.is_object()) spec_error(ptr, "expected an object");
  static const std::vector<std::string> allowed = {"type",      "op",         "center_mm",
                                                   "radius_mm", "minor_radius_mm", "size_mm",
                                                   "height_mm", "pitch_mm",   "turns", "axis"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      spec_error(ptr + "/" + key, "unknown key");
  }
  if (!j.contains("type")) spec_error(ptr + "/type", "missing primitive type");
  ShapeElement e;
  e.type = parse_primitive(j["type"], ptr + "/type");
  if (j.contains("op")) {
    const auto& op = j["op"];
    if (op == "union") e.op = CsgOp::kUnion;
    else if (op == "difference") e.op = CsgOp::kDifference;
    else spec_error(ptr + "/op", "expected \"union\" or \"difference\"");
  }
  if (j.contains("center_mm")) e.center_mm = get_vec3(j, "center_mm", ptr);
  if (j.contains("radius_mm")) e.radius_mm = get_number(j, "radius_mm", ptr);
  if (j.contains("minor_radius_mm")) e.minor_radius_mm = get_number(j, "minor_radius_mm", ptr);
  if (j.contains("size_mm")) e.size_mm = get_vec3(j, "size_mm", ptr);
  if (j.contains("height_mm")) e.height_mm = get_number(j, "height_mm", ptr);
  if (j.contains("pitch_mm")) e.pitch_mm = get_number(j, "pitch_mm", ptr);
  if (j.contains("turns")) e.turns = get_number(j, "turns", ptr);
  if (j.contains("axis")) {
    const auto& a = j["axis"];
    if (a == "x") e.axis = Axis::kX;
    else if (a == "y") e.axis = Axis::kY;
    else if (a == "z") e.axis = Axis::kZ;
    else spec_error(ptr + "/axis", "expected \"x\", \"y\" or \"z\"");
  }
  auto positive = [&](double v, const char* key) {
    if (!(v > 0.0)) spec_error(ptr + "/" + key, std::string(primitive_name(e.type)) + " requires " + key + " > 0");
  };
  switch (e.type) {
    case Primitive::kSphere:
      positive(e.radius_mm, "radius_mm");
      break;
    case Primitive::kBox:
      for (double s : e.size_mm) positive(s, "size_mm");
      break;
    case Primitive::kCylinder:
      positive(e.radius_mm, "radius_mm");
      positive(e.height_mm, "height_mm");
      break;
    case Primitive::kTorus:
      positive(e.radius_mm, "radius_mm");
      positive(e.minor_radius_mm, "minor_radius_mm");
      break;
    case Primitive::kHelix:
      positive(e.radius_mm, "radius_mm");
      positive(e.minor_radius_mm, "minor_radius_mm");
      positive(e.pitch_mm, "pitch_mm");
      positive(e.turns, "turns");
      break;
  }
  return e;
}

// Local coordinates with the symmetry axis last.
std::array<double, 3> to_axis_frame(const std::array<double, 3>& p, Axis axis) {
  switch (axis) {
    case Axis::kX: return {p[1], p[2], p[0]};
    case Axis::kY: return {p[2], p[0], p[1]};
    case Axis::kZ: break;
  }
  return p;
}

bool helix_contains(const ShapeElement& e, const std::array<double, 3>& p) {
  const double rho = std::hypot(p[0], p[1]);
  const double r = e.minor_radius_mm;
  if (std::abs(rho - e.radius_mm) > r) return false;
  const double half_len = e.pitch_mm * e.turns / 2.0;
  if (std::abs(p[2]) > half_len + r) return false;
  const double phi_max = 2.0 * kPi * e.turns;
  auto dist2 = [&](double phi) {
    const double dx = p[0] - e.radius_mm * std::cos(phi);
    const double dy = p[1] - e.radius_mm * std::sin(phi);
    const double dz = p[2] - (e.pitch_mm * phi / (2.0 * kPi) - half_len);
    return dx * dx + dy * dy + dz * dz;
  };
  double psi = std::atan2(p[1], p[0]);
  if (psi < 0.0) psi += 2.0 * kPi;
  const int kmax = static_cast<int>(std::ceil(e.turns)) + 1;
  for (int k = -1; k <= kmax; ++k) {
    const double phi0 = psi + 2.0 * kPi * k;
    const double z0 = e.pitch_mm * phi0 / (2.0 * kPi) - half_len;
    if (std::abs(z0 - p[2]) > r + e.pitch_mm) continue;
    double lo = std::max(0.0, phi0 - kPi);
    double hi = std::min(phi_max, phi0 + kPi);
    if (lo > hi) continue;
    // Coarse scan followed by golden-section refinement around the best sample.
    constexpr int kScan = 24;
    double best_phi = lo;
    double best = dist2(lo);
    for (int i = 1; i <= kScan; ++i) {
      const double phi = lo + (hi - lo) * i / kScan;
      const double d = dist2(phi);
      if (d < best) {
        best = d;
        best_phi = phi;
      }
    }
    double a = std::max(lo, best_phi - (hi - lo) / kScan);
    double b = std::min(hi, best_phi + (hi - lo) / kScan);
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 30; ++it) {
      const double c1 = b - g * (b - a);
      const double c2 = a + g * (b - a);
      if (dist2(c1) < dist2(c2)) b = c2;
      else a = c1;
    }
    best = std::min(best, dist2(0.5 * (a + b)));
    if (best <= r * r) return true;
  }
  return false;
}

bool contains(const ShapeElement& e, const std::array<double, 3>& world) {
  const std::array<double, 3> rel{world[0] - e.center_mm[0], world[1] - e.center_mm[1],
                                  world[2] - e.center_mm[2]};
  switch (e.type) {
    case Primitive::kSphere:
      return rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2] <= e.radius_mm * e.radius_mm;
    case Primitive::kBox:
      return std::abs(rel[0]) <= e.size_mm[0] / 2.0 && std::abs(rel[1]) <= e.size_mm[1] / 2.0 &&
             std::abs(rel[2]) <= e.size_mm[2] / 2.0;
    case Primitive::kCylinder: {
      const auto p = to_axis_frame(rel, e.axis);
      return p[0] * p[0] + p[1] * p[1] <= e.radius_mm * e.radius_mm && std::abs(p[2]) <= e.height_mm / 2.0;
    }
    case Primitive::kTorus: {
      const auto p = to_axis_frame(rel, e.axis);
      const double q = std::hypot(p[0], p[1]) - e.radius_mm;
      return q * q + p[2] * p[2] <= e.minor_radius_mm * e.minor_radius_mm;
    }
    case Primitive::kHelix:
      return helix_contains(e, rel);
  }
  return false;
}

double bounding_radius(const ShapeElement& e) {
  switch (e.type) {
    case Primitive::kSphere: return e.radius_mm;
    case Primitive::kBox:
      return 0.5 * std::sqrt(e.size_mm[0] * e.size_mm[0] + e.size_mm[1] * e.size_mm[1] + e.size_mm[2] * e.size_mm[2]);
    case Primitive::kCylinder: return std::hypot(e.radius_mm, e.height_mm / 2.0);
    case Primitive::kTorus: return e.radius_mm + e.minor_radius_mm;
    case Primitive::kHelix:
      return std::hypot(e.radius_mm + e.minor_radius_mm, e.pitch_mm * e.turns / 2.0 + e.minor_radius_mm);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Rendering

struct PixelSpectra {
  double timemax = 0.0;
  std::vector<double> amplitude;
  std::vector<double> phase;
};

// Renders thickness values to Time-max + band samples, memoising identical
// thicknesses (exact key match, so results equal the per-pixel computation).
class ViewRenderer {
 public:
  ViewRenderer(const signal::MaterialProfile& material, const signal::ReferencePulse& pulse,
               const signal::BandSet& bands)
      : sim_(pulse, material), extractor_(bands, pulse.length(), pulse.dt_ps), bands_(bands) {}

  const PixelSpectra& at(double d_mm) {
    auto it = cache_.find(d_mm);
    if (it != cache_.end()) return it->second;
    const auto trace = sim_.simulate(d_mm);
    PixelSpectra px;
    px.timemax = signal::time_max(trace);
    px.amplitude.resize(bands_.size());
    px.phase.resize(bands_.size());
    for (std::size_t b = 0; b < bands_.size(); ++b) {
      const auto s = extractor_.extract(trace.samples, b);
      px.amplitude[b] = s.amplitude;
      px.phase[b] = s.phase;
    }
    return cache_.emplace(d_mm, std::move(px)).first->second;
  }

  ViewRecord render(const Image& thickness) {
    for (double d : thickness.data()) {
      if (!(d >= 0.0)) throw DomainError("render_view: thickness must be >= 0 everywhere");
    }
    ViewRecord v;
    v.gt_thickness = thickness;
    v.timemax = Image(thickness.rows(), thickness.cols());
    v.cube.bands = bands_;
    v.cube.rows = thickness.rows();
    v.cube.cols = thickness.cols();
    v.cube.amplitude.assign(bands_.size(), Image(thickness.rows(), thickness.cols()));
    v.cube.phase.assign(bands_.size(), Image(thickness.rows(), thickness.cols()));
    for (std::size_t i = 0; i < thickness.size(); ++i) {
      const auto& px = at(thickness.data()[i]);
      v.timemax.data()[i] = px.timemax;
      for (std::size_t b = 0; b < bands_.size(); ++b) {
        v.cube.amplitude[b].data()[i] = px.amplitude[b];
        v.cube.phase[b].data()[i] = px.phase[b];
      }
    }
    return v;
  }

 private:
  signal::TraceSimulator sim_;
  signal::BandExtractor extractor_;
  signal::BandSet bands_;
  std::unordered_map<double, PixelSpectra> cache_;
};

std::vector<double> gaussian_kernel(double fwhm_px) {
  const double sigma = fwhm_px / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> k(2 * static_cast<std::size_t>(radius) + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

double rms(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return v.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(v.size()));
}

Image flip_h(const Image& in) {
  Image out(in.rows(), in.cols());
  for (std::size_t r = 0; r < in.rows(); ++r)
    for (std::size_t c = 0; c < in.cols(); ++c) out(r, c) = in(r, in.cols() - 1 - c);
  return out;
}

Image flip_v(const Image& in) {
  Image out(in.rows(), in.cols());
  for (std::size_t r = 0; r < in.rows(); ++r)
    for (std::size_t c = 0; c < in.cols(); ++c) out(r, c) = in(in.rows() - 1 - r, c);
  return out;
}

Image rot90_ccw(const Image& in) {
  Image out(in.cols(), in.rows());
  for (std::size_t r = 0; r < in.rows(); ++r)
    for (std::size_t c = 0; c < in.cols(); ++c) out(in.cols() - 1 - c, r) = in(r, c);
  return out;
}

json reference_to_json(const ReferenceLevels& ref) {
  return json{{"timemax", ref.timemax}, {"amplitude", ref.amplitude}, {"phase", ref.phase}};
}

ReferenceLevels reference_from_json(const json& j) {
  ReferenceLevels r;
  r.timemax = j.at("timemax").get<double>();
  r.amplitude = j.at("amplitude").get<std::vector<double>>();
  r.phase = j.at("phase").get<std::vector<double>>();
  return r;
}

struct ObjectPlan {
  VoxelPhantom phantom;
  std::vector<double> angles;
  std::vector<Image> thickness;
  double gt_scale_mm = 1.0;
};

ObjectPlan plan_object(const DatasetConfig& cfg, std::size_t object_index) {
  ObjectPlan plan;
  plan.phantom = make_phantom(cfg.objects.at(object_index).shape);
  plan.angles = make_angles(cfg.angles);
  double scale = 0.0;
  for (double theta : plan.angles) {
    plan.thickness.push_back(project_thickness(plan.phantom, theta));
    for (double v : plan.thickness.back().data()) scale = std::max(scale, v);
  }
  plan.gt_scale_mm = scale > 0.0 ? scale : 1.0;
  return plan;
}

signal::ReferencePulse make_pulse(const PulseConfig& p) {
  return signal::default_pulse(p.length, p.dt_ps, p.t0_ps, p.fwhm_ps);
}

PsfConfig with_scan_step(PsfConfig psf, double step) {
  psf.scan_step_mm = step;
  return psf;
}

}  // namespace

// ---------------------------------------------------------------------------

ShapeSpec parse_shape_spec(std::string_view json_text, const std::string& where) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    spec_error(where.empty() ? "/" : where, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) spec_error(where.empty() ? "/" : where, "shape spec must be an object");
  ShapeSpec spec;
  for (const auto& [key, value] : j.items()) {
    const std::string ptr = where + "/" + key;
    if (key == "grid") {
      if (value.is_number_unsigned() || value.is_number_integer()) {
        const auto n = value.get<long long>();
        if (n < 8) spec_error(ptr, "grid dimensions must be >= 8");
        spec.grid = {static_cast<std::size_t>(n), static_cast<std::size_t>(n), static_cast<std::size_t>(n)};
      } else if (value.is_array() && value.size() == 3) {
        for (std::size_t i = 0; i < 3; ++i) {
          if (!value[i].is_number_integer() || value[i].get<long long>() < 8)
            spec_error(ptr + "/" + std::to_string(i), "grid dimensions must be integers >= 8");
          spec.grid[i] = value[i].get<std::size_t>();
        }
      } else {
        spec_error(ptr, "expected an integer or [depth, rows, cols]");
      }
    } else if (key == "voxel_size_mm") {
      if (!value.is_number() || !(value.get<double>() > 0.0)) spec_error(ptr, "expected a positive number");
      spec.voxel_size_mm = value.get<double>();
    } else if (key == "material") {
      if (!value.is_string()) spec_error(ptr, "expected a string");
      spec.material_id = value.get<std::string>();
    } else if (key == "primitives") {
      if (!value.is_array()) spec_error(ptr, "expected an array");
      for (std::size_t i = 0; i < value.size(); ++i) {
        spec.elements.push_back(parse_element(value[i], ptr + "/" + std::to_string(i)));
      }
    } else {
      spec_error(ptr, "unknown key");
    }
  }
  return spec;
}

std::string shape_spec_to_json(const ShapeSpec& spec) {
  json j;
  j["grid"] = {spec.grid[0], spec.grid[1], spec.grid[2]};
  j["voxel_size_mm"] = spec.voxel_size_mm;
  j["material"] = spec.material_id;
  json prims = json::array();
  for (const auto& e : spec.elements) {
    json p;
    p["type"] = primitive_name(e.type);
    p["op"] = e.op == CsgOp::kUnion ? "union" : "difference";
    p["center_mm"] = e.center_mm;
    switch (e.type) {
      case Primitive::kSphere:
        p["radius_mm"] = e.radius_mm;
        break;
      case Primitive::kBox:
        p["size_mm"] = e.size_mm;
        break;
      case Primitive::kCylinder:
        p["radius_mm"] = e.radius_mm;
        p["height_mm"] = e.height_mm;
        break;
      case Primitive::kTorus:
        p["radius_mm"] = e.radius_mm;
        p["minor_radius_mm"] = e.minor_radius_mm;
        break;
      case Primitive::kHelix:
        p["radius_mm"] = e.radius_mm;
        p["minor_radius_mm"] = e.minor_radius_mm;
        p["pitch_mm"] = e.pitch_mm;
        p["turns"] = e.turns;
        break;
    }
    if (e.type == Primitive::kCylinder || e.type == Primitive::kTorus) {
      p["axis"] = e.axis == Axis::kX ? "x" : (e.axis == Axis::kY ? "y" : "z");
    }
    prims.push_back(p);
  }
  j["primitives"] = prims;
  return j.dump();
}

VoxelPhantom make_phantom(const ShapeSpec& spec) {
  for (std::size_t d : spec.grid) {
    if (d < 8) throw ConfigError("phantom grid dimensions must be >= 8");
  }
  if (!(spec.voxel_size_mm > 0.0)) throw ConfigError("phantom voxel size must be positive");
  VoxelPhantom ph;
  ph.voxel_size_mm = spec.voxel_size_mm;
  ph.material_id = spec.material_id;
  ph.grid = Grid3(spec.grid[0], spec.grid[1], spec.grid[2]);
  const double v = spec.voxel_size_mm;
  const double cz = (static_cast<double>(spec.grid[0]) - 1.0) / 2.0;
  const double cy = (static_cast<double>(spec.grid[1]) - 1.0) / 2.0;
  const double cx = (static_cast<double>(spec.grid[2]) - 1.0) / 2.0;
  for (const auto& e : spec.elements) {
    const double br = bounding_radius(e) + v;
    auto range = [&](double center_mm, double c, std::size_t n) {
      const double lo = std::floor((center_mm - br) / v + c);
      const double hi = std::ceil((center_mm + br) / v + c);
      const long a = std::max(0L, static_cast<long>(lo));
      const long b = std::min(static_cast<long>(n) - 1, static_cast<long>(hi));
      return std::pair<long, long>{a, b};
    };
    const auto [x0, x1] = range(e.center_mm[0], cx, spec.grid[2]);
    const auto [y0, y1] = range(e.center_mm[1], cy, spec.grid[1]);
    const auto [z0, z1] = range(e.center_mm[2], cz, spec.grid[0]);
    const double fill = e.op == CsgOp::kUnion ? 1.0 : 0.0;
    for (long z = z0; z <= z1; ++z) {
      for (long y = y0; y <= y1; ++y) {
        for (long x = x0; x <= x1; ++x) {
          const std::array<double, 3> p{(static_cast<double>(x) - cx) * v, (static_cast<double>(y) - cy) * v,
                                        (static_cast<double>(z) - cz) * v};
          if (contains(e, p)) {
            ph.grid(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = fill;
          }
        }
      }
    }
  }
  return ph;
}

Image project_thickness(const VoxelPhantom& phantom, double theta_deg) {
  const auto& g = phantom.grid;
  if (g.rows() != g.cols()) throw ShapeError("project_thickness: horizontal slices must be square");
  Image out(g.depth(), g.cols());
  for (std::size_t d = 0; d < g.depth(); ++d) {
    const auto row = tomo::project_angle(g.slice(d), theta_deg, phantom.voxel_size_mm);
    for (std::size_t c = 0; c < row.size(); ++c) out(d, c) = std::max(0.0, row[c]);
  }
  return out;
}

ReferenceLevels reference_levels(const signal::MaterialProfile& material, const signal::ReferencePulse& pulse,
                                 const signal::BandSet& bands) {
  ViewRenderer renderer(material, pulse, bands);
  const auto& px = renderer.at(0.0);
  return {px.timemax, px.amplitude, px.phase};
}

ViewRecord render_view(const Image& thickness_mm, const signal::MaterialProfile& material,
                       const signal::ReferencePulse& pulse, const signal::BandSet& bands) {
  ViewRenderer renderer(material, pulse, bands);
  return renderer.render(thickness_mm);
}

double psf_fwhm_mm(double f_thz, const PsfConfig& psf) {
  return std::max(psf.beam_min_mm, psf.k_blur * signal::kSpeedOfLight / f_thz);
}

Image gaussian_blur(const Image& img, double fwhm_px) {
  if (!(fwhm_px >= 1e-3)) return img;
  const auto k = gaussian_kernel(fwhm_px);
  const long radius = static_cast<long>(k.size() / 2);
  const long rows = static_cast<long>(img.rows());
  const long cols = static_cast<long>(img.cols());
  Image tmp(img.rows(), img.cols());
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (long i = -radius; i <= radius; ++i) {
        const long cc = std::clamp(c + i, 0L, cols - 1);
        acc += k[static_cast<std::size_t>(i + radius)] * img(static_cast<std::size_t>(r), static_cast<std::size_t>(cc));
      }
      tmp(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  }
  Image out(img.rows(), img.cols());
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (long i = -radius; i <= radius; ++i) {
        const long rr = std::clamp(r + i, 0L, rows - 1);
        acc += k[static_cast<std::size_t>(i + radius)] * tmp(static_cast<std::size_t>(rr), static_cast<std::size_t>(c));
      }
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  }
  return out;
}

ViewRecord corrupt_view(const ViewRecord& view, const PsfConfig& psf, const NoiseConfig& noise,
                        std::uint64_t seed) {
  if (!(psf.beam_min_mm > 0.0)) throw ConfigError("psf beam_min_mm must be > 0");
  if (!(psf.scan_step_mm > 0.0)) throw ConfigError("psf scan_step_mm must be > 0");
  if (psf.k_blur < 0.0) throw ConfigError("psf k_blur must be >= 0");
  if (noise.enabled && !(noise.snr_db > 0.0)) throw ConfigError("noise snr_db must be > 0");

  ViewRecord out = view;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double noise_ratio = noise.enabled ? std::pow(10.0, -noise.snr_db / 20.0) : 0.0;

  double widest = 0.0;
  for (double f : view.cube.bands.frequencies()) widest = std::max(widest, psf_fwhm_mm(f, psf));
  if (view.cube.bands.size() == 0) widest = psf.beam_min_mm;

  out.timemax = gaussian_blur(view.timemax, widest / psf.scan_step_mm);
  if (noise.enabled) {
    const double sigma = rms(out.timemax.data()) * noise_ratio;
    for (double& v : out.timemax.data()) v += sigma * gauss(rng);
  }

  for (std::size_t b = 0; b < view.cube.bands.size(); ++b) {
    const double fwhm_px = psf_fwhm_mm(view.cube.bands[b], psf) / psf.scan_step_mm;
    const bool blur = fwhm_px >= 1e-3;
    if (!blur && !noise.enabled) continue;
    const auto& amp = view.cube.amplitude[b].data();
    const auto& ph = view.cube.phase[b].data();
    Image re(view.cube.rows, view.cube.cols);
    Image im(view.cube.rows, view.cube.cols);
    for (std::size_t i = 0; i < amp.size(); ++i) {
      re.data()[i] = amp[i] * std::cos(ph[i]);
      im.data()[i] = amp[i] * std::sin(ph[i]);
    }
    if (blur) {
      re = gaussian_blur(re, fwhm_px);
      im = gaussian_blur(im, fwhm_px);
    }
    if (noise.enabled) {
      double power = 0.0;
      for (std::size_t i = 0; i < amp.size(); ++i) power += re.data()[i] * re.data()[i] + im.data()[i] * im.data()[i];
      const double field_rms = std::sqrt(power / static_cast<double>(amp.size()));
      const double sigma = field_rms * noise_ratio / std::sqrt(2.0);
      for (std::size_t i = 0; i < amp.size(); ++i) {
        re.data()[i] += sigma * gauss(rng);
        im.data()[i] += sigma * gauss(rng);
      }
    }
    auto& out_amp = out.cube.amplitude[b].data();
    auto& out_ph = out.cube.phase[b].data();
    for (std::size_t i = 0; i < amp.size(); ++i) {
      const std::complex<double> z(re.data()[i], im.data()[i]);
      out_amp[i] = std::abs(z);
      out_ph[i] = (z == std::complex<double>(0.0, 0.0)) ? 0.0 : wrap_phase(std::arg(z));
    }
  }
  return out;
}

std::vector<double> make_angles(const AngleConfig& cfg) {
  if (cfg.count == 0) throw ConfigError("angle count must be >= 1");
  if (!(cfg.end_deg > cfg.start_deg)) throw ConfigError("angle range must be non-empty");
  std::vector<double> out(cfg.count);
  const double step = (cfg.end_deg - cfg.start_deg) / static_cast<double>(cfg.count);
  for (std::size_t k = 0; k < cfg.count; ++k) out[k] = cfg.start_deg + step * static_cast<double>(k);
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentParams identity_augment(std::size_t rows, std::size_t cols, std::size_t crop) {
  if (rows < crop || cols < crop) throw ShapeError("augment: image smaller than crop size");
  AugmentParams p;
  p.crop = crop;
  p.crop_row = (rows - crop) / 2;
  p.crop_col = (cols - crop) / 2;
  return p;
}

AugmentParams draw_augment(std::uint64_t seed, std::size_t rows, std::size_t cols, std::size_t crop) {
  if (rows < crop || cols < crop) throw ShapeError("augment: image smaller than crop size");
  std::mt19937_64 rng(seed);
  AugmentParams p;
  p.crop = crop;
  p.flip_h = (rng() & 1U) != 0;
  p.flip_v = (rng() & 1U) != 0;
  p.rot90 = static_cast<int>(rng() % 4);
  const std::size_t r = (p.rot90 % 2 == 0) ? rows : cols;
  const std::size_t c = (p.rot90 % 2 == 0) ? cols : rows;
  p.crop_row = static_cast<std::size_t>(rng() % (r - crop + 1));
  p.crop_col = static_cast<std::size_t>(rng() % (c - crop + 1));
  return p;
}

Image apply_augment(const Image& img, const AugmentParams& params) {
  Image cur = img;
  if (params.flip_h) cur = flip_h(cur);
  if (params.flip_v) cur = flip_v(cur);
  for (int i = 0; i < params.rot90 % 4; ++i) cur = rot90_ccw(cur);
  if (params.crop_row + params.crop > cur.rows() || params.crop_col + params.crop > cur.cols())
    throw ShapeError("augment: crop window exceeds image");
  Image out(params.crop, params.crop);
  for (std::size_t r = 0; r < params.crop; ++r)
    for (std::size_t c = 0; c < params.crop; ++c) out(r, c) = cur(params.crop_row + r, params.crop_col + c);
  return out;
}

ViewRecord apply_augment(const ViewRecord& record, const AugmentParams& params) {
  ViewRecord out;
  out.theta_deg = record.theta_deg;
  out.object_id = record.object_id;
  out.view_index = record.view_index;
  out.gt_thickness = apply_augment(record.gt_thickness, params);
  out.timemax = apply_augment(record.timemax, params);
  out.cube.bands = record.cube.bands;
  out.cube.rows = params.crop;
  out.cube.cols = params.crop;
  for (const auto& a : record.cube.amplitude) out.cube.amplitude.push_back(apply_augment(a, params));
  for (const auto& p : record.cube.phase) out.cube.phase.push_back(apply_augment(p, params));
  return out;
}

ViewRecord augment(const ViewRecord& record, std::uint64_t seed, std::size_t crop) {
  return apply_augment(record, draw_augment(seed, record.timemax.rows(), record.timemax.cols(), crop));
}

// ---------------------------------------------------------------------------
// Datasets

std::uint64_t view_seed(std::uint64_t seed, std::size_t object_index, std::size_t view_index) {
  return derive_seed(seed, 0x766965775f736565ULL, object_index, view_index);
}

ObjectData generate_object(const DatasetConfig& cfg, std::size_t object_index) {
  auto plan = plan_object(cfg, object_index);
  const auto pulse = make_pulse(cfg.pulse);
  ViewRenderer renderer(cfg.material, pulse, cfg.bands);
  const auto psf = with_scan_step(cfg.psf, plan.phantom.voxel_size_mm);
  ObjectData obj;
  obj.id = cfg.objects[object_index].id;
  obj.gt_scale_mm = plan.gt_scale_mm;
  for (std::size_t k = 0; k < plan.angles.size(); ++k) {
    ViewRecord clean = renderer.render(plan.thickness[k]);
    clean.theta_deg = plan.angles[k];
    clean.object_id = obj.id;
    clean.view_index = k;
    obj.corrupted.push_back(corrupt_view(clean, psf, cfg.noise, view_seed(cfg.seed, object_index, k)));
    obj.clean.push_back(std::move(clean));
  }
  obj.phantom = std::move(plan.phantom);
  return obj;
}

std::string view_dir_name(std::size_t view_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%03zu", view_index);
  return buf;
}

namespace {
void write_stack(const std::filesystem::path& path, const std::vector<Image>& stack) {
  std::vector<double> flat;
  for (const auto& img : stack) flat.insert(flat.end(), img.data().begin(), img.data().end());
  io::write_f32(path, flat);
}

std::vector<Image> read_stack(const std::filesystem::path& path, std::size_t count, std::size_t rows,
                              std::size_t cols) {
  const auto flat = io::read_f32(path, count * rows * cols);
  std::vector<Image> out(count, Image(rows, cols));
  for (std::size_t b = 0; b < count; ++b) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(b * rows * cols),
              flat.begin() + static_cast<std::ptrdiff_t>((b + 1) * rows * cols), out[b].data().begin());
  }
  return out;
}
}  // namespace

void write_view(const std::filesystem::path& dir, const ViewRecord& corrupted, const ViewRecord* clean,
                std::uint64_t seed, double gt_scale_mm) {
  json meta;
  meta["object_id"] = corrupted.object_id;
  meta["view_index"] = corrupted.view_index;
  meta["theta_deg"] = corrupted.theta_deg;
  meta["shape"] = {corrupted.timemax.rows(), corrupted.timemax.cols()};
  meta["dtype"] = "float32";
  meta["byte_order"] = "little";
  meta["seed"] = seed;
  meta["bands_thz"] = corrupted.cube.bands.frequencies();
  meta["gt_scale_mm"] = gt_scale_mm;
  meta["gt_units"] = "mm";
  meta["has_clean"] = clean != nullptr;
  io::write_text(dir / "meta.json", meta.dump(2) + "\n");
  io::write_f32(dir / "gt.f32", corrupted.gt_thickness.data());
  io::write_f32(dir / "timemax.f32", corrupted.timemax.data());
  write_stack(dir / "amp.f32", corrupted.cube.amplitude);
  write_stack(dir / "phase.f32", corrupted.cube.phase);
  if (clean) {
    io::write_f32(dir / "timemax_clean.f32", clean->timemax.data());
    write_stack(dir / "amp_clean.f32", clean->cube.amplitude);
    write_stack(dir / "phase_clean.f32", clean->cube.phase);
  }
}

ViewRecord load_view(const std::filesystem::path& dir, bool clean) {
  if (!std::filesystem::exists(dir / "meta.json")) throw MissingPrerequisite("missing view metadata in " + dir.string());
  json meta;
  try {
    meta = json::parse(io::read_text(dir / "meta.json"));
  } catch (const json::exception& e) {
    throw DataInconsistency(dir.string() + "/meta.json: " + e.what());
  }
  ViewRecord v;
  try {
    v.object_id = meta.at("object_id").get<std::string>();
    v.view_index = meta.at("view_index").get<std::size_t>();
    v.theta_deg = meta.at("theta_deg").get<double>();
    const auto shape = meta.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw DataInconsistency(dir.string() + ": shape must have 2 entries");
    v.cube.bands = signal::BandSet(meta.at("bands_thz").get<std::vector<double>>());
    v.cube.rows = shape[0];
    v.cube.cols = shape[1];
  } catch (const json::exception& e) {
    throw DataInconsistency(dir.string() + "/meta.json: " + e.what());
  }
  const std::size_t rows = v.cube.rows, cols = v.cube.cols, nb = v.cube.bands.size();
  const std::string suffix = clean ? "_clean.f32" : ".f32";
  v.gt_thickness = Image(rows, cols);
  v.gt_thickness.data() = io::read_f32(dir / "gt.f32", rows * cols);
  v.timemax = Image(rows, cols);
  v.timemax.data() = io::read_f32(dir / ("timemax" + suffix), rows * cols);
  v.cube.amplitude = read_stack(dir / ("amp" + suffix), nb, rows, cols);
  v.cube.phase = read_stack(dir / ("phase" + suffix), nb, rows, cols);
  return v;
}

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["seed"] = m.seed;
  j["bands_thz"] = m.bands.frequencies();
  j["reference"] = reference_to_json(m.reference);
  j["psf"] = {{"beam_min_mm", m.psf.beam_min_mm}, {"k_blur", m.psf.k_blur}, {"scan_step_mm", m.psf.scan_step_mm}};
  j["noise"] = {{"enabled", m.noise.enabled}, {"snr_db", m.noise.snr_db}};
  j["voxel_size_mm"] = m.voxel_size_mm;
  json objs = json::array();
  for (const auto& o : m.objects) {
    objs.push_back({{"id", o.id},
                    {"views", o.angles_deg.size()},
                    {"angles_deg", o.angles_deg},
                    {"gt_scale_mm", o.gt_scale_mm},
                    {"image_shape", {o.image_shape[0], o.image_shape[1]}}});
  }
  j["objects"] = objs;
  return j.dump(2) + "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir) {
  const auto path = dataset_dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw MissingPrerequisite("no manifest.json in " + dataset_dir.string());
  DatasetManifest m;
  try {
    const json j = json::parse(io::read_text(path));
    m.format_version = j.at("format_version").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.bands = signal::BandSet(j.at("bands_thz").get<std::vector<double>>());
    m.reference = reference_from_json(j.at("reference"));
    m.psf.beam_min_mm = j.at("psf").at("beam_min_mm").get<double>();
    m.psf.k_blur = j.at("psf").at("k_blur").get<double>();
    m.psf.scan_step_mm = j.at("psf").at("scan_step_mm").get<double>();
    m.noise.enabled = j.at("noise").at("enabled").get<bool>();
    m.noise.snr_db = j.at("noise").at("snr_db").get<double>();
    m.voxel_size_mm = j.at("voxel_size_mm").get<double>();
    for (const auto& o : j.at("objects")) {
      ManifestObject mo;
      mo.id = o.at("id").get<std::string>();
      mo.angles_deg = o.at("angles_deg").get<std::vector<double>>();
      mo.gt_scale_mm = o.at("gt_scale_mm").get<double>();
      const auto shape = o.at("image_shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw DataInconsistency("manifest image_shape must have 2 entries");
      mo.image_shape = {shape[0], shape[1]};
      if (o.at("views").get<std::size_t>() != mo.angles_deg.size())
        throw DataInconsistency("manifest view count disagrees with angle list for " + mo.id);
      m.objects.push_back(std::move(mo));
    }
  } catch (const json::exception& e) {
    throw DataInconsistency("corrupted manifest " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataInconsistency("corrupted manifest " + path.string() + ": " + e.what());
  }
  return m;
}

DatasetManifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw IoError("cannot create dataset directory " + out_dir.string());
  const auto pulse = make_pulse(cfg.pulse);
  DatasetManifest m;
  m.seed = cfg.seed;
  m.bands = cfg.bands;
  m.reference = reference_levels(cfg.material, pulse, cfg.bands);
  m.noise = cfg.noise;
  m.psf = cfg.psf;
  for (std::size_t oi = 0; oi < cfg.objects.size(); ++oi) {
    const auto& spec = cfg.objects[oi];
    auto plan = plan_object(cfg, oi);
    m.voxel_size_mm = plan.phantom.voxel_size_mm;
    m.psf.scan_step_mm = plan.phantom.voxel_size_mm;
    const auto psf = with_scan_step(cfg.psf, plan.phantom.voxel_size_mm);
    ViewRenderer renderer(cfg.material, pulse, cfg.bands);
    const auto obj_dir = out_dir / spec.id;
    json phantom_meta;
    phantom_meta["shape"] = {plan.phantom.grid.depth(), plan.phantom.grid.rows(), plan.phantom.grid.cols()};
    phantom_meta["voxel_size_mm"] = plan.phantom.voxel_size_mm;
    phantom_meta["dtype"] = "float32";
    phantom_meta["shape_spec"] = json::parse(shape_spec_to_json(spec.shape));
    io::write_text(obj_dir / "phantom.json", phantom_meta.dump(2) + "\n");
    io::write_f32(obj_dir / "phantom.f32", plan.phantom.grid.data());
    for (std::size_t k = 0; k < plan.angles.size(); ++k) {
      ViewRecord clean = renderer.render(plan.thickness[k]);
      clean.theta_deg = plan.angles[k];
      clean.object_id = spec.id;
      clean.view_index = k;
      const auto seed = view_seed(cfg.seed, oi, k);
      const auto corrupted = corrupt_view(clean, psf, cfg.noise, seed);
      write_view(obj_dir / view_dir_name(k), corrupted, &clean, seed, plan.gt_scale_mm);
    }
    ManifestObject mo;
    mo.id = spec.id;
    mo.angles_deg = plan.angles;
    mo.gt_scale_mm = plan.gt_scale_mm;
    mo.image_shape = {plan.phantom.grid.depth(), plan.phantom.grid.cols()};
    m.objects.push_back(std::move(mo));
  }
  io::write_text(out_dir / "manifest.json", manifest_to_json(m));
  return m;
}

}  // namespace thz::phantom
