#include "thz/signal.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>

#include "json.hpp"
#include "thz/io.hpp"

namespace thz::signal {

namespace {

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<std::complex<double>> band_kernel(double f_thz, std::size_t length, double dt_ps) {
  std::vector<std::complex<double>> k(length);
  for (std::size_t i = 0; i < length; ++i) {
    k[i] = std::polar(1.0, -2.0 * kPi * f_thz * static_cast<double>(i) * dt_ps);
  }
  return k;
}

SpectralSample apply_kernel(std::span<const double> samples,
                            const std::vector<std::complex<double>>& kernel, double f_thz) {
  double re = 0.0;
  double im = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    re += samples[i] * kernel[i].real();
    im += samples[i] * kernel[i].imag();
  }
  const double scale = 2.0 / static_cast<double>(samples.size());
  const std::complex<double> coeff(re * scale, im * scale);
  SpectralSample out;
  out.frequency_thz = f_thz;
  out.amplitude = std::abs(coeff);
  out.phase = (re == 0.0 && im == 0.0) ? 0.0 : wrap_phase(std::arg(coeff));
  return out;
}

void check_nyquist(double f_thz, double dt_ps) {
  const double nyquist = 1.0 / (2.0 * dt_ps);
  if (!(f_thz > 0.0) || f_thz > nyquist + 1e-12) {
    std::ostringstream msg;
    msg << "frequency " << f_thz << " THz outside (0, " << nyquist << "] THz";
    throw RangeError(msg.str());
  }
}

}  // namespace

ReferencePulse default_pulse(std::size_t length, double dt_ps, double t0_ps, double fwhm_ps) {
  if (length < 2 || dt_ps <= 0.0 || fwhm_ps <= 0.0) throw ConfigError("default_pulse: bad parameters");
  const double sigma = fwhm_ps / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  ReferencePulse pulse;
  pulse.dt_ps = dt_ps;
  pulse.t0_ps = t0_ps;
  pulse.samples.resize(length);
  double peak = 0.0;
  for (std::size_t k = 0; k < length; ++k) {
    const double x = (static_cast<double>(k) * dt_ps - t0_ps) / sigma;
    pulse.samples[k] = -x * std::exp(-0.5 * x * x);
    peak = std::max(peak, std::abs(pulse.samples[k]));
  }
  if (peak == 0.0) throw ConfigError("default_pulse: pulse is not resolved by the sampling grid");
  for (double& s : pulse.samples) s /= peak;
  return pulse;
}

// ---------------------------------------------------------------------------
// MaterialProfile

MaterialProfile::MaterialProfile(std::vector<double> freq_thz, std::vector<double> n,
                                 std::vector<double> kappa, std::complex<double> fresnel)
    : freq_(std::move(freq_thz)), n_(std::move(n)), kappa_(std::move(kappa)), fresnel_(fresnel) {
  if (freq_.size() < 2 || n_.size() != freq_.size() || kappa_.size() != freq_.size()) {
    throw ConfigError("material table needs >= 2 knots and equal-length freq_thz/n/kappa");
  }
  for (std::size_t i = 0; i < freq_.size(); ++i) {
    if (!std::isfinite(freq_[i]) || !std::isfinite(n_[i]) || !std::isfinite(kappa_[i]))
      throw ConfigError("material table contains non-finite values");
    if (i > 0 && !(freq_[i] > freq_[i - 1])) throw ConfigError("material freq_thz must be strictly ascending");
    if (n_[i] < 1.0) throw ConfigError("material n must be >= 1");
    if (kappa_[i] < 0.0) throw ConfigError("material kappa must be >= 0");
  }
  if (freq_.front() > 0.1 || freq_.back() < 4.0)
    throw ConfigError("material table must cover [0.1, 4] THz");
  if (!std::isfinite(fresnel_.real()) || !std::isfinite(fresnel_.imag()))
    throw ConfigError("fresnel factor must be finite");
}

MaterialProfile MaterialProfile::constant(double n, double kappa, std::complex<double> fresnel) {
  return MaterialProfile({0.0, 5.0}, {n, n}, {kappa, kappa}, fresnel);
}

MaterialProfile MaterialProfile::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("material JSON: ") + e.what());
  }
  for (const char* key : {"freq_thz", "n", "kappa"}) {
    if (!j.contains(key) || !j[key].is_array()) throw ConfigError(std::string("material JSON: missing array '") + key + "'");
  }
  std::complex<double> t{0.5, 0.0};
  if (j.contains("fresnel_t")) {
    const auto& ft = j["fresnel_t"];
    if (ft.is_number()) {
      t = {ft.get<double>(), 0.0};
    } else if (ft.is_array() && ft.size() == 2) {
      t = {ft[0].get<double>(), ft[1].get<double>()};
    } else {
      throw ConfigError("material JSON: fresnel_t must be a number or [re, im]");
    }
  }
  try {
    return MaterialProfile(j["freq_thz"].get<std::vector<double>>(), j["n"].get<std::vector<double>>(),
                           j["kappa"].get<std::vector<double>>(), t);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("material JSON: ") + e.what());
  }
}

MaterialProfile MaterialProfile::load(const std::filesystem::path& path) {
  return from_json(io::read_text(path));
}

std::string MaterialProfile::to_json() const {
  nlohmann::json j;
  j["freq_thz"] = freq_;
  j["n"] = n_;
  j["kappa"] = kappa_;
  j["fresnel_t"] = {fresnel_.real(), fresnel_.imag()};
  return j.dump();
}

bool MaterialProfile::covers(double f) const { return f >= freq_.front() && f <= freq_.back(); }

double MaterialProfile::interp(const std::vector<double>& table, double f, bool clamp) const {
  if (!covers(f)) {
    if (!clamp) {
      std::ostringstream msg;
      msg << "frequency " << f << " THz outside material table [" << freq_.front() << ", "
          << freq_.back() << "]";
      throw RangeError(msg.str());
    }
    return f < freq_.front() ? table.front() : table.back();
  }
  const auto it = std::upper_bound(freq_.begin(), freq_.end(), f);
  if (it == freq_.end()) return table.back();
  const std::size_t hi = static_cast<std::size_t>(it - freq_.begin());
  const std::size_t lo = hi - 1;
  const double w = (f - freq_[lo]) / (freq_[hi] - freq_[lo]);
  return table[lo] + w * (table[hi] - table[lo]);
}

double MaterialProfile::n_at(double f) const { return interp(n_, f, false); }
double MaterialProfile::kappa_at(double f) const { return interp(kappa_, f, false); }
double MaterialProfile::n_clamped(double f) const { return interp(n_, f, true); }
double MaterialProfile::kappa_clamped(double f) const { return interp(kappa_, f, true); }

// ---------------------------------------------------------------------------

BandSet::BandSet(std::vector<double> frequencies_thz) : freqs_(std::move(frequencies_thz)) {
  for (std::size_t i = 0; i < freqs_.size(); ++i) {
    if (!(freqs_[i] > 0.0) || freqs_[i] > 5.0) throw ConfigError("band frequencies must lie in (0, 5] THz");
    if (i > 0 && !(freqs_[i] > freqs_[i - 1])) throw ConfigError("band frequencies must be strictly ascending");
  }
}

BandSet default_band_set() {
  return BandSet({0.380, 0.448, 0.557, 0.621, 0.916, 0.970, 0.988, 1.097, 1.113, 1.163, 1.208, 1.229});
}

namespace {
std::complex<double> transmission(double n, double kappa, std::complex<double> fresnel, double d_mm,
                                  double f_thz) {
  const double k0 = 2.0 * kPi * f_thz * d_mm / kSpeedOfLight;
  return fresnel * std::exp(-kappa * k0) * std::polar(1.0, -n * k0);
}
}  // namespace

std::complex<double> detected_spectrum(std::complex<double> ref_spectrum,
                                       const MaterialProfile& material, double d_mm, double f_thz) {
  if (!(d_mm >= 0.0)) throw DomainError("detected_spectrum: thickness must be >= 0");
  const double n = material.n_at(f_thz);
  const double kappa = material.kappa_at(f_thz);
  return ref_spectrum * transmission(n, kappa, material.fresnel(), d_mm, f_thz);
}

// ---------------------------------------------------------------------------
// TraceSimulator

struct TraceSimulator::Impl {
  std::size_t length = 0;
  std::size_t bins = 0;
  double dt = 0.1;
  std::complex<double> fresnel;
  std::vector<double> bin_freq;
  std::vector<double> bin_n;
  std::vector<double> bin_kappa;
  std::vector<std::complex<double>> ref_spectrum;
  double* real_buf = nullptr;
  fftw_complex* spec_buf = nullptr;
  fftw_plan inverse = nullptr;

  ~Impl() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    if (inverse) fftw_destroy_plan(inverse);
    if (real_buf) fftw_free(real_buf);
    if (spec_buf) fftw_free(spec_buf);
  }
};

TraceSimulator::TraceSimulator(const ReferencePulse& pulse, const MaterialProfile& material)
    : impl_(std::make_unique<Impl>()) {
  auto& s = *impl_;
  s.length = pulse.length();
  if (s.length < 2 || pulse.dt_ps <= 0.0) throw ConfigError("TraceSimulator: invalid pulse");
  s.bins = s.length / 2 + 1;
  s.dt = pulse.dt_ps;
  s.fresnel = material.fresnel();
  s.real_buf = fftw_alloc_real(s.length);
  s.spec_buf = fftw_alloc_complex(s.bins);
  fftw_plan forward = nullptr;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    forward = fftw_plan_dft_r2c_1d(static_cast<int>(s.length), s.real_buf, s.spec_buf, FFTW_ESTIMATE);
    s.inverse = fftw_plan_dft_c2r_1d(static_cast<int>(s.length), s.spec_buf, s.real_buf, FFTW_ESTIMATE);
  }
  std::copy(pulse.samples.begin(), pulse.samples.end(), s.real_buf);
  fftw_execute(forward);
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(forward);
  }
  s.ref_spectrum.resize(s.bins);
  s.bin_freq.resize(s.bins);
  s.bin_n.resize(s.bins);
  s.bin_kappa.resize(s.bins);
  const double df = 1.0 / (static_cast<double>(s.length) * s.dt);
  for (std::size_t k = 0; k < s.bins; ++k) {
    s.ref_spectrum[k] = {s.spec_buf[k][0], s.spec_buf[k][1]};
    s.bin_freq[k] = static_cast<double>(k) * df;
    // Bins outside the material table hold the nearest tabulated value.
    s.bin_n[k] = material.n_clamped(s.bin_freq[k]);
    s.bin_kappa[k] = material.kappa_clamped(s.bin_freq[k]);
  }
}

TraceSimulator::~TraceSimulator() = default;

TimeDomainTrace TraceSimulator::simulate(double d_mm) const {
  if (!(d_mm >= 0.0)) throw DomainError("simulate_trace: thickness must be >= 0");
  auto& s = *impl_;
  for (std::size_t k = 0; k < s.bins; ++k) {
    const std::complex<double> v =
        s.ref_spectrum[k] * transmission(s.bin_n[k], s.bin_kappa[k], s.fresnel, d_mm, s.bin_freq[k]);
    s.spec_buf[k][0] = v.real();
    s.spec_buf[k][1] = v.imag();
  }
  // A real signal has purely real DC and Nyquist coefficients.
  s.spec_buf[0][1] = 0.0;
  if (s.length % 2 == 0) s.spec_buf[s.bins - 1][1] = 0.0;
  fftw_execute(s.inverse);
  TimeDomainTrace out;
  out.dt_ps = s.dt;
  out.samples.resize(s.length);
  const double norm = 1.0 / static_cast<double>(s.length);
  for (std::size_t i = 0; i < s.length; ++i) out.samples[i] = s.real_buf[i] * norm;
  return out;
}

TimeDomainTrace simulate_trace(const ReferencePulse& pulse, const MaterialProfile& material,
                               double d_mm) {
  if (!(d_mm >= 0.0)) throw DomainError("simulate_trace: thickness must be >= 0");
  return TraceSimulator(pulse, material).simulate(d_mm);
}

// ---------------------------------------------------------------------------

double time_max(std::span<const double> samples) {
  double m = 0.0;
  for (double v : samples) m = std::max(m, std::abs(v));
  return m;
}

double time_max(const TimeDomainTrace& trace) { return time_max(std::span<const double>(trace.samples)); }

SpectralSample extract_band(const TimeDomainTrace& trace, double f_thz) {
  check_nyquist(f_thz, trace.dt_ps);
  if (trace.samples.empty()) throw ShapeError("extract_band: empty trace");
  return apply_kernel(trace.samples, band_kernel(f_thz, trace.samples.size(), trace.dt_ps), f_thz);
}

BandExtractor::BandExtractor(const BandSet& bands, std::size_t length, double dt_ps)
    : bands_(bands), length_(length), dt_(dt_ps) {
  if (length == 0) throw ShapeError("BandExtractor: zero-length traces");
  kernels_.reserve(bands.size());
  for (double f : bands.frequencies()) {
    check_nyquist(f, dt_ps);
    kernels_.push_back(band_kernel(f, length, dt_ps));
  }
}

SpectralSample BandExtractor::extract(std::span<const double> samples, std::size_t band) const {
  if (samples.size() != length_) throw ShapeError("BandExtractor: trace length mismatch");
  return apply_kernel(samples, kernels_.at(band), bands_[band]);
}

SpectralCube pixelwise_cube(const TraceGrid& traces, const BandSet& bands) {
  if (traces.traces.size() != traces.rows * traces.cols || traces.traces.empty())
    throw ShapeError("pixelwise_cube: grid size does not match trace count");
  const std::size_t length = traces.traces.front().samples.size();
  const double dt = traces.traces.front().dt_ps;
  for (const auto& t : traces.traces) {
    if (t.samples.size() != length || t.dt_ps != dt)
      throw ShapeError("pixelwise_cube: traces differ in length or sampling step");
  }
  const BandExtractor extractor(bands, length, dt);
  SpectralCube cube;
  cube.bands = bands;
  cube.rows = traces.rows;
  cube.cols = traces.cols;
  cube.amplitude.assign(bands.size(), Image(traces.rows, traces.cols));
  cube.phase.assign(bands.size(), Image(traces.rows, traces.cols));
  for (std::size_t r = 0; r < traces.rows; ++r) {
    for (std::size_t c = 0; c < traces.cols; ++c) {
      const auto& samples = traces.at(r, c).samples;
      for (std::size_t b = 0; b < bands.size(); ++b) {
        const SpectralSample s = extractor.extract(samples, b);
        cube.amplitude[b](r, c) = s.amplitude;
        cube.phase[b](r, c) = s.phase;
      }
    }
  }
  return cube;
}

}  // namespace thz::signal
