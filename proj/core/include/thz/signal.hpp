#pragma once

#include <complex>
#include <filesystem>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "thz/common.hpp"

namespace thz::signal {

/// Speed of light in mm/ps, so that f[THz] * d[mm] / c is dimensionless.
inline constexpr double kSpeedOfLight = 0.299792458;

/// Sampled reference THz pulse (electric field, arbitrary units).
struct ReferencePulse {
  std::vector<double> samples;
  double dt_ps = 0.1;
  double t0_ps = 20.0;

  [[nodiscard]] std::size_t length() const { return samples.size(); }
};

/// First derivative of a Gaussian whose envelope has the given FWHM, peak
/// normalised to |max| = 1 and centred at `t0_ps`.
ReferencePulse default_pulse(std::size_t length = 1000, double dt_ps = 0.1, double t0_ps = 20.0,
                             double fwhm_ps = 0.516);

/// Complex refractive index n - j*kappa tabulated over frequency, plus a
/// frequency-independent interface (Fresnel) factor.
class MaterialProfile {
 public:
  MaterialProfile(std::vector<double> freq_thz, std::vector<double> n, std::vector<double> kappa,
                  std::complex<double> fresnel = {0.5, 0.0});

  /// Constant n and kappa over [0, 5] THz.
  static MaterialProfile constant(double n, double kappa, std::complex<double> fresnel = {0.5, 0.0});
  /// Parses {"freq_thz": [...], "n": [...], "kappa": [...]} with optional
  /// "fresnel_t" (number or [re, im]).
  static MaterialProfile from_json(std::string_view text);
  static MaterialProfile load(const std::filesystem::path& path);

  /// Linear interpolation; RangeError outside the table.
  [[nodiscard]] double n_at(double f_thz) const;
  [[nodiscard]] double kappa_at(double f_thz) const;
  /// Same as n_at/kappa_at but holds the end values outside the table.
  [[nodiscard]] double n_clamped(double f_thz) const;
  [[nodiscard]] double kappa_clamped(double f_thz) const;

  [[nodiscard]] bool covers(double f_thz) const;
  [[nodiscard]] std::complex<double> fresnel() const { return fresnel_; }
  [[nodiscard]] const std::vector<double>& freq_thz() const { return freq_; }
  [[nodiscard]] const std::vector<double>& n_table() const { return n_; }
  [[nodiscard]] const std::vector<double>& kappa_table() const { return kappa_; }

  [[nodiscard]] std::string to_json() const;

 private:
  [[nodiscard]] double interp(const std::vector<double>& table, double f, bool clamp) const;

  std::vector<double> freq_;
  std::vector<double> n_;
  std::vector<double> kappa_;
  std::complex<double> fresnel_;
};

struct TimeDomainTrace {
  std::vector<double> samples;
  double dt_ps = 0.1;
};

/// Ordered set of extraction frequencies in THz.
class BandSet {
 public:
  BandSet() = default;
  /// Throws ConfigError unless strictly ascending and within (0, 5] THz.
  explicit BandSet(std::vector<double> frequencies_thz);

  [[nodiscard]] const std::vector<double>& frequencies() const { return freqs_; }
  [[nodiscard]] std::size_t size() const { return freqs_.size(); }
  double operator[](std::size_t i) const { return freqs_[i]; }
  bool operator==(const BandSet&) const = default;

 private:
  std::vector<double> freqs_;
};

struct SpectralSample {
  double frequency_thz = 0.0;
  double amplitude = 0.0;
  double phase = 0.0;  ///< radians, (-pi, pi]
};

/// Amplitude and phase images, one pair per band.
struct SpectralCube {
  BandSet bands;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Image> amplitude;
  std::vector<Image> phase;
};

/// Row-major grid of traces sharing length and sampling step.
struct TraceGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TimeDomainTrace> traces;

  const TimeDomainTrace& at(std::size_t r, std::size_t c) const { return traces[r * cols + c]; }
};

/// The twelve water-absorption frequencies used as spectral inputs.
BandSet default_band_set();

/// Single-layer transmission: S_ref * t * exp(-kappa 2 pi f d / c) * exp(-j n 2 pi f d / c).
std::complex<double> detected_spectrum(std::complex<double> ref_spectrum,
                                       const MaterialProfile& material, double d_mm, double f_thz);

/// Applies the transmission model bin-wise to the pulse spectrum and inverts.
TimeDomainTrace simulate_trace(const ReferencePulse& pulse, const MaterialProfile& material,
                               double d_mm);

/// Caches the pulse spectrum and per-bin material values so that many
/// thicknesses can be simulated cheaply. Not safe for concurrent use of one
/// instance; create one per thread.
class TraceSimulator {
 public:
  TraceSimulator(const ReferencePulse& pulse, const MaterialProfile& material);
  ~TraceSimulator();
  TraceSimulator(const TraceSimulator&) = delete;
  TraceSimulator& operator=(const TraceSimulator&) = delete;

  [[nodiscard]] TimeDomainTrace simulate(double d_mm) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

double time_max(std::span<const double> samples);
double time_max(const TimeDomainTrace& trace);

/// Exact-frequency discrete Fourier coefficient (2/T) sum_k x[k] e^{-j 2 pi f k dt}.
SpectralSample extract_band(const TimeDomainTrace& trace, double f_thz);

/// Precomputed per-band kernels for repeated extraction from traces of a fixed
/// length. Produces results bit-identical to extract_band.
class BandExtractor {
 public:
  BandExtractor(const BandSet& bands, std::size_t length, double dt_ps);

  [[nodiscard]] SpectralSample extract(std::span<const double> samples, std::size_t band) const;
  [[nodiscard]] std::size_t length() const { return length_; }
  [[nodiscard]] double dt_ps() const { return dt_; }
  [[nodiscard]] const BandSet& bands() const { return bands_; }

 private:
  BandSet bands_;
  std::size_t length_;
  double dt_;
  std::vector<std::vector<std::complex<double>>> kernels_;
};

SpectralCube pixelwise_cube(const TraceGrid& traces, const BandSet& bands);

}  // namespace thz::signal
