#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>

#include "oracles.hpp"
#include "thz/signal.hpp"

namespace {

using namespace thz::testing;

using namespace thz;
using namespace thz::signal;
using cd = std::complex<double>;

constexpr double kC = 0.299792458;

double wrapped_diff(double a, double b) { return std::abs(wrap_phase(a - b)); }

TEST(BandSet, DefaultListIsTheTwelveWaterLines) {
  const auto b = default_band_set();
  const std::vector<double> expected{0.380, 0.448, 0.557, 0.621, 0.916, 0.970,
                                     0.988, 1.097, 1.113, 1.163, 1.208, 1.229};
  ASSERT_EQ(b.size(), 12u);
  EXPECT_EQ(b.frequencies(), expected);
  for (std::size_t i = 1; i < b.size(); ++i) EXPECT_LT(b[i - 1], b[i]);
}

TEST(BandSet, RejectsUnsortedOrOutOfRange) {
  EXPECT_THROW(BandSet({0.5, 0.4}), ConfigError);
  EXPECT_THROW(BandSet({0.5, 0.5}), ConfigError);
  EXPECT_THROW(BandSet({0.0, 1.0}), ConfigError);
  EXPECT_THROW(BandSet({1.0, 5.5}), ConfigError);
}

TEST(DetectedSpectrum, ZeroThicknessIsReferenceTimesFresnel) {
  const auto m = MaterialProfile::constant(1.55, 0.01, {0.5, 0.1});
  const cd ref{0.3, -1.2};
  EXPECT_EQ(detected_spectrum(ref, m, 0.0, 0.9), ref * cd(0.5, 0.1));
}

TEST(DetectedSpectrum, NoAbsorptionOnlyRotatesPhase) {
  const auto m = MaterialProfile::constant(1.7, 0.0);
  const cd ref{1.0, 0.5};
  for (double d : {0.1, 1.0, 3.7}) {
    EXPECT_NEAR(std::abs(detected_spectrum(ref, m, d, 1.1)), std::abs(ref * 0.5), 1e-12);
  }
}

TEST(DetectedSpectrum, AttenuationIsExponentialInThickness) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const double kappa = 0.001 + 0.05 * u(rng), f = 0.2 + 3.0 * u(rng), d = 0.1 + 4.0 * u(rng);
    const auto m = MaterialProfile::constant(1.5, kappa);
    const cd ref{1.0, 0.0};
    const double base = std::abs(ref * m.fresnel());
    const double r1 = std::abs(detected_spectrum(ref, m, d, f)) / base;
    const double r2 = std::abs(detected_spectrum(ref, m, 2 * d, f)) / base;
    EXPECT_NEAR(r2, r1 * r1, 1e-12);
    EXPECT_NEAR(r1, std::exp(-kappa * 2 * kPi * f * d / kC), 1e-12);
  }
}

TEST(DetectedSpectrum, MagnitudeStrictlyDecreasingWhenAbsorbing) {
  const auto m = MaterialProfile::constant(1.55, 0.005);
  double prev = std::abs(detected_spectrum({1.0, 0.0}, m, 0.0, 0.6));
  for (double d = 0.25; d <= 5.0; d += 0.25) {
    const double cur = std::abs(detected_spectrum({1.0, 0.0}, m, d, 0.6));
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(DetectedSpectrum, PhaseSlopeMatchesRefractiveIndex) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10; ++i) {
    const double n = 1.0 + 1.5 * u(rng), f = 0.2 + 2.0 * u(rng), d = 0.05 + 2.0 * u(rng);
    const auto m = MaterialProfile::constant(n, 0.0, {1.0, 0.0});
    const double phase = std::arg(detected_spectrum({1.0, 0.0}, m, d, f));
    const double expected = -n * 2 * kPi * f * d / kC;
    // Compare the unwrapped phase: choose the branch nearest the expectation.
    const double unwrapped = phase + 2 * kPi * std::round((expected - phase) / (2 * kPi));
    EXPECT_NEAR(unwrapped / expected, 1.0, 1e-9);
  }
}

TEST(DetectedSpectrum, Errors) {
  const auto m = MaterialProfile::constant(1.55, 0.005);
  EXPECT_THROW(detected_spectrum({1, 0}, m, -0.1, 1.0), DomainError);
  EXPECT_THROW(detected_spectrum({1, 0}, m, 1.0, 7.0), RangeError);
}

TEST(Material, InterpolatesAndRejectsOutsideTable) {
  const MaterialProfile m({0.1, 1.0, 4.0}, {1.5, 1.6, 1.9}, {0.0, 0.01, 0.04});
  EXPECT_NEAR(m.n_at(0.55), 1.55, 1e-12);
  EXPECT_NEAR(m.kappa_at(2.5), 0.025, 1e-12);
  EXPECT_THROW((void)m.n_at(4.5), RangeError);
  EXPECT_DOUBLE_EQ(m.n_clamped(4.5), 1.9);
  EXPECT_THROW(MaterialProfile({0.1, 1.0}, {0.9, 1.0}, {0.0, 0.0}), ConfigError);
}

TEST(Material, JsonRoundTrip) {
  const auto m = MaterialProfile::from_json(R"({"freq_thz":[0.1,4.0],"n":[1.5,1.5],"kappa":[0.0,0.02],"fresnel_t":[0.4,0.1]})");
  EXPECT_EQ(m.fresnel(), cd(0.4, 0.1));
  const auto back = MaterialProfile::from_json(m.to_json());
  EXPECT_EQ(back.kappa_table(), m.kappa_table());
}

TEST(Pulse, DefaultShape) {
  const auto p = default_pulse();
  ASSERT_EQ(p.length(), 1000u);
  EXPECT_DOUBLE_EQ(p.dt_ps, 0.1);
  EXPECT_NEAR(time_max(p.samples), 1.0, 1e-12);
  for (double s : p.samples) EXPECT_TRUE(std::isfinite(s));
}

TEST(SimulateTrace, ZeroThicknessUnitFresnelIsIdentity) {
  const auto p = default_pulse();
  const auto m = MaterialProfile::constant(1.55, 0.005, {1.0, 0.0});
  const auto t = simulate_trace(p, m, 0.0);
  ASSERT_EQ(t.samples.size(), p.samples.size());
  for (std::size_t k = 0; k < p.samples.size(); ++k) EXPECT_NEAR(t.samples[k], p.samples[k], 1e-9);
}

TEST(SimulateTrace, LosslessSlabDelaysPulse) {
  const auto p = default_pulse();
  const double n = 1.6, d = 2.0;
  const auto m = MaterialProfile::constant(n, 0.0, {1.0, 0.0});
  const auto t = simulate_trace(p, m, d);
  // Cross-correlation peak with parabolic refinement.
  const std::size_t T = p.samples.size();
  std::vector<double> xc(T);
  for (std::size_t lag = 0; lag < T; ++lag) {
    double acc = 0;
    for (std::size_t k = 0; k + lag < T; ++k) acc += p.samples[k] * t.samples[k + lag];
    xc[lag] = acc;
  }
  std::size_t best = 1;
  for (std::size_t lag = 1; lag + 1 < T; ++lag) {
    if (xc[lag] > xc[best]) best = lag;
  }
  const double a = xc[best - 1], b = xc[best], c = xc[best + 1];
  const double lag = static_cast<double>(best) + 0.5 * (a - c) / (a - 2 * b + c);
  EXPECT_NEAR(lag * p.dt_ps, n * d / kC, 0.02);
}

TEST(SimulateTrace, TimeMaxDecreasesWithThickness) {
  const auto p = default_pulse();
  const auto m = MaterialProfile::constant(1.55, 0.005);
  double prev = time_max(simulate_trace(p, m, 0.0));
  for (double d : {0.5, 1.0, 2.0}) {
    const double cur = time_max(simulate_trace(p, m, d));
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  EXPECT_THROW(simulate_trace(p, m, -1.0), DomainError);
}

TEST(SimulateTrace, CachedSimulatorMatches) {
  const auto p = default_pulse();
  const auto m = MaterialProfile::constant(1.55, 0.005);
  const TraceSimulator sim(p, m);
  for (double d : {0.0, 0.7, 3.1}) EXPECT_EQ(sim.simulate(d).samples, simulate_trace(p, m, d).samples);
}

TEST(TimeMax, Basics) {
  EXPECT_EQ(time_max(std::vector<double>(10, 0.0)), 0.0);
  std::vector<double> x(10, 0.0);
  x[4] = -2.5;
  EXPECT_EQ(time_max(x), 2.5);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  std::vector<double> r(50);
  for (double& v : r) v = g(rng);
  for (double a : {2.0, -3.0, 0.5}) {
    std::vector<double> s = r;
    for (double& v : s) v *= a;
    EXPECT_NEAR(time_max(s), std::abs(a) * time_max(r), 1e-12);
  }
}

TEST(ExtractBand, ZeroTrace) {
  const auto s = extract_band(TimeDomainTrace{std::vector<double>(1000, 0.0), 0.1}, 0.5);
  EXPECT_EQ(s.amplitude, 0.0);
  EXPECT_EQ(s.phase, 0.0);
}

TEST(ExtractBand, GridCosineHasUnitAmplitude) {
  TimeDomainTrace t{std::vector<double>(1000), 0.1};
  const double f = 0.5;  // 50 cycles in the 100 ps window
  for (std::size_t k = 0; k < t.samples.size(); ++k) t.samples[k] = std::cos(2 * kPi * f * k * 0.1);
  const auto s = extract_band(t, f);
  EXPECT_NEAR(s.amplitude, 1.0, 1e-6);
  EXPECT_NEAR(s.phase, 0.0, 1e-6);
}

TEST(ExtractBand, OffGridFrequenciesMatchDirectSum) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  TimeDomainTrace t{std::vector<double>(1000), 0.1};
  for (double& v : t.samples) v = g(rng);
  const auto bands = default_band_set();
  for (double f : bands.frequencies()) {
    const auto s = extract_band(t, f);
    const cd ref = dft_at(t.samples, f, 0.1);
    EXPECT_NEAR(s.amplitude, std::abs(ref), 1e-9);
    EXPECT_LT(wrapped_diff(s.phase, std::arg(ref)), 1e-9);
  }
}

TEST(ExtractBand, DelayedCosinePhase) {
  TimeDomainTrace t{std::vector<double>(1000), 0.1};
  const double f = 0.7, tau = 1.3;
  for (std::size_t k = 0; k < t.samples.size(); ++k) t.samples[k] = std::cos(2 * kPi * f * (k * 0.1 - tau));
  EXPECT_LT(wrapped_diff(extract_band(t, f).phase, -2 * kPi * f * tau), 1e-6);
}

TEST(ExtractBand, SignFlipShiftsPhaseByPi) {
  const auto p = default_pulse();
  TimeDomainTrace a{p.samples, p.dt_ps}, b{p.samples, p.dt_ps};
  for (double& v : b.samples) v = -v;
  for (double f : {0.38, 1.229}) {
    const auto sa = extract_band(a, f), sb = extract_band(b, f);
    EXPECT_NEAR(sa.amplitude, sb.amplitude, 1e-12);
    EXPECT_LT(wrapped_diff(sb.phase, sa.phase + kPi), 1e-9);
  }
}

TEST(ExtractBand, NyquistGuard) {
  TimeDomainTrace t{std::vector<double>(100, 1.0), 0.1};
  EXPECT_THROW(extract_band(t, 5.01), RangeError);
  EXPECT_THROW(extract_band(t, 0.0), RangeError);
  EXPECT_NO_THROW(extract_band(t, 5.0));
}

TEST(PixelwiseCube, EqualsPerPixelLoop) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  TraceGrid grid{4, 4, {}};
  for (int i = 0; i < 16; ++i) {
    TimeDomainTrace t{std::vector<double>(200), 0.1};
    for (double& v : t.samples) v = g(rng);
    grid.traces.push_back(t);
  }
  const auto bands = default_band_set();
  const auto cube = pixelwise_cube(grid, bands);
  for (std::size_t b = 0; b < bands.size(); ++b) {
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 4; ++c) {
        const auto s = extract_band(grid.at(r, c), bands[b]);
        EXPECT_EQ(cube.amplitude[b](r, c), s.amplitude);
        EXPECT_EQ(cube.phase[b](r, c), s.phase);
      }
    }
  }
}

TEST(PixelwiseCube, HeterogeneousTracesRejected) {
  TraceGrid grid{1, 2, {TimeDomainTrace{std::vector<double>(100), 0.1}, TimeDomainTrace{std::vector<double>(90), 0.1}}};
  EXPECT_THROW(pixelwise_cube(grid, default_band_set()), ShapeError);
}

}  // namespace
