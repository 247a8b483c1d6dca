#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "thz/metrics.hpp"
#include "thz/nn/ops.hpp"
#include "thz/sarnet.hpp"
#include "thz/signal.hpp"
#include "thz/tomo.hpp"

namespace {

using namespace thz;

template <typename T>
nn::Tensor<T> noise(nn::Shape4 s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  nn::Tensor<T> t(s);
  for (T& v : t.data) v = static_cast<T>(g(rng));
  return t;
}

void BM_SimulateTrace(benchmark::State& state) {
  const signal::TraceSimulator sim(signal::default_pulse(), signal::MaterialProfile::constant(1.55, 0.005));
  double d = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sim.simulate(d));
    d = d < 5.0 ? d + 0.01 : 0.0;
  }
}
BENCHMARK(BM_SimulateTrace);

void BM_BandExtraction(benchmark::State& state) {
  const auto bands = signal::default_band_set();
  const signal::BandExtractor ex(bands, 1000, 0.1);
  const auto trace = signal::default_pulse().samples;
  for (auto _ : state) {
    for (std::size_t b = 0; b < bands.size(); ++b) benchmark::DoNotOptimize(ex.extract(trace, b));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(bands.size()));
}
BENCHMARK(BM_BandExtraction);

void BM_OrthProject(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const auto v = nn::constant(noise<float>({1, 16, hw, hw}, 1));
  const auto x = nn::constant(noise<float>({1, 64, hw, hw}, 2));
  nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(nn::orth_project(v, x));
}
BENCHMARK(BM_OrthProject)->Arg(16)->Arg(32)->Arg(64);

void BM_AttentionApply(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const auto v = nn::constant(noise<float>({1, 16, hw, hw}, 3));
  const auto s = nn::constant(noise<float>({1, 64, hw, hw}, 4));
  nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(nn::attention_apply(v, s));
}
BENCHMARK(BM_AttentionApply)->Arg(8)->Arg(16)->Arg(32);

void BM_SarnetForward(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  sarnet::Network<float> net(sarnet::NetworkCfg::desk());
  net.initialize(1);
  const sarnet::ViewInput<float> in{noise<float>({1, 1, hw, hw}, 5), noise<float>({1, sarnet::kBandChannels, hw, hw}, 6)};
  for (auto _ : state) benchmark::DoNotOptimize(sarnet::restore_single(net, in));
}
BENCHMARK(BM_SarnetForward)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_SarnetTrainStep(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  sarnet::Network<float> net(sarnet::NetworkCfg::desk());
  net.initialize(1);
  const auto timemax = noise<float>({4, 1, hw, hw}, 7);
  const auto bands = noise<float>({4, sarnet::kBandChannels, hw, hw}, 8);
  const auto target = nn::constant(noise<float>({4, 1, hw, hw}, 9));
  for (auto _ : state) {
    const auto x = sarnet::stem(net, nn::constant(timemax));
    const auto loss = nn::mse_loss(sarnet::sarnet_forward(net, x, bands, true).restored, target);
    nn::backward(loss);
    nn::release_graph(loss);
    net.store.zero_grad();
  }
}
BENCHMARK(BM_SarnetTrainStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

Image disk_image(std::size_t n) {
  Image img(n, n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0, r = 0.3 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double y = static_cast<double>(i) - c, x = static_cast<double>(j) - c;
      img(i, j) = x * x + y * y <= r * r ? 1.0 : 0.0;
    }
  return img;
}

std::vector<double> angles(std::size_t count) {
  std::vector<double> a(count);
  for (std::size_t i = 0; i < count; ++i) a[i] = 180.0 * static_cast<double>(i) / static_cast<double>(count);
  return a;
}

void BM_ForwardRadon(benchmark::State& state) {
  const auto img = disk_image(static_cast<std::size_t>(state.range(0)));
  const auto th = angles(60);
  for (auto _ : state) benchmark::DoNotOptimize(tomo::forward_radon(img, th));
}
BENCHMARK(BM_ForwardRadon)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Fbp(benchmark::State& state) {
  const auto sino = tomo::forward_radon(disk_image(static_cast<std::size_t>(state.range(0))), angles(60));
  for (auto _ : state) benchmark::DoNotOptimize(tomo::fbp(sino));
}
BENCHMARK(BM_Fbp)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Sart(benchmark::State& state) {
  const auto sino = tomo::forward_radon(disk_image(static_cast<std::size_t>(state.range(0))), angles(60));
  tomo::SartOptions opt;
  opt.iterations = 20;
  opt.relaxation = 0.25;
  for (auto _ : state) benchmark::DoNotOptimize(tomo::sart(sino, opt));
}
BENCHMARK(BM_Sart)->Arg(64)->Unit(benchmark::kMillisecond);

metrics::PointCloud cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 32.0);
  metrics::PointCloud pc;
  for (std::size_t i = 0; i < n; ++i) pc.points.push_back({u(rng), u(rng), u(rng)});
  return pc;
}

void BM_Chamfer(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = cloud(n, 1), b = cloud(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::chamfer(a, b));
}
BENCHMARK(BM_Chamfer)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_ChamferBrute(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = cloud(n, 1), b = cloud(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::chamfer_brute(a, b));
}
BENCHMARK(BM_ChamferBrute)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
