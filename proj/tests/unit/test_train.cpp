#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "thz/train.hpp"

namespace {

using namespace thz;
using namespace thz::train;
namespace fs = std::filesystem;

// Small rendered dataset shared by the training tests: 32^2 views.
const TrainData& small_data() {
  static const TrainData data = [] {
    phantom::DatasetConfig cfg;
    cfg.angles.count = 4;
    cfg.seed = 3;
    const char* shapes[] = {
        R"({"grid":32,"voxel_size_mm":0.5,"primitives":[{"type":"cylinder","radius_mm":5,"height_mm":10}]})",
        R"({"grid":32,"voxel_size_mm":0.5,"primitives":[{"type":"box","size_mm":[6,8,10]},
            {"type":"sphere","center_mm":[0,0,0],"radius_mm":3,"op":"difference"}]})"};
    cfg.objects.push_back({"a", phantom::parse_shape_spec(shapes[0])});
    cfg.objects.push_back({"b", phantom::parse_shape_spec(shapes[1])});
    TrainData d;
    d.reference = phantom::reference_levels(cfg.material, signal::default_pulse(), cfg.bands);
    for (std::size_t i = 0; i < cfg.objects.size(); ++i) {
      auto o = phantom::generate_object(cfg, i);
      d.objects.push_back({o.id, o.corrupted, o.gt_scale_mm});
    }
    return d;
  }();
  return data;
}

TrainCfg quick_cfg(int epochs) {
  TrainCfg cfg;
  cfg.epochs = epochs;
  cfg.crop = 32;
  cfg.batch_size = 2;
  cfg.lr0 = 1e-3;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

TEST(Mse, Definition) {
  const Image a(3, 4, 0.2);
  EXPECT_EQ(mse(a, a), 0.0);
  EXPECT_NEAR(mse(a, Image(3, 4, 0.45)), 0.25 * 0.25, 1e-15);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image x(5, 5), y(5, 5);
  for (double& v : x.data()) v = u(rng);
  for (double& v : y.data()) v = u(rng);
  double s = 0.0;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) s += (x(r, c) - y(r, c)) * (x(r, c) - y(r, c));
  EXPECT_NEAR(mse(x, y), s / 25.0, 1e-12);
  EXPECT_THROW(mse(x, Image(5, 4)), ShapeError);
}

TEST(LrSchedule, StepDecay) {
  TrainCfg cfg;
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 1e-4);
  EXPECT_NEAR(lr_at(299, cfg), 1e-4, 1e-18);
  EXPECT_NEAR(lr_at(300, cfg), 1e-5, 1e-18);
  EXPECT_NEAR(lr_at(901, cfg), 1e-7, 1e-20);
  double prev = lr_at(0, cfg);
  for (int e = 1; e < 2000; ++e) {
    const double lr = lr_at(e, cfg);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
  EXPECT_THROW(lr_at(-1, cfg), DomainError);
}

TEST(TrainCfg, DefaultsAndValidation) {
  const TrainCfg cfg;
  EXPECT_EQ(cfg.beta1, 0.9);
  EXPECT_EQ(cfg.beta2, 0.999);
  EXPECT_EQ(cfg.adam_eps, 1e-8);
  EXPECT_EQ(cfg.epochs, 1000);
  EXPECT_EQ(cfg.stage2_lr_mult, 0.1);
  EXPECT_EQ(TrainCfg::from_json(cfg.to_json()).to_json(), cfg.to_json());
  EXPECT_THROW(TrainCfg::from_json(R"({"lr0": 0})"), ConfigError);
  EXPECT_THROW(TrainCfg::from_json(R"({"epochs": 0})"), ConfigError);
  EXPECT_THROW(TrainCfg::from_json(R"({"momentum": 0.9})"), ConfigError);
  EXPECT_THROW(TrainCfg::from_json(R"({"crop": 40})"), ConfigError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  nn::ParamStore<double> store;
  const auto p = store.add_param("w", nn::Shape4{1, 1, 2, 3}, nn::Init::kHe);
  const auto q = store.add_param("u", nn::Shape4{1, 1, 1, 4}, nn::Init::kHe);
  store.initialize(7);
  const auto before_p = p->value.data, before_q = q->value.data;
  p->grad_buffer();  // allocated, all zero
  Adam<double> adam(0.9, 0.999, 1e-8);
  adam.step(store, 1e-3);
  EXPECT_EQ(p->value.data, before_p);
  EXPECT_EQ(q->value.data, before_q);  // never received a gradient
}

TEST(Adam, FirstStepsMatchClosedForm) {
  nn::ParamStore<double> store;
  const auto p = store.add_param("w", nn::Shape4{1, 1, 1, 1}, nn::Init::kZero);
  Adam<double> adam(0.9, 0.999, 1e-8);
  const double g1 = 0.5, g2 = -2.0, lr = 0.01;
  p->grad_buffer()[0] = g1;
  adam.step(store, lr);
  // Bias-corrected first step moves by lr * sign(g).
  EXPECT_NEAR(p->value.data[0], -lr * g1 / (std::abs(g1) + 1e-8), 1e-15);
  p->grad_buffer()[0] = g2;
  adam.step(store, lr);
  const double m = 0.9 * 0.1 * g1 + 0.1 * g2, v = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
  const double step2 = lr * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(p->value.data[0], -lr * g1 / (std::abs(g1) + 1e-8) - step2, 1e-15);
}

TEST(Splits, LeaveOneOutNeverTrainsOnHeldOut) {
  const auto& data = small_data();
  std::set<std::string> held;
  for (const auto& obj : data.objects) {
    const auto split = leave_one_out(data, obj.id);
    for (const auto& it : split.train) EXPECT_NE(data.objects[it.object].id, obj.id);
    for (const auto& it : split.val) EXPECT_EQ(data.objects[it.object].id, obj.id);
    EXPECT_EQ(split.train.size() + split.val.size(), 8u);
    held.insert(data.objects[split.val.front().object].id);
  }
  EXPECT_EQ(held.size(), data.objects.size());  // every object held out exactly once across the sweep
  EXPECT_THROW(leave_one_out(data, "nope"), ConfigError);
}

TEST(Splits, InterleavedPhases) {
  const auto& data = small_data();
  const auto split = interleaved(data, 4, 1, 3);
  for (const auto& it : split.val) EXPECT_EQ(it.view % 4, 1u);
  for (const auto& it : split.train) {
    EXPECT_NE(it.view % 4, 1u);
    EXPECT_NE(it.view % 4, 3u);
  }
  EXPECT_EQ(split.val.size(), 2u);
  EXPECT_EQ(split.train.size(), 4u);
  EXPECT_THROW(interleaved(data, 1, 0), ConfigError);
  EXPECT_THROW(interleaved(data, 4, 4), ConfigError);
}

TEST(Targets, RangeAndBaseline) {
  const auto& data = small_data();
  for (const auto& obj : data.objects) {
    for (const auto& v : obj.views) {
      const auto t = normalized_target(v, obj.gt_scale_mm);
      const auto b = baseline_image(v, data.reference);
      for (double x : t.data()) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0 + 1e-12);
      }
      for (double x : b.data()) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
      }
    }
  }
  EXPECT_EQ(clamped_psnr(Image(2, 2, 1.5), Image(2, 2, 1.0)), std::numeric_limits<double>::infinity());
}

TEST(TrainStage, OneEpochReducesLossOnSomeSeed) {
  const auto& data = small_data();
  Split split;
  split.train = {{0, 0}, {0, 2}};
  int decreased = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    sarnet::Network<float> net(sarnet::NetworkCfg::desk());
    net.initialize(seed);
    auto cfg = quick_cfg(1);
    cfg.seed = seed;
    cfg.augment = false;
    const auto before = restore_items(net, data, split.train, 1, false);
    double loss0 = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
      loss0 += mse(before[i], normalized_target(data.objects[0].views[split.train[i].view], data.objects[0].gt_scale_mm));
    const auto r = train_stage(data, split, net, cfg);
    const auto after = restore_items(net, data, split.train, 1, false);
    double loss1 = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
      loss1 += mse(after[i], normalized_target(data.objects[0].views[split.train[i].view], data.objects[0].gt_scale_mm));
    ASSERT_EQ(r.log_lines.size(), 1u);
    EXPECT_TRUE(std::isfinite(loss1));
    decreased += loss1 < loss0;
  }
  EXPECT_GE(decreased, 1);
}

TEST(TrainStage, StageTwoKeepsNormalisationStatistics) {
  const auto& data = small_data();
  sarnet::Network<double> net(sarnet::NetworkCfg::desk());
  net.initialize(2);
  Split split;
  split.train = {{0, 0}, {0, 2}, {1, 1}};
  train_stage(data, split, net, quick_cfg(1));
  const auto stats = net.store.buffers();
  auto cfg = quick_cfg(1);
  cfg.stage = 2;
  cfg.stage2_epochs = 2;
  const auto r = train_stage(data, split, net, cfg);
  ASSERT_EQ(r.log_lines.size(), 2u);
  for (const auto& [path, t] : net.store.buffers()) EXPECT_EQ(t.data, stats.at(path).data) << path;
  for (const auto& img : restore_items(net, data, split.train, 2, false))
    for (std::size_t i = 0; i < img.size(); ++i) ASSERT_TRUE(std::isfinite(img.data()[i]));
}

TEST(TrainStage, RejectsOverlappingSplits) {
  const auto& data = small_data();
  sarnet::Network<float> net(sarnet::NetworkCfg::desk());
  net.initialize(1);
  Split split;
  split.train = {{0, 0}};
  split.val = {{0, 0}};
  EXPECT_THROW(train_stage(data, split, net, quick_cfg(1)), DataInconsistency);
  split = {};
  EXPECT_THROW(train_stage(data, split, net, quick_cfg(1)), ConfigError);
}

TEST(TrainStage, DeterministicLogsAndResume) {
  const auto& data = small_data();
  const auto split = interleaved(data, 4, 1, 3);
  auto cfg = quick_cfg(3);
  cfg.seed = 5;
  const auto root = fs::temp_directory_path() / "thz_train_resume";
  fs::remove_all(root);

  auto run = [&](const fs::path& dir, const TrainCfg& c, bool resume, sarnet::Network<double>& net) {
    return train_stage(data, split, net, c, dir, resume);
  };
  sarnet::Network<double> a(sarnet::NetworkCfg::desk()), b(sarnet::NetworkCfg::desk()),
      c(sarnet::NetworkCfg::desk());
  a.initialize(9);
  b.initialize(9);
  c.initialize(9);
  run(root / "a", cfg, false, a);
  run(root / "b", cfg, false, b);
  EXPECT_EQ(slurp(root / "a" / "log.ndjson"), slurp(root / "b" / "log.ndjson"));
  EXPECT_EQ(slurp(root / "a" / "best.ckpt"), slurp(root / "b" / "best.ckpt"));

  // Interrupted after epoch 0, then resumed in a fresh process-like state.
  auto stop = cfg;
  stop.stop_after_epoch = 0;
  const auto first = run(root / "c", stop, false, c);
  EXPECT_TRUE(first.stopped_early);
  sarnet::Network<double> d(sarnet::NetworkCfg::desk());
  d.initialize(1234);  // overwritten by the state
  run(root / "c", cfg, true, d);
  EXPECT_EQ(slurp(root / "a" / "log.ndjson"), slurp(root / "c" / "log.ndjson"));
  for (const auto& [path, var] : a.store.params()) EXPECT_EQ(var->value.data, d.store.param(path)->value.data) << path;

  // A changed config cannot resume the interrupted run.
  auto other = cfg;
  other.lr0 = 2e-3;
  sarnet::Network<double> e(sarnet::NetworkCfg::desk());
  EXPECT_THROW(run(root / "c", other, true, e), DataInconsistency);
  EXPECT_THROW(run(root / "missing", cfg, true, e), MissingPrerequisite);
  fs::remove_all(root);
}

}  // namespace
