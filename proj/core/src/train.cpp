#include "thz/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "json.hpp"
#include "thz/io.hpp"

namespace thz::train {

using nlohmann::json;
using nn::Var;

// ---------------------------------------------------------------------------
// Configuration

void TrainCfg::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("train lr0 must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train adam_eps must be > 0");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("train decay_factor must lie in (0, 1]");
  if (decay_every < 1) throw ConfigError("train decay_every must be >= 1");
  if (epochs < 1 || stage2_epochs < 1) throw ConfigError("train epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train batch_size must be >= 1");
  if (crop < 16 || crop % 16 != 0) throw ConfigError("train crop must be a positive multiple of 16");
  if (stage != 1 && stage != 2) throw ConfigError("train stage must be 1 or 2");
  if (!(stage2_lr_mult > 0.0)) throw ConfigError("train stage2_lr_mult must be > 0");
  if (val_every < 1) throw ConfigError("train val_every must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("train checkpoint_every must be >= 1");
}

std::string TrainCfg::to_json() const {
  json j;
  j["lr0"] = lr0;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["decay_factor"] = decay_factor;
  j["decay_every"] = decay_every;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["crop"] = crop;
  j["seed"] = seed;
  j["stage"] = stage;
  j["stage2_lr_mult"] = stage2_lr_mult;
  j["stage2_epochs"] = stage2_epochs;
  j["zero_bands"] = zero_bands;
  j["augment"] = augment;
  j["val_every"] = val_every;
  j["checkpoint_every"] = checkpoint_every;
  j["stop_after_epoch"] = stop_after_epoch;
  return j.dump();
}

TrainCfg TrainCfg::from_json(std::string_view text, const std::string& where) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError((where.empty() ? "/" : where) + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError((where.empty() ? "/" : where) + ": train config must be an object");
  TrainCfg cfg;
  for (const auto& [key, v] : j.items()) {
    const std::string ptr = where + "/" + key;
    auto number = [&]() {
      if (!v.is_number()) throw ConfigError(ptr + ": expected a number");
      return v.get<double>();
    };
    auto integer = [&]() {
      if (!v.is_number_integer()) throw ConfigError(ptr + ": expected an integer");
      return v.get<long long>();
    };
    auto boolean = [&]() {
      if (!v.is_boolean()) throw ConfigError(ptr + ": expected true or false");
      return v.get<bool>();
    };
    if (key == "lr0") cfg.lr0 = number();
    else if (key == "beta1") cfg.beta1 = number();
    else if (key == "beta2") cfg.beta2 = number();
    else if (key == "adam_eps") cfg.adam_eps = number();
    else if (key == "decay_factor") cfg.decay_factor = number();
    else if (key == "decay_every") cfg.decay_every = static_cast<int>(integer());
    else if (key == "epochs") cfg.epochs = static_cast<int>(integer());
    else if (key == "batch_size") cfg.batch_size = static_cast<std::size_t>(std::max(0LL, integer()));
    else if (key == "crop") cfg.crop = static_cast<std::size_t>(std::max(0LL, integer()));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(integer());
    else if (key == "stage") cfg.stage = static_cast<int>(integer());
    else if (key == "stage2_lr_mult") cfg.stage2_lr_mult = number();
    else if (key == "stage2_epochs") cfg.stage2_epochs = static_cast<int>(integer());
    else if (key == "zero_bands") cfg.zero_bands = boolean();
    else if (key == "augment") cfg.augment = boolean();
    else if (key == "val_every") cfg.val_every = static_cast<int>(integer());
    else if (key == "checkpoint_every") cfg.checkpoint_every = static_cast<int>(integer());
    else if (key == "stop_after_epoch") cfg.stop_after_epoch = static_cast<int>(integer());
    else throw ConfigError(ptr + ": unknown key");
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError((where.empty() ? "/" : where) + ": " + e.what());
  }
  return cfg;
}

double lr_at(int epoch, const TrainCfg& cfg) {
  if (epoch < 0) throw DomainError("lr_at: epoch must be >= 0");
  return cfg.lr0 * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("mse: images differ in shape");
  if (a.empty()) throw ShapeError("mse: empty images");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Optimiser

template <typename T>
void Adam<T>::step(nn::ParamStore<T>& store, double lr) {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (const auto& [path, p] : store.params()) {
    if (!p->has_grad()) continue;
    auto& m = m_[path];
    auto& v = v_[path];
    if (m.empty()) {
      m.assign(p->value.numel(), 0.0);
      v.assign(p->value.numel(), 0.0);
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = p->grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      p->value.data[i] = static_cast<T>(static_cast<double>(p->value.data[i]) - update);
    }
  }
}

template <typename T>
void Adam<T>::to_arrays(std::map<std::string, nn::StoredArray>& out) const {
  for (const auto& [path, m] : m_) {
    out["adam.m." + path] = nn::StoredArray{{m.size()}, m, true};
    out["adam.v." + path] = nn::StoredArray{{m.size()}, v_.at(path), true};
  }
}

template <typename T>
void Adam<T>::from_arrays(const std::map<std::string, nn::StoredArray>& in, std::uint64_t steps) {
  m_.clear();
  v_.clear();
  for (const auto& [key, arr] : in) {
    if (key.rfind("adam.m.", 0) == 0) m_[key.substr(7)] = arr.values;
    else if (key.rfind("adam.v.", 0) == 0) v_[key.substr(7)] = arr.values;
  }
  for (const auto& [path, m] : m_) {
    if (!v_.count(path) || v_[path].size() != m.size()) throw DataInconsistency("optimizer state incomplete for " + path);
  }
  step_ = steps;
}

// ---------------------------------------------------------------------------
// Data helpers

Split leave_one_out(const TrainData& data, const std::string& held_out) {
  Split split;
  bool found = false;
  for (std::size_t o = 0; o < data.objects.size(); ++o) {
    const bool is_val = data.objects[o].id == held_out;
    found = found || is_val;
    for (std::size_t v = 0; v < data.objects[o].views.size(); ++v) {
      (is_val ? split.val : split.train).push_back({o, v});
    }
  }
  if (!found) throw ConfigError("leave-one-out: unknown object id '" + held_out + "'");
  return split;
}

Split interleaved(const TrainData& data, std::size_t period, std::size_t val_phase, std::size_t skip_phase) {
  if (period < 2) throw ConfigError("interleaved split: period must be >= 2");
  if (val_phase >= period) throw ConfigError("interleaved split: val_phase must be < period");
  Split split;
  for (std::size_t o = 0; o < data.objects.size(); ++o) {
    for (std::size_t v = 0; v < data.objects[o].views.size(); ++v) {
      const std::size_t phase = v % period;
      if (phase == val_phase) split.val.push_back({o, v});
      else if (phase != skip_phase) split.train.push_back({o, v});
    }
  }
  return split;
}

TrainData load_train_data(const std::filesystem::path& dataset_dir) {
  const auto manifest = phantom::load_manifest(dataset_dir);
  TrainData data;
  data.reference = manifest.reference;
  for (const auto& mo : manifest.objects) {
    ObjectViews ov;
    ov.id = mo.id;
    ov.gt_scale_mm = mo.gt_scale_mm;
    for (std::size_t k = 0; k < mo.angles_deg.size(); ++k) {
      const auto dir = dataset_dir / mo.id / phantom::view_dir_name(k);
      if (!std::filesystem::exists(dir)) throw DataInconsistency("manifest lists missing view " + dir.string());
      auto view = phantom::load_view(dir);
      if (std::abs(view.theta_deg - mo.angles_deg[k]) > 1e-9) {
        throw DataInconsistency(dir.string() + ": angle disagrees with manifest");
      }
      if (view.gt_thickness.rows() != mo.image_shape[0] || view.gt_thickness.cols() != mo.image_shape[1]) {
        throw DataInconsistency(dir.string() + ": image shape disagrees with manifest");
      }
      ov.views.push_back(std::move(view));
    }
    data.objects.push_back(std::move(ov));
  }
  return data;
}

Image normalized_target(const phantom::ViewRecord& view, double gt_scale_mm) {
  if (!(gt_scale_mm > 0.0)) throw DomainError("ground-truth scale must be positive");
  Image out = view.gt_thickness;
  for (double& v : out.data()) v /= gt_scale_mm;
  return out;
}

Image baseline_image(const phantom::ViewRecord& view, const phantom::ReferenceLevels& ref) {
  Image out = view.timemax;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double& v : out.data()) {
    v = ref.timemax - v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double& v : out.data()) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
  return out;
}

double clamped_psnr(const Image& prediction, const Image& target) {
  Image p = prediction;
  for (double& v : p.data()) v = std::clamp(v, 0.0, 1.0);
  const double e = mse(p, target);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / e);
}

namespace {

template <typename T>
Image to_image(const nn::Tensor<T>& t, std::size_t n) {
  Image img(t.shape.h, t.shape.w);
  const T* p = t.channel(n, 0);
  for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = static_cast<double>(p[i]);
  return img;
}

template <typename T>
nn::Tensor<T> to_tensor(const std::vector<Image>& images) {
  const std::size_t h = images.at(0).rows(), w = images.at(0).cols();
  nn::Tensor<T> t(nn::Shape4{images.size(), 1, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    std::transform(images[n].data().begin(), images[n].data().end(), t.channel(n, 0),
                   [](double v) { return static_cast<T>(v); });
  }
  return t;
}

constexpr std::uint64_t kShuffleStream = 0x73687566666c65ULL;
constexpr std::uint64_t kAugmentStream = 0x6175676d656e74ULL;

std::vector<ItemRef> shuffled(std::vector<ItemRef> items, std::uint64_t seed, int epoch) {
  std::mt19937_64 rng(derive_seed(seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
  return items;
}

template <typename T>
double train_batch(sarnet::Network<T>& net, Adam<T>& adam, const TrainData& data, std::span<const ItemRef> items,
                   const TrainCfg& cfg, int epoch, double lr) {
  const std::size_t views_per_item = cfg.stage == 2 ? 3 : 1;
  std::vector<std::vector<sarnet::ViewInput<T>>> inputs(views_per_item);
  std::vector<Image> targets;
  for (const auto& item : items) {
    const auto& obj = data.objects[item.object];
    const auto& cur = obj.views[item.view];
    const std::size_t rows = cur.timemax.rows(), cols = cur.timemax.cols();
    const std::size_t crop = std::min({cfg.crop, rows - rows % 16, cols - cols % 16});
    if (crop < 16) throw ShapeError("training views must be at least 16 x 16");
    const auto seed = derive_seed(cfg.seed, kAugmentStream ^ static_cast<std::uint64_t>(epoch), item.object, item.view);
    const auto aug = cfg.augment ? phantom::draw_augment(seed, rows, cols, crop) : phantom::identity_augment(rows, cols, crop);
    if (cfg.stage == 2) {
      const std::array<std::size_t, 3> idx{sarnet::neighbor_index(item.view, -1, obj.views.size()), item.view,
                                           sarnet::neighbor_index(item.view, 1, obj.views.size())};
      for (std::size_t k = 0; k < 3; ++k) {
        inputs[k].push_back(sarnet::make_input<T>(phantom::apply_augment(obj.views[idx[k]], aug), data.reference,
                                                  cfg.zero_bands));
      }
    } else {
      inputs[0].push_back(sarnet::make_input<T>(phantom::apply_augment(cur, aug), data.reference, cfg.zero_bands));
    }
    targets.push_back(normalized_target(phantom::apply_augment(cur, aug), obj.gt_scale_mm));
  }
  const auto target = nn::constant(to_tensor<T>(targets));
  Var<T> restored;
  if (cfg.stage == 1) {
    const auto batch = sarnet::stack_inputs<T>(inputs[0]);
    restored = sarnet::sarnet_forward(net, sarnet::stem(net, nn::constant(batch.timemax)), batch.bands, true).restored;
  } else {
    // BN stays on the stage-1 running statistics: the shared layers see two input distributions here (stem and
    // fused features), and batch statistics would leave inference normalising with a mixture of both.
    std::array<Var<T>, 3> features;
    std::array<sarnet::ViewInput<T>, 3> batches;
    for (std::size_t k = 0; k < 3; ++k) {
      batches[k] = sarnet::stack_inputs<T>(inputs[k]);
      features[k] = sarnet::sarnet_forward(net, sarnet::stem(net, nn::constant(batches[k].timemax)), batches[k].bands,
                                           false)
                        .features;
    }
    const auto fused = sarnet::multiview_fuse(net, features[0], features[1], features[2]);
    restored = sarnet::sarnet_forward(net, fused, batches[1].bands, false).restored;
  }
  const auto loss = nn::mse_loss(restored, target);
  nn::backward(loss);
  adam.step(net.store, lr);
  net.store.zero_grad();
  return static_cast<double>(loss->value.data[0]);
}

json log_record(int epoch, double lr, double train_loss, double val_psnr) {
  json rec;
  rec["epoch"] = epoch;
  rec["lr"] = lr;
  rec["train_loss"] = train_loss;
  if (std::isfinite(val_psnr)) rec["val_psnr"] = val_psnr;
  else if (std::isinf(val_psnr)) rec["val_psnr"] = "inf";
  else rec["val_psnr"] = nullptr;
  return rec;
}

struct RunState {
  int next_epoch = 0;
  int best_epoch = -1;
  double best_psnr = -std::numeric_limits<double>::infinity();
  std::vector<std::string> log;
};

std::string cfg_fingerprint(const TrainCfg& cfg) {
  TrainCfg c = cfg;
  c.stop_after_epoch = -1;
  return c.to_json();
}

template <typename T>
void save_state(const std::filesystem::path& file, const sarnet::Network<T>& net, const nn::ParamStore<T>& best,
                const Adam<T>& adam, const RunState& st, const TrainCfg& cfg) {
  std::map<std::string, nn::StoredArray> arrays;
  for (auto& [k, v] : nn::store_to_arrays(net.store, true)) arrays["net." + k] = std::move(v);
  for (auto& [k, v] : nn::store_to_arrays(best, true)) arrays["best." + k] = std::move(v);
  adam.to_arrays(arrays);
  json meta;
  meta["kind"] = "train-state";
  meta["next_epoch"] = st.next_epoch;
  meta["best_epoch"] = st.best_epoch;
  meta["best_val_psnr"] = std::isfinite(st.best_psnr) ? json(st.best_psnr) : json(nullptr);
  meta["adam_steps"] = adam.steps();
  meta["log"] = st.log;
  meta["train_cfg"] = json::parse(cfg_fingerprint(cfg));
  meta["network_cfg"] = json::parse(net.cfg.to_json());
  nn::save_container(file, arrays, meta.dump());
}

template <typename T>
RunState load_state(const std::filesystem::path& file, sarnet::Network<T>& net, nn::ParamStore<T>& best, Adam<T>& adam,
                    const TrainCfg& cfg) {
  std::string meta_text;
  const auto arrays = nn::load_container(file, &meta_text);
  RunState st;
  try {
    const auto meta = json::parse(meta_text);
    if (meta.at("kind") != "train-state") throw DataInconsistency(file.string() + " is not a training state");
    if (meta.at("train_cfg").dump() != json::parse(cfg_fingerprint(cfg)).dump())
      throw DataInconsistency(file.string() + ": training config differs from the interrupted run");
    if (meta.at("network_cfg").dump() != json::parse(net.cfg.to_json()).dump())
      throw DataInconsistency(file.string() + ": network config differs from the interrupted run");
    st.next_epoch = meta.at("next_epoch").get<int>();
    st.best_epoch = meta.at("best_epoch").get<int>();
    if (!meta.at("best_val_psnr").is_null()) st.best_psnr = meta.at("best_val_psnr").get<double>();
    st.log = meta.at("log").get<std::vector<std::string>>();
    std::map<std::string, nn::StoredArray> net_arrays, best_arrays;
    for (const auto& [k, v] : arrays) {
      if (k.rfind("net.", 0) == 0) net_arrays[k.substr(4)] = v;
      else if (k.rfind("best.", 0) == 0) best_arrays[k.substr(5)] = v;
    }
    nn::arrays_to_store(net_arrays, net.store);
    nn::arrays_to_store(best_arrays, best);
    adam.from_arrays(arrays, meta.at("adam_steps").get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw DataInconsistency(file.string() + ": malformed training state: " + e.what());
  }
  return st;
}

void write_log(const std::filesystem::path& file, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  io::write_text(file, text);
}

}  // namespace

template <typename T>
std::vector<Image> restore_items(sarnet::Network<T>& net, const TrainData& data, const std::vector<ItemRef>& items,
                                 int stage, bool zero_bands) {
  nn::NoGradGuard guard;
  std::vector<Image> out;
  out.reserve(items.size());
  if (stage == 1) {
    for (const auto& item : items) {
      const auto in = sarnet::make_input<T>(data.objects[item.object].views[item.view], data.reference, zero_bands);
      out.push_back(to_image(sarnet::restore_single(net, in), 0));
    }
    return out;
  }
  // Stage-1 features are shared by up to three targets; compute each once.
  std::map<std::pair<std::size_t, std::size_t>, Var<T>> features;
  std::map<std::pair<std::size_t, std::size_t>, sarnet::ViewInput<T>> inputs;
  auto input_of = [&](std::size_t o, std::size_t v) -> const sarnet::ViewInput<T>& {
    auto it = inputs.find({o, v});
    if (it == inputs.end())
      it = inputs.emplace(std::make_pair(o, v), sarnet::make_input<T>(data.objects[o].views[v], data.reference, zero_bands)).first;
    return it->second;
  };
  auto feature_of = [&](std::size_t o, std::size_t v) {
    auto it = features.find({o, v});
    if (it != features.end()) return it->second;
    const auto& in = input_of(o, v);
    auto f = sarnet::sarnet_forward(net, sarnet::stem(net, nn::constant(in.timemax)), in.bands, false).features;
    features.emplace(std::make_pair(o, v), f);
    return f;
  };
  for (const auto& item : items) {
    const std::size_t count = data.objects[item.object].views.size();
    const auto fused = sarnet::multiview_fuse(net, feature_of(item.object, sarnet::neighbor_index(item.view, -1, count)),
                                              feature_of(item.object, item.view),
                                              feature_of(item.object, sarnet::neighbor_index(item.view, 1, count)));
    out.push_back(to_image(
        sarnet::sarnet_forward(net, fused, input_of(item.object, item.view).bands, false).restored->value, 0));
  }
  return out;
}

template <typename T>
TrainResult train_stage(const TrainData& data, const Split& split, sarnet::Network<T>& net, const TrainCfg& cfg,
                        const std::filesystem::path& out_dir, bool resume) {
  cfg.validate();
  if (split.train.empty()) throw ConfigError("training split is empty");
  for (const auto& item : split.train) {
    if (item.object >= data.objects.size() || item.view >= data.objects[item.object].views.size())
      throw DataInconsistency("training split refers to a missing view");
    for (const auto& v : split.val) {
      if (v == item) throw DataInconsistency("a view appears in both training and validation splits");
    }
  }
  Adam<T> adam(cfg.beta1, cfg.beta2, cfg.adam_eps);
  // Separate parameter nodes holding the best weights so far.
  sarnet::Network<T> best_net(net.cfg);
  best_net.store.copy_from(net.store);
  auto& best = best_net.store;
  RunState st;
  const bool persist = !out_dir.empty();
  if (persist) std::filesystem::create_directories(out_dir);
  if (resume) {
    if (!persist) throw ConfigError("resume needs an output directory");
    if (!std::filesystem::exists(out_dir / "state.ckpt"))
      throw MissingPrerequisite("no training state to resume in " + out_dir.string());
    st = load_state(out_dir / "state.ckpt", net, best, adam, cfg);
  }

  TrainResult result;
  const int total = cfg.total_epochs();
  for (int epoch = st.next_epoch; epoch < total; ++epoch) {
    TrainCfg sched = cfg;
    sched.lr0 = cfg.base_lr();
    const double lr = lr_at(epoch, sched);
    const auto order = shuffled(split.train, cfg.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - b);
      const std::span<const ItemRef> batch(order.data() + b, n);
      loss_sum += train_batch(net, adam, data, batch, cfg, epoch, lr) * static_cast<double>(n);
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(train_loss)) throw NumericalError("training loss diverged at epoch " + std::to_string(epoch));

    double val_psnr = std::numeric_limits<double>::quiet_NaN();
    const bool validate_now = !split.val.empty() && ((epoch + 1) % cfg.val_every == 0 || epoch + 1 == total);
    if (validate_now) {
      const auto restored = restore_items(net, data, split.val, cfg.stage, cfg.zero_bands);
      double acc = 0.0;
      for (std::size_t i = 0; i < restored.size(); ++i) {
        const auto& item = split.val[i];
        const auto& obj = data.objects[item.object];
        acc += clamped_psnr(restored[i], normalized_target(obj.views[item.view], obj.gt_scale_mm));
      }
      val_psnr = acc / static_cast<double>(restored.size());
    }
    const bool improved = split.val.empty() ? true : (validate_now && val_psnr > st.best_psnr);
    if (improved) {
      st.best_psnr = split.val.empty() ? st.best_psnr : val_psnr;
      st.best_epoch = epoch;
      best.copy_from(net.store);
      if (persist) {
        sarnet::Network<T> snapshot(net.cfg);
        snapshot.store.copy_from(best);
        sarnet::save_weights(out_dir / "best.ckpt", snapshot);
      }
    }
    st.log.push_back(log_record(epoch, lr, train_loss, val_psnr).dump());
    st.next_epoch = epoch + 1;
    ++result.epochs_run;
    result.last_epoch = epoch;
    const bool stop = cfg.stop_after_epoch >= 0 && epoch >= cfg.stop_after_epoch && epoch + 1 < total;
    if (persist) {
      write_log(out_dir / "log.ndjson", st.log);
      if (stop || epoch + 1 == total || (epoch + 1) % cfg.checkpoint_every == 0)
        save_state(out_dir / "state.ckpt", net, best, adam, st, cfg);
    }
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }
  if (!result.stopped_early) net.store.copy_from(best);
  result.best_epoch = st.best_epoch;
  result.best_val_psnr = st.best_psnr;
  result.log_lines = st.log;
  return result;
}

template class Adam<float>;
template class Adam<double>;
template TrainResult train_stage<float>(const TrainData&, const Split&, sarnet::Network<float>&, const TrainCfg&,
                                        const std::filesystem::path&, bool);
template TrainResult train_stage<double>(const TrainData&, const Split&, sarnet::Network<double>&, const TrainCfg&,
                                         const std::filesystem::path&, bool);
template std::vector<Image> restore_items<float>(sarnet::Network<float>&, const TrainData&, const std::vector<ItemRef>&,
                                                 int, bool);
template std::vector<Image> restore_items<double>(sarnet::Network<double>&, const TrainData&,
                                                  const std::vector<ItemRef>&, int, bool);

}  // namespace thz::train
