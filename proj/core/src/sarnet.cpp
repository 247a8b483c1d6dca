#include "thz/sarnet.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace thz::sarnet {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

NetworkCfg NetworkCfg::full() { return NetworkCfg{}; }

NetworkCfg NetworkCfg::desk() {
  NetworkCfg cfg;
  cfg.widths = {16, 32, 64, 128, 128};
  return cfg;
}

void NetworkCfg::validate() const {
  for (std::size_t w : widths) {
    if (w == 0) throw ConfigError("network widths must be >= 1");
  }
  if (rank_k == 0) throw ConfigError("network rank_k must be >= 1");
  if (safm_channels == 0) throw ConfigError("network safm_channels must be >= 1");
  if (max_tokens == 0) throw ConfigError("network max_tokens must be >= 1");
  if (cam_reduction == 0) throw ConfigError("network cam_reduction must be >= 1");
  if (cam_min_hidden == 0) throw ConfigError("network cam_min_hidden must be >= 1");
  std::array<int, kBandCount> seen{};
  for (const auto& group : band_groups) {
    for (std::size_t b : group) {
      if (b >= kBandCount) throw ConfigError("network band_groups: index " + std::to_string(b) + " out of range");
      ++seen[b];
    }
  }
  for (std::size_t b = 0; b < kBandCount; ++b) {
    if (seen[b] != 1) throw ConfigError("network band_groups: band " + std::to_string(b) + " must appear exactly once");
  }
}

std::string NetworkCfg::to_json() const {
  json j;
  j["widths"] = widths;
  j["rank_k"] = rank_k;
  j["safm_channels"] = safm_channels;
  j["max_tokens"] = max_tokens;
  j["band_groups"] = band_groups;
  j["downsample"] = down == DownMode::kStridedConv ? "strided_conv" : "avg_pool";
  j["upsample"] = "bilinear";
  j["cam_reduction"] = cam_reduction;
  j["cam_min_hidden"] = cam_min_hidden;
  return j.dump();
}

NetworkCfg NetworkCfg::from_json(std::string_view text, const std::string& where) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError((where.empty() ? "/" : where) + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError((where.empty() ? "/" : where) + ": network config must be an object");
  NetworkCfg cfg = desk();
  if (j.contains("preset")) {
    const auto& p = j["preset"];
    if (p == "full") cfg = full();
    else if (p != "desk") throw ConfigError(where + "/preset: expected \"desk\" or \"full\"");
  }
  auto count = [&](const json& v, const std::string& key) {
    if (!v.is_number_integer() || v.get<long long>() < 1) throw ConfigError(where + "/" + key + ": expected an integer >= 1");
    return v.get<std::size_t>();
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "preset") continue;
    if (key == "widths") {
      if (!v.is_array() || v.size() != 5) throw ConfigError(where + "/widths: expected 5 integers");
      for (std::size_t i = 0; i < 5; ++i) cfg.widths[i] = count(v[i], "widths/" + std::to_string(i));
    } else if (key == "rank_k") {
      cfg.rank_k = count(v, key);
    } else if (key == "safm_channels") {
      cfg.safm_channels = count(v, key);
    } else if (key == "max_tokens") {
      cfg.max_tokens = count(v, key);
    } else if (key == "cam_reduction") {
      cfg.cam_reduction = count(v, key);
    } else if (key == "cam_min_hidden") {
      cfg.cam_min_hidden = count(v, key);
    } else if (key == "band_groups") {
      if (!v.is_array() || v.size() != 4) throw ConfigError(where + "/band_groups: expected 4 groups of 3");
      for (std::size_t g = 0; g < 4; ++g) {
        if (!v[g].is_array() || v[g].size() != 3)
          throw ConfigError(where + "/band_groups/" + std::to_string(g) + ": expected 3 band indices");
        for (std::size_t i = 0; i < 3; ++i) {
          if (!v[g][i].is_number_integer() || v[g][i].get<long long>() < 0)
            throw ConfigError(where + "/band_groups/" + std::to_string(g) + "/" + std::to_string(i) +
                              ": expected a band index");
          cfg.band_groups[g][i] = v[g][i].get<std::size_t>();
        }
      }
    } else if (key == "downsample") {
      if (v == "strided_conv") cfg.down = DownMode::kStridedConv;
      else if (v == "avg_pool") cfg.down = DownMode::kAvgPool;
      else throw ConfigError(where + "/downsample: expected \"strided_conv\" or \"avg_pool\"");
    } else if (key == "upsample") {
      if (v != "bilinear") throw ConfigError(where + "/upsample: only \"bilinear\" is supported");
    } else {
      throw ConfigError(where + "/" + key + ": unknown key");
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError((where.empty() ? "/" : where) + ": " + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Parameter layout

template <typename T>
void add_conv_block(nn::ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                    std::size_t kernel) {
  if (kernel % 2 == 0) throw ConfigError("conv-block kernel must be odd");
  for (int stage = 1; stage <= 2; ++stage) {
    const std::string s = std::to_string(stage);
    const std::size_t cin = stage == 1 ? in : out;
    store.add_param(prefix + ".conv" + s + ".weight", Shape4{out, cin, kernel, kernel}, nn::Init::kHe);
    store.add_param(prefix + ".bn" + s + ".gamma", Shape4{1, out, 1, 1}, nn::Init::kOne);
    store.add_param(prefix + ".bn" + s + ".beta", Shape4{1, out, 1, 1}, nn::Init::kZero);
    store.add_buffer(prefix + ".bn" + s + ".running_mean", Shape4{1, out, 1, 1}, T(0));
    store.add_buffer(prefix + ".bn" + s + ".running_var", Shape4{1, out, 1, 1}, T(1));
  }
}

template <typename T>
void add_cam(nn::ParamStore<T>& store, const std::string& prefix, std::size_t channels, std::size_t groups,
             const NetworkCfg& cfg) {
  const std::size_t total = channels * groups;
  const std::size_t hidden = std::max(cfg.cam_min_hidden, total / cfg.cam_reduction);
  store.add_param(prefix + ".fc1.weight", Shape4{hidden, total, 1, 1}, nn::Init::kHe);
  store.add_param(prefix + ".fc1.bias", Shape4{1, hidden, 1, 1}, nn::Init::kZero);
  store.add_param(prefix + ".fc2.weight", Shape4{total, hidden, 1, 1}, nn::Init::kHe);
  store.add_param(prefix + ".fc2.bias", Shape4{1, total, 1, 1}, nn::Init::kZero);
}

template <typename T>
void add_safm(nn::ParamStore<T>& store, const std::string& prefix, std::size_t out_channels, const NetworkCfg& cfg) {
  add_conv_block(store, prefix + ".fc", 3, cfg.safm_channels, 1);
  add_conv_block(store, prefix + ".ff", 2 * cfg.safm_channels, cfg.rank_k, 1);
  store.add_param(prefix + ".fs.weight", Shape4{out_channels, 6, 1, 1}, nn::Init::kHe);
  store.add_param(prefix + ".fs.bias", Shape4{1, out_channels, 1, 1}, nn::Init::kZero);
}

namespace {

template <typename T>
void add_conv(nn::ParamStore<T>& store, const std::string& prefix, std::size_t out, std::size_t in, std::size_t k) {
  store.add_param(prefix + ".weight", Shape4{out, in, k, k}, nn::Init::kHe);
  store.add_param(prefix + ".bias", Shape4{1, out, 1, 1}, nn::Init::kZero);
}

template <typename T>
Var<T> conv(nn::ParamStore<T>& store, const std::string& prefix, const Var<T>& x, std::size_t stride = 1) {
  const auto& w = store.param(prefix + ".weight");
  return nn::conv2d(x, w, store.param(prefix + ".bias"), stride, w->value.shape.h / 2);
}

std::string scale_name(const char* part, int s) { return std::string(part) + std::to_string(s); }

// Non-differentiable 2x2 mean pooling of a data tensor.
template <typename T>
Tensor<T> pool2(const Tensor<T>& x) {
  const Shape4 s = x.shape;
  if (s.h % 2 || s.w % 2) throw ShapeError("band pooling needs even spatial size, got " + s.str());
  Tensor<T> out(Shape4{s.n, s.c, s.h / 2, s.w / 2});
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* p = x.data.data() + nc * s.plane();
    T* o = out.data.data() + nc * out.shape.plane();
    for (std::size_t i = 0; i < s.h / 2; ++i) {
      for (std::size_t j = 0; j < s.w / 2; ++j) {
        o[i * (s.w / 2) + j] = T(0.25) * (p[2 * i * s.w + 2 * j] + p[2 * i * s.w + 2 * j + 1] +
                                         p[(2 * i + 1) * s.w + 2 * j] + p[(2 * i + 1) * s.w + 2 * j + 1]);
      }
    }
  }
  return out;
}

template <typename T>
Var<T> gather_channels(const Tensor<T>& x, const std::array<std::size_t, 3>& idx, std::size_t offset) {
  const Shape4 s = x.shape;
  Tensor<T> out(Shape4{s.n, 3, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < 3; ++i) {
      const T* src = x.channel(n, offset + idx[i]);
      std::copy(src, src + s.plane(), out.channel(n, i));
    }
  }
  return nn::constant(std::move(out));
}

}  // namespace

template <typename T>
Network<T>::Network(const NetworkCfg& config) : cfg(config) {
  cfg.validate();
  const auto& w = cfg.widths;
  add_conv(store, "stem.conv", w[0], 1, 3);
  add_conv_block(store, "enc1.block", w[0], w[0], 3);
  for (int s = 2; s <= 5; ++s) {
    const std::size_t prev = w[static_cast<std::size_t>(s - 2)];
    if (cfg.down == DownMode::kStridedConv) add_conv(store, scale_name("enc", s - 1) + ".down", prev, prev, 3);
    add_safm(store, scale_name("enc", s) + ".safm", prev, cfg);
    add_conv_block(store, scale_name("enc", s) + ".block", prev, w[static_cast<std::size_t>(s - 1)], 3);
  }
  for (int s = 4; s >= 1; --s) {
    const std::size_t c = w[static_cast<std::size_t>(s - 1)];
    add_conv(store, scale_name("dec", s) + ".up", c, w[static_cast<std::size_t>(s)], 1);
    add_cam(store, scale_name("dec", s) + ".cam", c, 2, cfg);
    add_conv_block(store, scale_name("dec", s) + ".block", c, c, 3);
  }
  add_conv(store, "head", 1, w[0], 1);
  add_cam(store, "mv.cam", w[0], 3, cfg);
  add_conv(store, "mv.conv", w[0], w[0], 3);
}

// ---------------------------------------------------------------------------
// Blocks

template <typename T>
Var<T> conv_block(nn::ParamStore<T>& store, const std::string& prefix, const Var<T>& x, bool training) {
  Var<T> h = x;
  for (int stage = 1; stage <= 2; ++stage) {
    const std::string s = std::to_string(stage);
    const auto& w = store.param(prefix + ".conv" + s + ".weight");
    if (w->value.shape.c != h->value.shape.c) {
      throw ShapeError(prefix + ": expected " + std::to_string(w->value.shape.c) + " input channels, got " +
                       std::to_string(h->value.shape.c));
    }
    h = nn::conv2d(h, w, Var<T>{}, 1, w->value.shape.h / 2);
    nn::BatchNormState<T> bn{&store.buffer(prefix + ".bn" + s + ".running_mean"),
                             &store.buffer(prefix + ".bn" + s + ".running_var")};
    h = nn::batch_norm(h, store.param(prefix + ".bn" + s + ".gamma"), store.param(prefix + ".bn" + s + ".beta"), bn,
                       training);
    h = nn::relu(h);
  }
  return h;
}

template <typename T>
Var<T> safm_basis(nn::ParamStore<T>& store, const std::string& prefix, const Var<T>& xa, const Var<T>& xp,
                  bool training) {
  const Shape4 a = xa->value.shape, p = xp->value.shape;
  if (a.n != p.n || a.h != p.h || a.w != p.w)
    throw ShapeError(prefix + ": amplitude " + a.str() + " and phase " + p.str() + " stacks disagree");
  const auto fa = conv_block(store, prefix + ".fc", xa, training);
  const auto fp = conv_block(store, prefix + ".fc", xp, training);
  const std::array<Var<T>, 2> parts{fa, fp};
  return conv_block(store, prefix + ".ff", nn::concat_channels<T>(parts), training);
}

template <typename T>
Var<T> safm_forward(nn::ParamStore<T>& store, const std::string& prefix, const NetworkCfg& cfg, const Var<T>& xa,
                    const Var<T>& xp, const Var<T>& x_f, bool training, int scale) {
  const Shape4 a = xa->value.shape, f = x_f->value.shape;
  if (a.h != f.h || a.w != f.w || a.n != f.n)
    throw ShapeError(prefix + ": band stack " + a.str() + " and feature " + f.str() + " disagree");
  if (a.plane() > cfg.max_tokens) {
    throw ShapeError("SAFM at scale " + std::to_string(scale) + ": " + std::to_string(a.plane()) +
                     " tokens exceed max_tokens " + std::to_string(cfg.max_tokens));
  }
  const auto v = safm_basis(store, prefix, xa, xp, training);
  const std::array<Var<T>, 2> projected{nn::orth_project(v, xa), nn::orth_project(v, xp)};
  const auto s = nn::concat_channels<T>(projected);
  const auto o = nn::attention_apply(v, s);
  const auto& fs = store.param(prefix + ".fs.weight");
  if (fs->value.shape.n != f.c)
    throw ShapeError(prefix + ": f_s produces " + std::to_string(fs->value.shape.n) + " channels, x_f has " +
                     std::to_string(f.c));
  return nn::add(nn::conv2d(o, fs, store.param(prefix + ".fs.bias"), 1, 0), x_f);
}

template <typename T>
Var<T> cam_forward(nn::ParamStore<T>& store, const std::string& prefix, std::span<const Var<T>> groups) {
  if (groups.empty()) throw ShapeError(prefix + ": CAM needs at least one input");
  const Shape4 s0 = groups[0]->value.shape;
  for (const auto& g : groups) {
    if (!(g->value.shape == s0))
      throw ShapeError(prefix + ": CAM inputs disagree, " + g->value.shape.str() + " vs " + s0.str());
  }
  const auto cat = nn::concat_channels<T>(groups);
  const auto pooled = nn::global_avg_pool(cat);
  const auto hidden = nn::relu(conv(store, prefix + ".fc1", pooled));
  const auto w = nn::sigmoid(conv(store, prefix + ".fc2", hidden));
  Var<T> out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto term = nn::channel_scale(groups[g], nn::slice_channels(w, g * s0.c, s0.c));
    out = out ? nn::add(out, term) : term;
  }
  return out;
}

template <typename T>
Var<T> stem(Network<T>& net, const Var<T>& timemax) {
  if (timemax->value.shape.c != 1) throw ShapeError("stem: Time-max input must have one channel");
  return conv(net.store, "stem.conv", timemax);
}

template <typename T>
SarnetOutput<T> sarnet_forward(Network<T>& net, const Var<T>& x_in, const Tensor<T>& bands, bool training) {
  const auto& cfg = net.cfg;
  const Shape4 s = x_in->value.shape;
  if (s.c != cfg.widths[0])
    throw ShapeError("sarnet: input has " + std::to_string(s.c) + " channels, expected " + std::to_string(cfg.widths[0]));
  if (s.h % 16 != 0 || s.w % 16 != 0 || s.h == 0 || s.w == 0)
    throw ShapeError("sarnet: spatial size " + s.str() + " must be a positive multiple of 16");
  if (!(bands.shape == Shape4{s.n, kBandChannels, s.h, s.w}))
    throw ConfigError("sarnet: band tensor " + bands.shape.str() + " does not match input " + s.str() +
                      " with 24 band channels");

  auto& store = net.store;
  std::array<Var<T>, 5> skips;
  skips[0] = conv_block(store, "enc1.block", x_in, training);
  Tensor<T> pooled = bands;
  for (int sc = 2; sc <= 5; ++sc) {
    const auto& prev = skips[static_cast<std::size_t>(sc - 2)];
    const Var<T> x_f = cfg.down == DownMode::kStridedConv ? conv(store, scale_name("enc", sc - 1) + ".down", prev, 2)
                                                          : nn::avg_pool2(prev);
    pooled = pool2(pooled);
    const auto& group = cfg.band_groups[static_cast<std::size_t>(sc - 2)];
    const auto xa = gather_channels(pooled, group, 0);
    const auto xp = gather_channels(pooled, group, kBandCount);
    const auto y = safm_forward(store, scale_name("enc", sc) + ".safm", cfg, xa, xp, x_f, training, sc);
    skips[static_cast<std::size_t>(sc - 1)] = conv_block(store, scale_name("enc", sc) + ".block", y, training);
  }
  Var<T> d = skips[4];
  for (int sc = 4; sc >= 1; --sc) {
    const auto up = conv(store, scale_name("dec", sc) + ".up", nn::upsample_bilinear2(d));
    const std::array<Var<T>, 2> parts{up, skips[static_cast<std::size_t>(sc - 1)]};
    const auto fused = cam_forward<T>(store, scale_name("dec", sc) + ".cam", parts);
    d = conv_block(store, scale_name("dec", sc) + ".block", fused, training);
  }
  return {conv(store, "head", d), d};
}

template <typename T>
Var<T> multiview_fuse(Network<T>& net, const Var<T>& f_prev, const Var<T>& f_cur, const Var<T>& f_next) {
  const std::array<Var<T>, 3> parts{f_prev, f_cur, f_next};
  return conv(net.store, "mv.conv", cam_forward<T>(net.store, "mv.cam", parts));
}

// ---------------------------------------------------------------------------
// Inputs and inference

template <typename T>
ViewInput<T> make_input(const phantom::ViewRecord& view, const phantom::ReferenceLevels& ref, bool zero_bands) {
  const std::size_t h = view.timemax.rows(), w = view.timemax.cols();
  if (view.cube.bands.size() != kBandCount || view.cube.amplitude.size() != kBandCount ||
      view.cube.phase.size() != kBandCount)
    throw ConfigError("network input needs exactly 12 spectral bands, view has " +
                      std::to_string(view.cube.bands.size()));
  if (ref.amplitude.size() != kBandCount || ref.phase.size() != kBandCount)
    throw ConfigError("reference levels must cover the 12 bands");
  if (!(ref.timemax > 0.0)) throw DomainError("reference Time-max must be positive");
  ViewInput<T> in{Tensor<T>(Shape4{1, 1, h, w}), Tensor<T>(Shape4{1, kBandChannels, h, w})};
  for (std::size_t i = 0; i < h * w; ++i) in.timemax.data[i] = static_cast<T>(view.timemax.data()[i] / ref.timemax);
  if (zero_bands) return in;
  for (std::size_t b = 0; b < kBandCount; ++b) {
    if (!(ref.amplitude[b] > 0.0)) throw DomainError("reference amplitude must be positive in every band");
    T* amp = in.bands.channel(0, b);
    T* ph = in.bands.channel(0, kBandCount + b);
    const auto& a = view.cube.amplitude[b].data();
    const auto& p = view.cube.phase[b].data();
    for (std::size_t i = 0; i < h * w; ++i) {
      amp[i] = static_cast<T>(a[i] / ref.amplitude[b]);
      ph[i] = static_cast<T>(wrap_phase(p[i] - ref.phase[b]) / kPi);
    }
  }
  return in;
}

template <typename T>
ViewInput<T> stack_inputs(std::span<const ViewInput<T>> items) {
  if (items.empty()) throw ShapeError("stack_inputs: empty batch");
  const Shape4 ts = items[0].timemax.shape, bs = items[0].bands.shape;
  ViewInput<T> out{Tensor<T>(Shape4{items.size(), ts.c, ts.h, ts.w}),
                   Tensor<T>(Shape4{items.size(), bs.c, bs.h, bs.w})};
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!(items[i].timemax.shape == ts) || !(items[i].bands.shape == bs))
      throw ShapeError("stack_inputs: inputs differ in shape");
    std::copy(items[i].timemax.data.begin(), items[i].timemax.data.end(), out.timemax.sample(i));
    std::copy(items[i].bands.data.begin(), items[i].bands.data.end(), out.bands.sample(i));
  }
  return out;
}

std::size_t neighbor_index(std::size_t t, int offset, std::size_t count) {
  if (count == 0) throw DomainError("neighbor_index: empty view sequence");
  const long idx = static_cast<long>(t) + offset;
  return static_cast<std::size_t>(std::clamp(idx, 0L, static_cast<long>(count) - 1));
}

template <typename T>
Tensor<T> restore_single(Network<T>& net, const ViewInput<T>& input) {
  nn::NoGradGuard guard;
  const auto x = stem(net, nn::constant(input.timemax));
  return sarnet_forward(net, x, input.bands, false).restored->value;
}

namespace {
template <typename T>
Var<T> stage1_features(Network<T>& net, const ViewInput<T>& v) {
  return sarnet_forward(net, stem(net, nn::constant(v.timemax)), v.bands, false).features;
}
}  // namespace

template <typename T>
Tensor<T> restore_multiview(Network<T>& net, std::span<const ViewInput<T>> views, std::size_t t) {
  if (views.empty()) throw DomainError("restore_multiview: no views");
  if (t >= views.size()) throw RangeError("restore_multiview: view index out of range");
  nn::NoGradGuard guard;
  const auto fp = stage1_features(net, views[neighbor_index(t, -1, views.size())]);
  const auto fc = stage1_features(net, views[t]);
  const auto fn = stage1_features(net, views[neighbor_index(t, 1, views.size())]);
  return sarnet_forward(net, multiview_fuse(net, fp, fc, fn), views[t].bands, false).restored->value;
}

template <typename T>
std::vector<Tensor<T>> restore_sequence_multiview(Network<T>& net, std::span<const ViewInput<T>> views) {
  if (views.empty()) throw DomainError("restore_sequence_multiview: no views");
  nn::NoGradGuard guard;
  std::vector<Var<T>> features;
  features.reserve(views.size());
  for (const auto& v : views) features.push_back(stage1_features(net, v));
  std::vector<Tensor<T>> out;
  for (std::size_t t = 0; t < views.size(); ++t) {
    const auto fused = multiview_fuse(net, features[neighbor_index(t, -1, views.size())], features[t],
                                      features[neighbor_index(t, 1, views.size())]);
    out.push_back(sarnet_forward(net, fused, views[t].bands, false).restored->value);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

template <typename T>
void save_weights(const std::filesystem::path& file, const Network<T>& net, bool f64) {
  json meta;
  meta["kind"] = "sarnet-weights";
  meta["network_cfg"] = json::parse(net.cfg.to_json());
  nn::save_container(file, nn::store_to_arrays(net.store, f64), meta.dump());
}

NetworkCfg load_network_cfg(const std::filesystem::path& file) {
  std::string meta;
  nn::load_container(file, &meta);
  try {
    const auto j = json::parse(meta);
    return NetworkCfg::from_json(j.at("network_cfg").dump(), "network_cfg");
  } catch (const json::exception& e) {
    throw DataInconsistency(file.string() + ": checkpoint lacks a network config: " + e.what());
  } catch (const ConfigError& e) {
    throw DataInconsistency(file.string() + ": " + e.what());
  }
}

template <typename T>
void load_weights(const std::filesystem::path& file, Network<T>& net) {
  std::string meta;
  const auto arrays = nn::load_container(file, &meta);
  NetworkCfg stored;
  try {
    stored = NetworkCfg::from_json(json::parse(meta).at("network_cfg").dump(), "network_cfg");
  } catch (const std::exception& e) {
    throw DataInconsistency(file.string() + ": checkpoint lacks a valid network config: " + e.what());
  }
  if (!(stored == net.cfg)) throw DataInconsistency(file.string() + ": network config differs from the requested one");
  nn::arrays_to_store(arrays, net.store);
}

#define THZ_SARNET_INSTANTIATE(T)                                                                                  \
  template struct Network<T>;                                                                                      \
  template void add_conv_block<T>(nn::ParamStore<T>&, const std::string&, std::size_t, std::size_t, std::size_t); \
  template void add_cam<T>(nn::ParamStore<T>&, const std::string&, std::size_t, std::size_t, const NetworkCfg&);   \
  template void add_safm<T>(nn::ParamStore<T>&, const std::string&, std::size_t, const NetworkCfg&);               \
  template Var<T> conv_block<T>(nn::ParamStore<T>&, const std::string&, const Var<T>&, bool);                      \
  template Var<T> safm_basis<T>(nn::ParamStore<T>&, const std::string&, const Var<T>&, const Var<T>&, bool);       \
  template Var<T> safm_forward<T>(nn::ParamStore<T>&, const std::string&, const NetworkCfg&, const Var<T>&,        \
                                  const Var<T>&, const Var<T>&, bool, int);                                        \
  template Var<T> cam_forward<T>(nn::ParamStore<T>&, const std::string&, std::span<const Var<T>>);                 \
  template Var<T> stem<T>(Network<T>&, const Var<T>&);                                                             \
  template SarnetOutput<T> sarnet_forward<T>(Network<T>&, const Var<T>&, const Tensor<T>&, bool);                  \
  template Var<T> multiview_fuse<T>(Network<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                     \
  template ViewInput<T> make_input<T>(const phantom::ViewRecord&, const phantom::ReferenceLevels&, bool);          \
  template ViewInput<T> stack_inputs<T>(std::span<const ViewInput<T>>);                                            \
  template Tensor<T> restore_single<T>(Network<T>&, const ViewInput<T>&);                                          \
  template Tensor<T> restore_multiview<T>(Network<T>&, std::span<const ViewInput<T>>, std::size_t);                \
  template std::vector<Tensor<T>> restore_sequence_multiview<T>(Network<T>&, std::span<const ViewInput<T>>);       \
  template void save_weights<T>(const std::filesystem::path&, const Network<T>&, bool);                            \
  template void load_weights<T>(const std::filesystem::path&, Network<T>&);

THZ_SARNET_INSTANTIATE(float)
THZ_SARNET_INSTANTIATE(double)

#undef THZ_SARNET_INSTANTIATE

}  // namespace thz::sarnet
