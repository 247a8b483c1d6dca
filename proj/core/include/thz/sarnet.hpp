#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "thz/nn/ops.hpp"
#include "thz/nn/params.hpp"
#include "thz/phantom.hpp"

namespace thz::sarnet {

using nn::Shape4;
using nn::Tensor;
using nn::Var;

enum class DownMode { kStridedConv, kAvgPool };

struct NetworkCfg {
  std::array<std::size_t, 5> widths{32, 64, 128, 256, 512};
  std::size_t rank_k = 16;          ///< subspace rank K
  std::size_t safm_channels = 16;   ///< C1 of the SAFM band conv-block
  std::size_t max_tokens = 4096;    ///< largest H*W at which attention may run
  /// Band indices (into the 12-band set) fed to scales 2..5; each index once.
  std::array<std::array<std::size_t, 3>, 4> band_groups{{{0, 1, 2}, {3, 4, 5}, {6, 7, 8}, {9, 10, 11}}};
  DownMode down = DownMode::kStridedConv;
  std::size_t cam_reduction = 8;    ///< CAM hidden width = max(cam_min_hidden, C / reduction)
  std::size_t cam_min_hidden = 4;

  static NetworkCfg full();
  static NetworkCfg desk();
  void validate() const;
  [[nodiscard]] std::string to_json() const;
  /// Unknown keys and invalid values raise ConfigError naming `where`/key.
  static NetworkCfg from_json(std::string_view text, const std::string& where = "");
  bool operator==(const NetworkCfg&) const = default;
};

inline constexpr std::size_t kBandCount = 12;
inline constexpr std::size_t kBandChannels = 2 * kBandCount;  ///< 12 amplitude then 12 phase

/// Network weights: a parameter store laid out for one NetworkCfg.
template <typename T>
struct Network {
  NetworkCfg cfg;
  nn::ParamStore<T> store;

  explicit Network(const NetworkCfg& config);
  void initialize(std::uint64_t seed) { store.initialize(seed); }
};

/// Registers a conv-block (two conv -> BN -> ReLU stages) under `prefix`.
template <typename T>
void add_conv_block(nn::ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                    std::size_t kernel);
/// Registers a CAM over `groups` inputs of `channels` each.
template <typename T>
void add_cam(nn::ParamStore<T>& store, const std::string& prefix, std::size_t channels, std::size_t groups,
             const NetworkCfg& cfg);
template <typename T>
void add_safm(nn::ParamStore<T>& store, const std::string& prefix, std::size_t out_channels, const NetworkCfg& cfg);

template <typename T>
Var<T> conv_block(nn::ParamStore<T>& store, const std::string& prefix, const Var<T>& x, bool training);

/// Basis V as a (N, K, H, W) tensor; per sample the N_tokens x K matrix.
template <typename T>
Var<T> safm_basis(nn::ParamStore<T>& store, const std::string& prefix, const Var<T>& xa, const Var<T>& xp,
                  bool training);

/// Y = f_s(beta * [P xA, P xP]) + x_f. `scale` only labels size errors.
template <typename T>
Var<T> safm_forward(nn::ParamStore<T>& store, const std::string& prefix, const NetworkCfg& cfg, const Var<T>& xa,
                    const Var<T>& xp, const Var<T>& x_f, bool training, int scale = 0);

/// Sum over groups of w_g * x_g with w = sigmoid(conv(relu(conv(GAP(concat))))).
template <typename T>
Var<T> cam_forward(nn::ParamStore<T>& store, const std::string& prefix, std::span<const Var<T>> groups);

template <typename T>
struct SarnetOutput {
  Var<T> restored;  ///< (N, 1, H, W)
  Var<T> features;  ///< X_SAF, (N, widths[0], H, W)
};

/// Stage-1 input feature: 3x3 conv of the Time-max image (N, 1, H, W).
template <typename T>
Var<T> stem(Network<T>& net, const Var<T>& timemax);

/// `bands` is (N, 24, H, W): 12 amplitude bands then 12 phase bands, low to
/// high. Bands are data, not learnable, so they enter as a plain tensor.
template <typename T>
SarnetOutput<T> sarnet_forward(Network<T>& net, const Var<T>& x_in, const Tensor<T>& bands, bool training);

template <typename T>
Var<T> multiview_fuse(Network<T>& net, const Var<T>& f_prev, const Var<T>& f_cur, const Var<T>& f_next);

/// Normalised network inputs of one view.
template <typename T>
struct ViewInput {
  Tensor<T> timemax;  ///< (1, 1, H, W)
  Tensor<T> bands;    ///< (1, 24, H, W)
};

/// Time-max / air level, amplitude / air level, wrap(phase - air phase) / pi.
template <typename T>
ViewInput<T> make_input(const phantom::ViewRecord& view, const phantom::ReferenceLevels& ref, bool zero_bands = false);

/// Stacks single-sample inputs along the batch axis.
template <typename T>
ViewInput<T> stack_inputs(std::span<const ViewInput<T>> items);

/// Neighbour index with clamping at the sequence ends.
std::size_t neighbor_index(std::size_t t, int offset, std::size_t count);

/// Single-view restoration of a batch (inference mode).
template <typename T>
Tensor<T> restore_single(Network<T>& net, const ViewInput<T>& input);

/// Two-stage restoration of view `t` of an ordered view sequence (inference mode).
template <typename T>
Tensor<T> restore_multiview(Network<T>& net, std::span<const ViewInput<T>> views, std::size_t t);

/// Restores every view of a sequence in multi-view mode, computing each stage-1
/// feature once.
template <typename T>
std::vector<Tensor<T>> restore_sequence_multiview(Network<T>& net, std::span<const ViewInput<T>> views);

/// Weights checkpoint (f32 payload) with the NetworkCfg in the index metadata.
template <typename T>
void save_weights(const std::filesystem::path& file, const Network<T>& net, bool f64 = false);
NetworkCfg load_network_cfg(const std::filesystem::path& file);
template <typename T>
void load_weights(const std::filesystem::path& file, Network<T>& net);

}  // namespace thz::sarnet
