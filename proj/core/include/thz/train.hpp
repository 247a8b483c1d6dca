#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "thz/phantom.hpp"
#include "thz/sarnet.hpp"

namespace thz::train {

struct TrainCfg {
  double lr0 = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double decay_factor = 0.1;
  int decay_every = 300;
  int epochs = 1000;
  std::size_t batch_size = 4;
  std::size_t crop = 128;
  std::uint64_t seed = 0;
  int stage = 1;
  double stage2_lr_mult = 0.1;
  int stage2_epochs = 200;
  bool zero_bands = false;  ///< feed all-zero band inputs (ablation)
  bool augment = true;      ///< random flips, quarter turns and crop position
  int val_every = 1;
  int checkpoint_every = 10;
  int stop_after_epoch = -1;  ///< stop (with a resumable state) after this epoch

  void validate() const;
  [[nodiscard]] std::string to_json() const;
  static TrainCfg from_json(std::string_view text, const std::string& where = "");
  [[nodiscard]] int total_epochs() const { return stage == 2 ? stage2_epochs : epochs; }
  [[nodiscard]] double base_lr() const { return stage == 2 ? lr0 * stage2_lr_mult : lr0; }
};

/// lr0 * decay^floor(epoch / decay_every).
double lr_at(int epoch, const TrainCfg& cfg);

/// (1/HW) sum (a - b)^2.
double mse(const Image& a, const Image& b);

/// Adam with bias correction and no weight decay. Parameters that received no
/// gradient in a step are left untouched (their moments too).
template <typename T>
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(nn::ParamStore<T>& store, double lr);
  [[nodiscard]] std::uint64_t steps() const { return step_; }
  void to_arrays(std::map<std::string, nn::StoredArray>& out) const;
  void from_arrays(const std::map<std::string, nn::StoredArray>& in, std::uint64_t steps);

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t step_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

/// Views of one object in acquisition order.
struct ObjectViews {
  std::string id;
  std::vector<phantom::ViewRecord> views;
  double gt_scale_mm = 1.0;
};

struct TrainData {
  std::vector<ObjectViews> objects;
  phantom::ReferenceLevels reference;
};

struct ItemRef {
  std::size_t object = 0;
  std::size_t view = 0;
  bool operator==(const ItemRef&) const = default;
};

struct Split {
  std::vector<ItemRef> train;
  std::vector<ItemRef> val;
};

/// All views of `held_out` go to validation, the rest to training.
Split leave_one_out(const TrainData& data, const std::string& held_out);

/// Per object, view v is validation when v % period == val_phase, unused when
/// v % period == skip_phase (e.g. reserved for a test set), training otherwise.
Split interleaved(const TrainData& data, std::size_t period, std::size_t val_phase,
                  std::size_t skip_phase = static_cast<std::size_t>(-1));

/// Corrupted views of every object listed in `<dataset_dir>/manifest.json`.
TrainData load_train_data(const std::filesystem::path& dataset_dir);

/// Target image in [0, 1]: ground-truth thickness over the object's scale.
Image normalized_target(const phantom::ViewRecord& view, double gt_scale_mm);

/// Corrupted-input baseline in [0, 1]: per-view min-max of (air level - Time-max).
Image baseline_image(const phantom::ViewRecord& view, const phantom::ReferenceLevels& ref);

/// PSNR (peak 1) of a prediction clamped to [0, 1]; +inf when exact.
double clamped_psnr(const Image& prediction, const Image& target);

struct TrainResult {
  int epochs_run = 0;
  int last_epoch = -1;
  int best_epoch = -1;
  double best_val_psnr = 0.0;
  bool stopped_early = false;  ///< stop_after_epoch reached
  std::vector<std::string> log_lines;
};

/// Optimises the network on `split.train` and tracks held-out PSNR on
/// `split.val`. On return `net` holds the best-validation weights. When
/// `out_dir` is non-empty: log.ndjson, best.ckpt and state.ckpt are written
/// there, and `resume` continues from state.ckpt.
template <typename T>
TrainResult train_stage(const TrainData& data, const Split& split, sarnet::Network<T>& net, const TrainCfg& cfg,
                        const std::filesystem::path& out_dir = {}, bool resume = false);

/// Restores the given views with the current weights (stage 1: single view;
/// stage 2: multi-view over each object's full sequence).
template <typename T>
std::vector<Image> restore_items(sarnet::Network<T>& net, const TrainData& data, const std::vector<ItemRef>& items,
                                 int stage, bool zero_bands);

}  // namespace thz::train
