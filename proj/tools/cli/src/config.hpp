#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "thz/phantom.hpp"
#include "thz/sarnet.hpp"
#include "thz/tomo.hpp"
#include "thz/train.hpp"

namespace thz::cli {

using nlohmann::json;

/// Command-line overrides shared by every subcommand.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> preset;
};

struct GenDataConfig {
  std::uint64_t seed = 0;
  std::string out = "runs/gen-data";
  phantom::DatasetConfig dataset;
  json echo;
};

enum class Precision { kF32, kF64 };

struct TrainRunConfig {
  std::uint64_t seed = 0;
  std::string out = "runs/train";
  std::string dataset;
  sarnet::NetworkCfg network = sarnet::NetworkCfg::desk();
  train::TrainCfg train;
  std::string split_mode = "leave_one_out";
  std::string held_out;  ///< leave_one_out: object id (default: last object)
  std::size_t period = 6, val_phase = 3;
  std::optional<std::size_t> skip_phase;
  std::string init_checkpoint;  ///< required for stage 2
  bool resume = false;
  Precision precision = Precision::kF32;
  json echo;
};

struct RestoreConfig {
  std::string out = "runs/restore";
  std::string dataset;
  std::string checkpoint;
  bool multiview = false;
  std::vector<std::string> objects;  ///< empty: all
  bool previews = false;
  Precision precision = Precision::kF32;
  json echo;
};

struct ReconstructConfig {
  std::string out = "runs/reconstruct";
  std::string dataset;
  std::string source = "restored";  ///< restored | gt | baseline
  std::string views;                ///< restore output directory (source = restored)
  tomo::ReconOptions recon;
  bool previews = true;
  std::vector<std::string> objects;
  json echo;
};

struct EvaluateConfig {
  std::string out = "runs/evaluate";
  std::string dataset;
  std::string volumes;   ///< reconstruct output directory
  std::string restored;  ///< restore output directory
  double threshold = 0.5;
  std::optional<double> tau_mm;
  bool plots = true;
  std::vector<std::string> objects;
  json echo;
};

/// Parses the config file text; unknown keys and bad values raise ConfigError
/// naming the JSON pointer. Each `echo` holds the resolved config.
GenDataConfig parse_gen_data(const std::string& text, const Overrides& ov);
TrainRunConfig parse_train(const std::string& text, const Overrides& ov, bool deterministic);
RestoreConfig parse_restore(const std::string& text, const Overrides& ov, bool deterministic);
ReconstructConfig parse_reconstruct(const std::string& text, const Overrides& ov);
EvaluateConfig parse_evaluate(const std::string& text, const Overrides& ov);

}  // namespace thz::cli
