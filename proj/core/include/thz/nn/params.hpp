#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "thz/nn/tensor.hpp"

namespace thz::nn {

enum class Init {
  kHe,    ///< N(0, 2 / fan_in), fan_in = in * k * k
  kZero,  ///< biases and norm shifts
  kOne,   ///< norm scales
};

struct ParamSpec {
  std::string path;
  Shape4 shape;
  Init init = Init::kHe;
};

/// Learnable parameters and non-learnable buffers keyed by module path.
template <typename T>
class ParamStore {
 public:
  Var<T> add_param(const std::string& path, Shape4 shape, Init init);
  Tensor<T>& add_buffer(const std::string& path, Shape4 shape, T fill);

  [[nodiscard]] const Var<T>& param(const std::string& path) const;
  [[nodiscard]] Tensor<T>& buffer(const std::string& path);
  [[nodiscard]] bool has_param(const std::string& path) const { return params_.count(path) != 0; }

  [[nodiscard]] const std::map<std::string, Var<T>>& params() const { return params_; }
  [[nodiscard]] const std::map<std::string, Tensor<T>>& buffers() const { return buffers_; }
  [[nodiscard]] std::map<std::string, Tensor<T>>& buffers() { return buffers_; }
  [[nodiscard]] const std::vector<ParamSpec>& specs() const { return specs_; }
  [[nodiscard]] std::size_t parameter_count() const;

  /// Deterministic per seed; each tensor draws from its own stream keyed by path.
  void initialize(std::uint64_t seed);
  void zero_grad();
  /// Copies values (params and buffers) from a store with identical layout.
  template <typename U>
  void copy_from(const ParamStore<U>& other);

 private:
  std::map<std::string, Var<T>> params_;
  std::map<std::string, Tensor<T>> buffers_;
  std::vector<ParamSpec> specs_;
};

/// FNV-1a of a module path; used to key per-tensor random streams.
std::uint64_t path_hash(const std::string& path);

struct StoredArray {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  bool f64 = false;  ///< payload precision on disk
};

/// Container: 8-byte magic, uint64 LE index length, JSON index
/// {"meta": ..., "tensors": {path: {shape, dtype, offset, count}}}, raw LE payload.
void save_container(const std::filesystem::path& file, const std::map<std::string, StoredArray>& arrays,
                    const std::string& meta_json);
std::map<std::string, StoredArray> load_container(const std::filesystem::path& file, std::string* meta_json);

template <typename T>
std::map<std::string, StoredArray> store_to_arrays(const ParamStore<T>& store, bool f64);
/// Every tensor of `store` must be present with a matching shape.
template <typename T>
void arrays_to_store(const std::map<std::string, StoredArray>& arrays, ParamStore<T>& store);

}  // namespace thz::nn
