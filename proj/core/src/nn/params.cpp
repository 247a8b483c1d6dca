#include "thz/nn/params.hpp"

#include <cstring>
#include <fstream>
#include <random>

#include "json.hpp"
#include "thz/io.hpp"

namespace thz::nn {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'T', 'H', 'Z', 'W', 'G', 'T', '0', '1'};

std::vector<std::size_t> dims(Shape4 s) { return {s.n, s.c, s.h, s.w}; }
}  // namespace

std::uint64_t path_hash(const std::string& path) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : path) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
Var<T> ParamStore<T>::add_param(const std::string& path, Shape4 shape, Init init) {
  if (params_.count(path) || buffers_.count(path)) throw ConfigError("duplicate parameter path " + path);
  specs_.push_back({path, shape, init});
  auto v = parameter(Tensor<T>(shape));
  params_.emplace(path, v);
  return v;
}

template <typename T>
Tensor<T>& ParamStore<T>::add_buffer(const std::string& path, Shape4 shape, T fill) {
  if (params_.count(path) || buffers_.count(path)) throw ConfigError("duplicate buffer path " + path);
  return buffers_.emplace(path, Tensor<T>(shape, fill)).first->second;
}

template <typename T>
const Var<T>& ParamStore<T>::param(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw ConfigError("unknown parameter " + path);
  return it->second;
}

template <typename T>
Tensor<T>& ParamStore<T>::buffer(const std::string& path) {
  auto it = buffers_.find(path);
  if (it == buffers_.end()) throw ConfigError("unknown buffer " + path);
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v->value.numel();
  return n;
}

template <typename T>
void ParamStore<T>::initialize(std::uint64_t seed) {
  for (const auto& spec : specs_) {
    auto& t = params_.at(spec.path)->value;
    switch (spec.init) {
      case Init::kZero:
        std::fill(t.data.begin(), t.data.end(), T(0));
        break;
      case Init::kOne:
        std::fill(t.data.begin(), t.data.end(), T(1));
        break;
      case Init::kHe: {
        const double fan_in = static_cast<double>(spec.shape.c * spec.shape.h * spec.shape.w);
        std::mt19937_64 rng(derive_seed(seed, path_hash(spec.path)));
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (auto& v : t.data) v = static_cast<T>(dist(rng));
        break;
      }
    }
  }
  for (auto& [path, buf] : buffers_) {
    const bool is_var = path.ends_with("running_var");
    std::fill(buf.data.begin(), buf.data.end(), is_var ? T(1) : T(0));
  }
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [_, v] : params_) std::vector<T>().swap(v->grad);
}

template <typename T>
template <typename U>
void ParamStore<T>::copy_from(const ParamStore<U>& other) {
  for (auto& [path, v] : params_) {
    const auto& src = other.param(path)->value;
    if (!(src.shape == v->value.shape)) throw ShapeError("copy_from: shape mismatch at " + path);
    for (std::size_t i = 0; i < src.numel(); ++i) v->value.data[i] = static_cast<T>(src.data[i]);
  }
  for (auto& [path, buf] : buffers_) {
    auto it = other.buffers().find(path);
    if (it == other.buffers().end() || !(it->second.shape == buf.shape))
      throw ShapeError("copy_from: buffer mismatch at " + path);
    for (std::size_t i = 0; i < buf.numel(); ++i) buf.data[i] = static_cast<T>(it->second.data[i]);
  }
}

void save_container(const std::filesystem::path& file, const std::map<std::string, StoredArray>& arrays,
                    const std::string& meta_json) {
  json index;
  index["meta"] = meta_json.empty() ? json::object() : json::parse(meta_json);
  json tensors = json::object();
  std::string payload;
  for (const auto& [path, arr] : arrays) {
    std::size_t count = 1;
    for (std::size_t d : arr.shape) count *= d;
    if (count != arr.values.size()) throw ShapeError("save_container: " + path + " has inconsistent shape");
    tensors[path] = {{"shape", arr.shape},
                     {"dtype", arr.f64 ? "f64" : "f32"},
                     {"offset", payload.size()},
                     {"count", count}};
    for (double v : arr.values) {
      if (arr.f64) io::append_le_f64(payload, v);
      else io::append_le_f32(payload, v);
    }
  }
  index["tensors"] = tensors;
  const std::string header = index.dump();
  std::string bytes(kMagic, sizeof(kMagic));
  std::uint64_t len = header.size();
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
  bytes += header;
  bytes += payload;
  if (!file.parent_path().empty()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + file.string());
}

std::map<std::string, StoredArray> load_container(const std::filesystem::path& file, std::string* meta_json) {
  if (!std::filesystem::exists(file)) throw MissingPrerequisite("checkpoint not found: " + file.string());
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataInconsistency(file.string() + " is not a weight container");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (16 + len > bytes.size()) throw DataInconsistency(file.string() + ": truncated index");
  json index;
  try {
    index = json::parse(bytes.substr(16, len));
  } catch (const json::exception& e) {
    throw DataInconsistency(file.string() + ": bad index: " + e.what());
  }
  const std::size_t base = 16 + len;
  std::map<std::string, StoredArray> out;
  try {
    for (const auto& [path, entry] : index.at("tensors").items()) {
      StoredArray arr;
      arr.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto dtype = entry.at("dtype").get<std::string>();
      if (dtype != "f32" && dtype != "f64") throw DataInconsistency(path + ": unknown dtype " + dtype);
      arr.f64 = dtype == "f64";
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      const std::size_t width = arr.f64 ? 8 : 4;
      if (base + offset + count * width > bytes.size()) throw DataInconsistency(path + ": payload out of range");
      arr.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const char* p = bytes.data() + base + offset + i * width;
        arr.values[i] = arr.f64 ? io::load_le_f64(p) : io::load_le_f32(p);
      }
      out.emplace(path, std::move(arr));
    }
    if (meta_json) *meta_json = index.at("meta").dump();
  } catch (const json::exception& e) {
    throw DataInconsistency(file.string() + ": bad index: " + e.what());
  }
  return out;
}

template <typename T>
std::map<std::string, StoredArray> store_to_arrays(const ParamStore<T>& store, bool f64) {
  std::map<std::string, StoredArray> out;
  for (const auto& [path, v] : store.params()) {
    out[path] = StoredArray{dims(v->value.shape), std::vector<double>(v->value.data.begin(), v->value.data.end()), f64};
  }
  for (const auto& [path, t] : store.buffers()) {
    out[path] = StoredArray{dims(t.shape), std::vector<double>(t.data.begin(), t.data.end()), f64};
  }
  return out;
}

template <typename T>
void arrays_to_store(const std::map<std::string, StoredArray>& arrays, ParamStore<T>& store) {
  auto fill = [&](const std::string& path, Tensor<T>& t) {
    auto it = arrays.find(path);
    if (it == arrays.end()) throw DataInconsistency("checkpoint lacks " + path);
    if (it->second.shape != dims(t.shape))
      throw DataInconsistency("checkpoint shape mismatch at " + path + ", expected " + t.shape.str());
    for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<T>(it->second.values[i]);
  };
  for (const auto& [path, v] : store.params()) fill(path, v->value);
  for (auto& [path, t] : store.buffers()) fill(path, t);
}

template class ParamStore<float>;
template class ParamStore<double>;
template void ParamStore<float>::copy_from<double>(const ParamStore<double>&);
template void ParamStore<double>::copy_from<float>(const ParamStore<float>&);
template void ParamStore<float>::copy_from<float>(const ParamStore<float>&);
template void ParamStore<double>::copy_from<double>(const ParamStore<double>&);
template std::map<std::string, StoredArray> store_to_arrays<float>(const ParamStore<float>&, bool);
template std::map<std::string, StoredArray> store_to_arrays<double>(const ParamStore<double>&, bool);
template void arrays_to_store<float>(const std::map<std::string, StoredArray>&, ParamStore<float>&);
template void arrays_to_store<double>(const std::map<std::string, StoredArray>&, ParamStore<double>&);

}  // namespace thz::nn
