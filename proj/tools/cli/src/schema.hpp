#pragma once

// Small helpers for validating JSON configs. Every error is a ConfigError whose
// message starts with the JSON pointer of the offending key.

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"
#include "thz/common.hpp"

namespace thz::cli::schema {

using nlohmann::json;

inline std::string child(const std::string& ptr, std::string_view key) { return ptr + "/" + std::string(key); }

[[noreturn]] inline void fail(const std::string& ptr, const std::string& what) {
  throw ConfigError((ptr.empty() ? std::string("/") : ptr) + ": " + what);
}

inline void require_object(const json& j, const std::string& ptr) {
  if (!j.is_object()) fail(ptr, "expected an object");
}

inline void allow_keys(const json& j, const std::string& ptr, std::initializer_list<std::string_view> keys) {
  require_object(j, ptr);
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto a : keys) ok = ok || a == k;
    if (!ok) fail(child(ptr, k), "unknown key");
  }
}

inline double number(const json& j, const std::string& ptr, std::string_view key, double fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(std::string(key));
  if (!v.is_number()) fail(child(ptr, key), "expected a number");
  return v.get<double>();
}

inline std::int64_t integer(const json& j, const std::string& ptr, std::string_view key, std::int64_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(std::string(key));
  if (!v.is_number_integer()) fail(child(ptr, key), "expected an integer");
  return v.get<std::int64_t>();
}

inline std::uint64_t unsigned_integer(const json& j, const std::string& ptr, std::string_view key,
                                      std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(std::string(key));
  if (!v.is_number_unsigned()) fail(child(ptr, key), "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline bool boolean(const json& j, const std::string& ptr, std::string_view key, bool fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(std::string(key));
  if (!v.is_boolean()) fail(child(ptr, key), "expected true or false");
  return v.get<bool>();
}

inline std::string string(const json& j, const std::string& ptr, std::string_view key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(std::string(key));
  if (!v.is_string()) fail(child(ptr, key), "expected a string");
  return v.get<std::string>();
}

inline std::string required_string(const json& j, const std::string& ptr, std::string_view key) {
  if (!j.contains(key)) fail(child(ptr, key), "required key is missing");
  return string(j, ptr, key, "");
}

inline std::string one_of(const json& j, const std::string& ptr, std::string_view key, const std::string& fallback,
                          std::initializer_list<std::string_view> allowed) {
  const std::string v = string(j, ptr, key, fallback);
  std::string list;
  for (auto a : allowed) {
    if (a == v) return v;
    list += (list.empty() ? "" : ", ") + std::string(a);
  }
  fail(child(ptr, key), "'" + v + "' is not one of " + list);
}

}  // namespace thz::cli::schema
