#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "thz/common.hpp"

namespace thz::io {

/// Writes values as raw little-endian IEEE-754 binary32.
void write_f32(const std::filesystem::path& path, std::span<const double> values);
/// Reads a raw little-endian binary32 file; `expected_count` of 0 accepts any length.
std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expected_count = 0);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// 8-bit binary PGM of `img`, linearly mapped from [lo, hi] to [0, 255].
void write_pgm(const std::filesystem::path& path, const Image& img, double lo, double hi);

/// Little-endian encode/decode helpers for container payloads.
void append_le_f32(std::string& buffer, double value);
void append_le_f64(std::string& buffer, double value);
double load_le_f32(const char* bytes);
double load_le_f64(const char* bytes);

}  // namespace thz::io
