#include "thz/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace thz::io {

namespace {

template <class U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xff));
    }
    return out;
  }
}

void ensure_parent(const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
}

}  // namespace

void append_le_f32(std::string& buffer, double value) {
  const auto bits = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(value)));
  char raw[4];
  std::memcpy(raw, &bits, 4);
  buffer.append(raw, 4);
}

void append_le_f64(std::string& buffer, double value) {
  const auto bits = to_little(std::bit_cast<std::uint64_t>(value));
  char raw[8];
  std::memcpy(raw, &bits, 8);
  buffer.append(raw, 8);
}

double load_le_f32(const char* bytes) {
  std::uint32_t bits;
  std::memcpy(&bits, bytes, 4);
  return static_cast<double>(std::bit_cast<float>(to_little(bits)));
}

double load_le_f64(const char* bytes) {
  std::uint64_t bits;
  std::memcpy(&bits, bytes, 8);
  return std::bit_cast<double>(to_little(bits));
}

void write_f32(const std::filesystem::path& path, std::span<const double> values) {
  std::string buffer;
  buffer.reserve(values.size() * 4);
  for (double v : values) append_le_f32(buffer, v);
  write_text(path, buffer);
}

std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expected_count) {
  const std::string raw = read_text(path);
  if (raw.size() % 4 != 0) throw IoError(path.string() + ": size is not a multiple of 4 bytes");
  const std::size_t n = raw.size() / 4;
  if (expected_count != 0 && n != expected_count) {
    throw DataInconsistency(path.string() + ": expected " + std::to_string(expected_count) +
                            " floats, found " + std::to_string(n));
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = load_le_f32(raw.data() + 4 * i);
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_pgm(const std::filesystem::path& path, const Image& img, double lo, double hi) {
  std::string out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (double v : img.data()) {
    double t = (v - lo) / span;
    t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
    out.push_back(static_cast<char>(static_cast<unsigned char>(t * 255.0 + 0.5)));
  }
  write_text(path, out);
}

}  // namespace thz::io
