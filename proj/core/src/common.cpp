#include "thz/common.hpp"

#include <algorithm>
#include <cmath>

namespace thz {

Image Grid3::slice(std::size_t d) const {
  if (d >= depth_) throw RangeError("Grid3::slice: depth index out of range");
  Image out(rows_, cols_);
  const auto first = data_.begin() + static_cast<std::ptrdiff_t>(d * rows_ * cols_);
  std::copy(first, first + static_cast<std::ptrdiff_t>(rows_ * cols_), out.data().begin());
  return out;
}

void Grid3::set_slice(std::size_t d, const Image& img) {
  if (d >= depth_) throw RangeError("Grid3::set_slice: depth index out of range");
  if (img.rows() != rows_ || img.cols() != cols_)
    throw ShapeError("Grid3::set_slice: slice shape mismatch");
  std::copy(img.data().begin(), img.data().end(),
            data_.begin() + static_cast<std::ptrdiff_t>(d * rows_ * cols_));
}

double wrap_phase(double radians) {
  double w = std::remainder(radians, 2.0 * kPi);  // [-pi, pi]
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x51ed270b27f3a1c9ULL));
  h = splitmix64(h ^ (c + 0x2545f4914f6cdd1dULL));
  return h;
}

}  // namespace thz
