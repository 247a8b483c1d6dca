#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace thz {

// Error taxonomy shared by every module. The CLI maps these onto exit codes.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required input (dataset, checkpoint, ground truth) does not exist.
class MissingPrerequisite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// On-disk artifacts disagree with each other (e.g. manifest vs views).
class DataInconsistency : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major 2D array of doubles.
class Image {
 public:
  Image() = default;
  Image(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  [[nodiscard]] std::vector<double>& data() { return data_; }
  [[nodiscard]] const std::vector<double>& data() const { return data_; }

  [[nodiscard]] bool same_shape(const Image& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Row-major 3D array of doubles indexed (depth, row, col).
class Grid3 {
 public:
  Grid3() = default;
  Grid3(std::size_t depth, std::size_t rows, std::size_t cols, double fill = 0.0)
      : depth_(depth), rows_(rows), cols_(cols), data_(depth * rows * cols, fill) {}

  [[nodiscard]] std::size_t depth() const { return depth_; }
  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t d, std::size_t r, std::size_t c) {
    return data_[(d * rows_ + r) * cols_ + c];
  }
  double operator()(std::size_t d, std::size_t r, std::size_t c) const {
    return data_[(d * rows_ + r) * cols_ + c];
  }

  [[nodiscard]] std::vector<double>& data() { return data_; }
  [[nodiscard]] const std::vector<double>& data() const { return data_; }

  [[nodiscard]] bool same_shape(const Grid3& o) const {
    return depth_ == o.depth_ && rows_ == o.rows_ && cols_ == o.cols_;
  }

  /// Copy of the slice at depth index `d`.
  [[nodiscard]] Image slice(std::size_t d) const;
  void set_slice(std::size_t d, const Image& img);

  bool operator==(const Grid3&) const = default;

 private:
  std::size_t depth_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle to (-pi, pi].
double wrap_phase(double radians);

/// Deterministic 64-bit mixing of a seed with stream identifiers (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

}  // namespace thz
