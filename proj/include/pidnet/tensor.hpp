#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pidnet {

/// Raised when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense channels x time array of doubles stored channel-major
/// (data[c * time + t]). Also used for plain matrices (rows x cols) and
/// column vectors (n x 1).
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t channels, std::size_t time, double fill = 0.0)
      : channels_(channels), time_(time), data_(channels * time, fill) {}
  Tensor(std::size_t channels, std::size_t time, std::vector<double> data)
      : channels_(channels), time_(time), data_(std::move(data)) {
    if (data_.size() != channels_ * time_) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(channels, time));
    }
  }

  /// Builds a tensor from nested rows; every row must have the same length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t c = rows.size();
    const std::size_t t = c == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(c * t);
    for (const auto& r : rows) {
      if (r.size() != t) throw ShapeError("ragged rows in Tensor::from_rows");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor(c, t, std::move(data));
  }

  static Tensor column(std::initializer_list<double> values) {
    return Tensor(values.size(), 1, std::vector<double>(values));
  }

  std::size_t channels() const { return channels_; }
  std::size_t time() const { return time_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t c, std::size_t t) { return data_[c * time_ + t]; }
  double operator()(std::size_t c, std::size_t t) const { return data_[c * time_ + t]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::span<double> row(std::size_t c) { return {data_.data() + c * time_, time_}; }
  std::span<const double> row(std::size_t c) const { return {data_.data() + c * time_, time_}; }

  bool same_shape(const Tensor& other) const {
    return channels_ == other.channels_ && time_ == other.time_;
  }
  std::string shape() const { return shape_string(channels_, time_); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.channels_ == b.channels_ && a.time_ == b.time_ && a.data_ == b.data_;
  }

  static std::string shape_string(std::size_t c, std::size_t t) {
    return std::to_string(c) + "x" + std::to_string(t);
  }

 private:
  std::size_t channels_ = 0;
  std::size_t time_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape() + " vs " + b.shape());
  }
}

/// Largest absolute elementwise difference; shapes must agree.
double max_abs_diff(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& x);

}  // namespace pidnet
