#ifndef HJBCTL_TENSOR_HPP_
#define HJBCTL_TENSOR_HPP_

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hjbctl {

// Base class for every error thrown by the library. The C API maps
// ConfigError to HJBCTL_ERR_CONFIG and everything else to
// HJBCTL_ERR_RUNTIME.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dense row-major array of rank 1 or 2 holding doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::size_t n, double fill = 0.0)
      : rows_(n), cols_(1), rank_(1), data_(n, fill) {}
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), rank_(2), data_(rows * cols, fill) {}

  static Tensor from(std::vector<double> values) {
    Tensor t;
    t.rows_ = values.size();
    t.cols_ = 1;
    t.rank_ = 1;
    t.data_ = std::move(values);
    return t;
  }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values) {
    if (values.size() != rows * cols) {
      throw DimensionError("Tensor::matrix: value count " +
                           std::to_string(values.size()) +
                           " does not match shape");
    }
    Tensor t(rows, cols);
    t.data_ = std::move(values);
    return t;
  }
  static Tensor scalar(double v) { return Tensor(1, v); }

  unsigned rank() const { return rank_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  double item() const {
    if (data_.size() != 1) throw DimensionError("Tensor::item: not a scalar");
    return data_[0];
  }

  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && rank_ == o.rank_;
  }
  bool all_finite() const;
  void fill(double v);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 1;
  unsigned rank_ = 1;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double norm_inf(std::span<const double> a);

}  // namespace hjbctl

#endif  // HJBCTL_TENSOR_HPP_
