#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace flower {

/// Error type thrown by every contract violation in the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline std::string format_msg(const char* expr, const std::string& msg) {
  std::ostringstream os;
  os << msg << " (check failed: " << expr << ")";
  return os.str();
}
}  // namespace detail

#define FLOWER_CHECK(cond, msg)                                   \
  do {                                                            \
    if (!(cond)) {                                                \
      throw ::flower::Error(::flower::detail::format_msg(#cond, (msg))); \
    }                                                             \
  } while (0)

/// Dense array of 64-bit floats with an explicit shape, stored row-major.
///
/// Shapes are limited to what the library needs: rank 1 (vectors) and
/// rank 2 (matrices); a scalar is represented as shape {1}.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {
    validate_shape();
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    FLOWER_CHECK(data_.size() == count(shape_),
                 "tensor data length does not match shape");
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor vector(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::size_t rows() const {
    FLOWER_CHECK(rank() == 2, "rows() requires a rank-2 tensor");
    return shape_[0];
  }
  std::size_t cols() const {
    FLOWER_CHECK(rank() == 2, "cols() requires a rank-2 tensor");
    return shape_[1];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  /// Scalar value of a one-element tensor.
  double item() const {
    FLOWER_CHECK(size() == 1, "item() requires a one-element tensor");
    return data_[0];
  }

  /// Row r of a rank-2 tensor as a fresh vector tensor.
  Tensor row(std::size_t r) const {
    FLOWER_CHECK(rank() == 2 && r < rows(), "row index out of range");
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(r * cols()),
                            data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols()));
    return Tensor::vector(std::move(out));
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  static std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << ",";
      os << shape[i];
    }
    os << "]";
    return os.str();
  }

 private:
  void validate_shape() const {
    FLOWER_CHECK(!shape_.empty() && shape_.size() <= 2,
                 "tensor rank must be 1 or 2");
    for (std::size_t d : shape_) {
      FLOWER_CHECK(d > 0, "tensor dimensions must be positive");
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline double squared_distance(const Tensor& a, const Tensor& b) {
  FLOWER_CHECK(a.same_shape(b), "squared_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double euclidean_distance(const Tensor& a, const Tensor& b) {
  return std::sqrt(squared_distance(a, b));
}

inline double l2_norm(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

}  // namespace flower
