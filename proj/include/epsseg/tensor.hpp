#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace epsseg {

/// Dense row-major tensor of doubles. Copies are shallow (shared storage);
/// use clone() for a deep copy. Shapes follow NCHW for 4-d data.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(count(shape_), 0.0)) {}

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), v);
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  static Tensor from(std::vector<int> shape, std::vector<double> values) {
    if (count(shape) != static_cast<int64_t>(values.size()))
      throw std::invalid_argument("Tensor::from: shape/value count mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<double>>(std::move(values));
    return t;
  }

  bool defined() const { return static_cast<bool>(data_); }
  int ndim() const { return static_cast<int>(shape_.size()); }

  int dim(int i) const {
    if (i < 0 || i >= ndim()) throw std::out_of_range("Tensor::dim");
    return shape_[i];
  }

  const std::vector<int>& shape() const { return shape_; }

  int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }

  double& operator[](int64_t i) { return (*data_)[i]; }
  double operator[](int64_t i) const { return (*data_)[i]; }

  /// Offset helper for 4-d tensors.
  int64_t idx4(int n, int c, int h, int w) const {
    return ((static_cast<int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  double& at4(int n, int c, int h, int w) { return (*data_)[idx4(n, c, h, w)]; }
  double at4(int n, int c, int h, int w) const { return (*data_)[idx4(n, c, h, w)]; }

  /// New shape over the same storage.
  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != numel())
      throw std::invalid_argument("Tensor::reshaped: element count mismatch (" +
                                  shape_str() + " -> " + shape_str_of(shape) + ")");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    return t;
  }

  void fill(double v) { std::fill(data_->begin(), data_->end(), v); }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool shares_storage(const Tensor& o) const { return data_ == o.data_; }

  std::string shape_str() const { return shape_str_of(shape_); }

  static std::string shape_str_of(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
};

inline bool all_finite(const Tensor& t) {
  const double* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

}  // namespace epsseg
