// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace zsc {

/// Dense row-major tensor of doubles. Shapes follow the [C,H,W] convention
/// for maps, [out,in] for linear weights and [oc,ic,kh,kw] for conv kernels.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    if (static_cast<int64_t>(values.size()) != count(t.shape_))
      throw std::invalid_argument("Tensor::from: value count does not match shape");
    t.data_ = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // [H,W]
  double& at2(int r, int c) { return data_[static_cast<size_t>(r) * dim(1) + c]; }
  double at2(int r, int c) const { return data_[static_cast<size_t>(r) * dim(1) + c]; }
  // [C,H,W]
  double& at3(int ch, int r, int c) {
    return data_[(static_cast<size_t>(ch) * dim(1) + r) * dim(2) + c];
  }
  double at3(int ch, int r, int c) const {
    return data_[(static_cast<size_t>(ch) * dim(1) + r) * dim(2) + c];
  }
  // [N,C,H,W] (conv kernels)
  double& at4(int n, int ch, int r, int c) {
    return data_[((static_cast<size_t>(n) * dim(1) + ch) * dim(2) + r) * dim(3) + c];
  }
  double at4(int n, int ch, int r, int c) const {
    return data_[((static_cast<size_t>(n) * dim(1) + ch) * dim(2) + r) * dim(3) + c];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) {
    for (auto& x : data_) x = v;
  }

  double sum() const {
    double s = 0.0;
    for (double x : data_) s += x;
    return s;
  }

  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != numel())
      throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("negative tensor dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace zsc
