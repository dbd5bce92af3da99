#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace simseg {

struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense NCHW array of doubles. Every network activation, parameter and
// gradient is one of these.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 shape, double fill = 0.0);
  Tensor(Shape4 shape, std::vector<double> values);

  static Tensor zeros(int n, int c, int h, int w) { return Tensor({n, c, h, w}); }
  static Tensor filled(Shape4 shape, double v) { return Tensor(shape, v); }

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int n, int c, int h, int w) {
    return data_[index(n, c, h, w)];
  }
  double operator()(int n, int c, int h, int w) const {
    return data_[index(n, c, h, w)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& vector() const { return data_; }

  // Pointer to the (n, c) plane.
  double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(int n, int c) const {
    return data_.data() + index(n, c, 0, 0);
  }

  void fill(double v);
  bool all_finite() const;
  double sum() const;
  double max_abs() const;

  // Copies of a batch range / channel range.
  Tensor batch_slice(int begin, int count) const;
  Tensor channel_slice(int begin, int count) const;

 private:
  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }

  Shape4 shape_{};
  std::vector<double> data_;
};

using FeatureStack = Tensor;

// Stacks single-sample tensors (n == 1) along the batch axis.
Tensor stack_batch(std::span<const Tensor> items);

// Throws InputError naming `what` when the shapes differ.
void require_same_shape(const Shape4& a, const Shape4& b, const char* what);

}  // namespace simseg
