#include "simseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "simseg/errors.hpp"

namespace simseg {

std::string Shape4::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

Tensor::Tensor(Shape4 shape, double fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
    throw InputError("negative tensor dimension " + shape.str());
  data_.assign(shape.size(), fill);
}

Tensor::Tensor(Shape4 shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.size())
    throw InputError("tensor value count does not match shape " + shape.str());
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Tensor Tensor::batch_slice(int begin, int count) const {
  if (begin < 0 || count < 0 || begin + count > shape_.n)
    throw InputError("batch slice out of range for " + shape_.str());
  Tensor out({count, shape_.c, shape_.h, shape_.w});
  const std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.plane();
  std::copy_n(data_.begin() + begin * per, count * per, out.data_.begin());
  return out;
}

Tensor Tensor::channel_slice(int begin, int count) const {
  if (begin < 0 || count < 0 || begin + count > shape_.c)
    throw InputError("channel slice out of range for " + shape_.str());
  Tensor out({shape_.n, count, shape_.h, shape_.w});
  const std::size_t plane = shape_.plane();
  for (int n = 0; n < shape_.n; ++n)
    std::copy_n(this->plane(n, begin), count * plane, out.plane(n, 0));
  return out;
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw InputError("cannot stack an empty batch");
  const Shape4 s = items.front().shape();
  Tensor out({static_cast<int>(items.size()), s.c, s.h, s.w});
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Shape4& si = items[i].shape();
    if (si.n != 1 || si.c != s.c || si.h != s.h || si.w != s.w)
      throw InputError("batch item " + std::to_string(i) + " has shape " +
                       si.str() + ", expected (1," + std::to_string(s.c) +
                       "," + std::to_string(s.h) + "," + std::to_string(s.w) +
                       ")");
    std::copy_n(items[i].data(), per, out.data() + i * per);
  }
  return out;
}

void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
  if (!(a == b))
    throw InputError(std::string(what) + ": shape mismatch " + a.str() +
                     " vs " + b.str());
}

}  // namespace simseg
