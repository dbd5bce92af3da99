#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "simseg/errors.hpp"

namespace simseg {

// Physical voxel size in millimetres.
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  bool valid() const { return x > 0.0 && y > 0.0 && z > 0.0; }
  double voxel_volume() const { return x * y * z; }
  bool operator==(const Spacing&) const = default;
};

// Dense (depth, height, width) grid; index order z, y, x. A 2D image is a grid
// of depth 1.
template <class T>
class Grid3 {
 public:
  Grid3() = default;
  Grid3(int depth, int height, int width, Spacing spacing = {}, T fill = T{})
      : depth_(depth), height_(height), width_(width), spacing_(spacing) {
    if (depth < 0 || height < 0 || width < 0)
      throw InputError("negative grid dimension");
    data_.assign(static_cast<std::size_t>(depth) * height * width, fill);
  }

  int depth() const { return depth_; }
  int height() const { return height_; }
  int width() const { return width_; }
  const Spacing& spacing() const { return spacing_; }
  void set_spacing(Spacing s) { spacing_ = s; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(height_) * width_;
  }
  bool same_dims(const Grid3<T>& o) const {
    return depth_ == o.depth_ && height_ == o.height_ && width_ == o.width_;
  }
  template <class U>
  bool same_dims(const Grid3<U>& o) const {
    return depth_ == o.depth() && height_ == o.height() && width_ == o.width();
  }

  T& at(int z, int y, int x) { return data_[index(z, y, x)]; }
  const T& at(int z, int y, int x) const { return data_[index(z, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T* slice(int z) { return data_.data() + index(z, 0, 0); }
  const T* slice(int z) const { return data_.data() + index(z, 0, 0); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool operator==(const Grid3<T>& o) const {
    return same_dims(o) && data_ == o.data_;
  }

 private:
  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * height_ + y) * width_ + x;
  }

  int depth_ = 0;
  int height_ = 0;
  int width_ = 0;
  Spacing spacing_{};
  std::vector<T> data_;
};

using Volume = Grid3<double>;
using BinaryMask = Grid3<std::uint8_t>;

inline std::size_t count_foreground(const BinaryMask& m) {
  std::size_t n = 0;
  for (auto v : m.values()) n += v != 0;
  return n;
}

}  // namespace simseg
