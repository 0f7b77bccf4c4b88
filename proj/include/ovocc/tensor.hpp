#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ovocc {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major double tensor. Channel-last layouts are used throughout
// (e.g. (camera, row, col, channel) and (H, W, Z, channel)).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major offset of a full multi-index.
  std::size_t offset(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index) {
    return data_[offset(index)];
  }
  double at(std::initializer_list<std::size_t> index) const {
    return data_[offset(index)];
  }

  void fill(double v);
  Tensor reshaped(Shape shape) const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  // Exact (bitwise for finite values) equality of shape and contents.
  bool operator==(const Tensor& other) const = default;

  // Size of the trailing axis and the product of all leading axes.
  std::size_t last_dim() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return shape_.empty() ? 1 : size() / last_dim(); }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  double item() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace ovocc
