#pragma once

#include <Eigen/Dense>

#include <cassert>
#include <string>

namespace odvc {

/// Spatial extent of a channel-major tensor.
struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  [[nodiscard]] Eigen::Index plane() const { return Eigen::Index(height) * width; }
  [[nodiscard]] Eigen::Index size() const { return plane() * channels; }
  [[nodiscard]] std::string str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense C x H x W array. Storage is a row-major (channels x H*W) matrix so
/// every channel plane is contiguous and a 1x1 channel mix is a single GEMM.
template <typename Scalar>
class Tensor {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tensor() = default;
  Tensor(int channels, int height, int width)
      : shape_{channels, height, width}, data_(Matrix::Zero(channels, Eigen::Index(height) * width)) {}
  explicit Tensor(Shape shape) : Tensor(shape.channels, shape.height, shape.width) {}
  Tensor(Shape shape, Matrix data) : shape_(shape), data_(std::move(data)) {
    assert(data_.rows() == shape.channels && data_.cols() == shape.plane());
  }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(shape);
    t.data_.setConstant(value);
    return t;
  }
  static Tensor scalar(Scalar value) { return constant({1, 1, 1}, value); }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] int channels() const { return shape_.channels; }
  [[nodiscard]] int height() const { return shape_.height; }
  [[nodiscard]] int width() const { return shape_.width; }
  [[nodiscard]] Eigen::Index size() const { return shape_.size(); }
  [[nodiscard]] bool empty() const { return shape_.size() == 0; }

  Matrix& matrix() { return data_; }
  [[nodiscard]] const Matrix& matrix() const { return data_; }
  auto array() { return data_.array(); }
  [[nodiscard]] auto array() const { return data_.array(); }

  Scalar* data() { return data_.data(); }
  [[nodiscard]] const Scalar* data() const { return data_.data(); }
  Scalar* plane(int c) { return data_.data() + Eigen::Index(c) * shape_.plane(); }
  [[nodiscard]] const Scalar* plane(int c) const { return data_.data() + Eigen::Index(c) * shape_.plane(); }

  Scalar& operator()(int c, int y, int x) { return data_(c, Eigen::Index(y) * shape_.width + x); }
  Scalar operator()(int c, int y, int x) const { return data_(c, Eigen::Index(y) * shape_.width + x); }

  /// Value of a 1x1x1 tensor.
  [[nodiscard]] Scalar item() const {
    assert(size() == 1);
    return data_(0, 0);
  }

  template <typename Other>
  [[nodiscard]] Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Shape shape_;
  Matrix data_;
};

}  // namespace odvc
