#pragma once

#include <Eigen/Core>

#include <array>
#include <string>
#include <vector>

#include "m2m/errors.hpp"
#include "m2m/image.hpp"

namespace m2m {

/// Dense NCHW tensor.
template <typename Scalar>
class Tensor {
 public:
  using Shape = std::array<int, 4>;
  using Values = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(shape) {
    for (int d : shape)
      if (d < 0) throw ShapeError("negative tensor dimension");
    values_ = Values::Constant(count(shape), fill);
  }

  static Eigen::Index count(const Shape& s) { return Eigen::Index(s[0]) * s[1] * s[2] * s[3]; }

  const Shape& shape() const { return shape_; }
  int batch() const { return shape_[0]; }
  int channels() const { return shape_[1]; }
  int height() const { return shape_[2]; }
  int width() const { return shape_[3]; }
  Eigen::Index size() const { return values_.size(); }
  Eigen::Index plane_size() const { return Eigen::Index(shape_[2]) * shape_[3]; }
  bool empty() const { return values_.size() == 0; }

  Values& values() { return values_; }
  const Values& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator()(int n, int c, int y, int x) { return values_[index(n, c, y, x)]; }
  Scalar operator()(int n, int c, int y, int x) const { return values_[index(n, c, y, x)]; }

  /// Sample n as a channels × (height·width) matrix.
  MatrixMap sample(int n) { return MatrixMap(data() + n * sample_size(), shape_[1], plane_size()); }
  ConstMatrixMap sample(int n) const {
    return ConstMatrixMap(data() + n * sample_size(), shape_[1], plane_size());
  }
  /// One channel plane as a height × width matrix.
  MatrixMap plane(int n, int c) {
    return MatrixMap(data() + (Eigen::Index(n) * shape_[1] + c) * plane_size(), shape_[2], shape_[3]);
  }
  ConstMatrixMap plane(int n, int c) const {
    return ConstMatrixMap(data() + (Eigen::Index(n) * shape_[1] + c) * plane_size(), shape_[2], shape_[3]);
  }

  void set_zero() { values_.setZero(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.values() = values_.template cast<Other>();
    return out;
  }

  std::string shape_string() const {
    return "(" + std::to_string(shape_[0]) + "," + std::to_string(shape_[1]) + "," +
           std::to_string(shape_[2]) + "," + std::to_string(shape_[3]) + ")";
  }

 private:
  Eigen::Index sample_size() const { return Eigen::Index(shape_[1]) * plane_size(); }
  Eigen::Index index(int n, int c, int y, int x) const {
    return ((Eigen::Index(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  Shape shape_{0, 0, 0, 0};
  Values values_;
};

/// One image as a (1, C, H, W) tensor.
template <typename Scalar, typename ImageScalar>
Tensor<Scalar> tensor_from_image(const PlanarImage<ImageScalar>& img) {
  Tensor<Scalar> t({1, img.channels(), img.height(), img.width()});
  t.values() = img.data().template cast<Scalar>();
  return t;
}

/// Stacks equally-sized images along the batch dimension.
template <typename Scalar, typename ImageScalar>
Tensor<Scalar> tensor_from_images(const std::vector<PlanarImage<ImageScalar>>& imgs) {
  if (imgs.empty()) throw ShapeError("tensor_from_images: empty batch");
  const auto& f = imgs.front();
  Tensor<Scalar> t({int(imgs.size()), f.channels(), f.height(), f.width()});
  const Eigen::Index n = f.data().size();
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    if (!imgs[i].same_shape(f)) throw ShapeError("tensor_from_images: images differ in shape");
    t.values().segment(Eigen::Index(i) * n, n) = imgs[i].data().template cast<Scalar>();
  }
  return t;
}

template <typename ImageScalar = double, typename Scalar>
PlanarImage<ImageScalar> image_from_tensor(const Tensor<Scalar>& t, int n = 0) {
  PlanarImage<ImageScalar> img(t.width(), t.height(), t.channels());
  const Eigen::Index len = img.data().size();
  img.data() = t.values().segment(Eigen::Index(n) * len, len).template cast<ImageScalar>();
  return img;
}

}  // namespace m2m
