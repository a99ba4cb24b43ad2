#pragma once

#include <Eigen/Core>
#include <Eigen/LU>

#include <array>
#include <nlohmann/json_fwd.hpp>

namespace m2m {

/// x ↦ A·x + t, with pixel (0,0)'s center at the origin, x horizontal, y down.
struct AffineMap {
  Eigen::Matrix2d linear = Eigen::Matrix2d::Identity();
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();

  static AffineMap identity() { return {}; }
  static AffineMap from_params(double a11, double a12, double a21, double a22, double tx, double ty) {
    AffineMap m;
    m.linear << a11, a12, a21, a22;
    m.translation << tx, ty;
    return m;
  }
  static AffineMap translate(double tx, double ty) { return from_params(1, 0, 0, 1, tx, ty); }
  /// Rotation by `radians` (with optional isotropic scale) about `center`.
  static AffineMap rotation_about(double radians, const Eigen::Vector2d& center, double scale = 1.0);
  static AffineMap from_homogeneous(const Eigen::Matrix3d& h);

  Eigen::Vector2d operator()(const Eigen::Vector2d& p) const { return linear * p + translation; }
  Eigen::Vector2d apply(double x, double y) const { return (*this)(Eigen::Vector2d(x, y)); }

  double determinant() const { return linear.determinant(); }
  bool invertible() const { return std::abs(determinant()) > 1e-12; }
  AffineMap inverse() const;
  Eigen::Matrix3d homogeneous() const;

  /// (a ∘ b)(x) = a(b(x)).
  friend AffineMap operator*(const AffineMap& a, const AffineMap& b) {
    return {a.linear * b.linear, a.linear * b.translation + a.translation};
  }
};

/// Scaling by `factor` about the origin, S·T·S⁻¹: linear part kept, translation scaled.
AffineMap upscale_map(const AffineMap& t, double factor);

/// Largest displacement difference between two maps over the four corners of a w×h grid.
double endpoint_error(const AffineMap& a, const AffineMap& b, int width, int height);
double mean_corner_error(const AffineMap& a, const AffineMap& b, int width, int height);

/// Fraction of the w×h pixel grid whose image under t lies inside [0,w−1]×[0,h−1].
double overlap_fraction(const AffineMap& t, int width, int height);

/// {"a":[a11,a12,a21,a22],"t":[tx,ty]}
void to_json(nlohmann::json& j, const AffineMap& m);
void from_json(const nlohmann::json& j, AffineMap& m);

}  // namespace m2m
