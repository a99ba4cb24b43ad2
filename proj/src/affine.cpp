#include "m2m/affine.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "m2m/errors.hpp"

namespace m2m {

AffineMap AffineMap::rotation_about(double radians, const Eigen::Vector2d& center, double scale) {
  AffineMap m;
  m.linear << std::cos(radians), -std::sin(radians), std::sin(radians), std::cos(radians);
  m.linear *= scale;
  m.translation = center - m.linear * center;
  return m;
}

AffineMap AffineMap::from_homogeneous(const Eigen::Matrix3d& h) {
  return {h.topLeftCorner<2, 2>(), h.topRightCorner<2, 1>()};
}

AffineMap AffineMap::inverse() const {
  if (!invertible()) throw MapError("affine map is singular");
  const Eigen::Matrix2d inv = linear.inverse();
  return {inv, -inv * translation};
}

Eigen::Matrix3d AffineMap::homogeneous() const {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  h.topLeftCorner<2, 2>() = linear;
  h.topRightCorner<2, 1>() = translation;
  return h;
}

AffineMap upscale_map(const AffineMap& t, double factor) {
  if (!(factor > 0.0)) throw ParameterError("upscale factor must be positive");
  return {t.linear, t.translation * factor};
}

namespace {
std::array<Eigen::Vector2d, 4> corners(int width, int height) {
  const double w = width - 1, h = height - 1;
  return {Eigen::Vector2d(0, 0), Eigen::Vector2d(w, 0), Eigen::Vector2d(0, h), Eigen::Vector2d(w, h)};
}
}  // namespace

double endpoint_error(const AffineMap& a, const AffineMap& b, int width, int height) {
  double worst = 0.0;
  for (const auto& p : corners(width, height)) worst = std::max(worst, (a(p) - b(p)).norm());
  return worst;
}

double mean_corner_error(const AffineMap& a, const AffineMap& b, int width, int height) {
  double sum = 0.0;
  for (const auto& p : corners(width, height)) sum += (a(p) - b(p)).norm();
  return sum / 4.0;
}

double overlap_fraction(const AffineMap& t, int width, int height) {
  if (width <= 0 || height <= 0) return 0.0;
  const double xmax = width - 1, ymax = height - 1;
  long inside = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Eigen::Vector2d q = t.apply(x, y);
      if (q.x() >= 0.0 && q.x() <= xmax && q.y() >= 0.0 && q.y() <= ymax) ++inside;
    }
  }
  return double(inside) / (double(width) * height);
}

void to_json(nlohmann::json& j, const AffineMap& m) {
  j = nlohmann::json{{"a", {m.linear(0, 0), m.linear(0, 1), m.linear(1, 0), m.linear(1, 1)}},
                     {"t", {m.translation.x(), m.translation.y()}}};
}

void from_json(const nlohmann::json& j, AffineMap& m) {
  const auto a = j.at("a").get<std::array<double, 4>>();
  const auto t = j.at("t").get<std::array<double, 2>>();
  m = AffineMap::from_params(a[0], a[1], a[2], a[3], t[0], t[1]);
}

}  // namespace m2m
