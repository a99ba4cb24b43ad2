#include "m2m/registration.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <vector>

namespace m2m {

void RegistrationConfig::validate() const {
  if (pyramid_levels < 1) throw ParameterError("pyramid_levels must be >= 1");
  if (max_iters_per_level < 1) throw ParameterError("max_iters_per_level must be >= 1");
  if (!(min_overlap > 0.0 && min_overlap <= 1.0)) throw ParameterError("min_overlap must lie in (0,1]");
  if (!(convergence_eps > 0.0)) throw ParameterError("convergence_eps must be positive");
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = int(std::ceil(3.0 * sigma));
  Eigen::VectorXd k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  k /= k.sum();

  const int w = img.width(), h = img.height();
  auto clampi = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };
  Image tmp(w, h, img.channels()), out(w, h, img.channels());
  for (int c = 0; c < img.channels(); ++c) {
    const auto src = img.channel(c);
    auto t = tmp.channel(c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * src(y, clampi(x + i, 0, w - 1));
        t(y, x) = s;
      }
    auto o = out.channel(c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * t(clampi(y + i, 0, h - 1), x);
        o(y, x) = s;
      }
  }
  return out;
}

Image pyramid_down(const Image& img) {
  const Image blurred = gaussian_blur(img, 1.0);
  const int w = (img.width() + 1) / 2, h = (img.height() + 1) / 2;
  Image out(w, h, img.channels());
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(c, y, x) = blurred(c, 2 * y, 2 * x);
  return out;
}

namespace {

// Bilinear sample at (u, v); the caller guarantees 0 <= u <= w-1, 0 <= v <= h-1.
inline double bilinear(const Image::ConstPlaneMap& p, double u, double v) {
  const int w = int(p.cols()), h = int(p.rows());
  int x0 = std::min(int(u), w - 2), y0 = std::min(int(v), h - 2);
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  const double fx = u - x0, fy = v - y0;
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  return (1 - fy) * ((1 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1 - fx) * p(y1, x0) + fx * p(y1, x1));
}

inline bool inside(double u, double v, int w, int h) {
  return u >= 0.0 && v >= 0.0 && u <= w - 1 && v <= h - 1;
}

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

// Affine with parameters p = (a11-1, a12, a21, a22-1, tx, ty).
AffineMap params_to_map(const Vector6d& p) {
  return AffineMap::from_params(1 + p[0], p[1], p[2], 1 + p[3], p[4], p[5]);
}

struct LevelResult {
  AffineMap map;
  bool converged;
  int iterations;
  double rms;
};

LevelResult align_level(const Image& src, const Image& dst, AffineMap map, const RegistrationConfig& cfg) {
  const int w = dst.width(), h = dst.height(), nc = dst.channels();

  // Template gradients (central differences); border pixels carry no gradient.
  std::vector<PlaneMatrix<double>> gx(nc), gy(nc);
  for (int c = 0; c < nc; ++c) {
    const auto t = dst.channel(c);
    gx[c] = PlaneMatrix<double>::Zero(h, w);
    gy[c] = PlaneMatrix<double>::Zero(h, w);
    for (int y = 1; y < h - 1; ++y)
      for (int x = 1; x < w - 1; ++x) {
        gx[c](y, x) = 0.5 * (t(y, x + 1) - t(y, x - 1));
        gy[c](y, x) = 0.5 * (t(y + 1, x) - t(y - 1, x));
      }
  }

  LevelResult best{map, false, 0, std::numeric_limits<double>::infinity()};
  for (int it = 0; it < cfg.max_iters_per_level; ++it) {
    Matrix6d hessian = Matrix6d::Zero();
    Vector6d rhs = Vector6d::Zero();
    double sse = 0.0;
    long count = 0;
    for (int y = 1; y < h - 1; ++y) {
      for (int x = 1; x < w - 1; ++x) {
        const Eigen::Vector2d q = map.apply(x, y);
        if (!inside(q.x(), q.y(), src.width(), src.height())) continue;
        for (int c = 0; c < nc; ++c) {
          const double err = bilinear(src.channel(c), q.x(), q.y()) - dst(c, y, x);
          const double ix = gx[c](y, x), iy = gy[c](y, x);
          Vector6d sd;
          sd << ix * x, ix * y, iy * x, iy * y, ix, iy;
          hessian.selfadjointView<Eigen::Lower>().rankUpdate(sd);
          rhs += sd * err;
          sse += err * err;
          ++count;
        }
      }
    }
    if (count == 0) throw OverlapError("registration: no overlapping pixels");
    hessian = hessian.selfadjointView<Eigen::Lower>();
    const double rms = std::sqrt(sse / double(count));
    if (rms < best.rms) best = {map, false, it, rms};

    Eigen::SelfAdjointEigenSolver<Matrix6d> eig(hessian, Eigen::EigenvaluesOnly);
    const double lmax = eig.eigenvalues().maxCoeff(), lmin = eig.eigenvalues().minCoeff();
    if (!(lmax > 0.0) || lmin <= lmax * 1e-14)
      throw ConvergenceError("registration: singular Hessian (image lacks gradient energy)");

    const Vector6d delta = hessian.ldlt().solve(rhs);
    map = map * params_to_map(delta).inverse();
    if (delta.norm() < cfg.convergence_eps) {
      best = {map, true, it + 1, rms};
      return best;
    }
    best.iterations = it + 1;
  }
  // Evaluate the last update too so the best-so-far choice is complete.
  return best;
}

}  // namespace

Registration estimate_affine(const Image& src, const Image& dst, const RegistrationConfig& cfg,
                             const AffineMap& initial) {
  cfg.validate();
  if (!src.same_shape(dst)) throw DimensionError("estimate_affine: images differ in shape");
  if (src.width() < 32 || src.height() < 32) throw DimensionError("estimate_affine: images smaller than 32x32");

  std::vector<Image> src_pyr{src}, dst_pyr{dst};
  for (int l = 1; l < cfg.pyramid_levels; ++l) {
    const Image& s = src_pyr.back();
    if ((s.width() + 1) / 2 < cfg.min_level_size || (s.height() + 1) / 2 < cfg.min_level_size) break;
    src_pyr.push_back(pyramid_down(s));
    dst_pyr.push_back(pyramid_down(dst_pyr.back()));
  }

  const int levels = int(src_pyr.size());
  AffineMap map = upscale_map(initial, std::ldexp(1.0, -(levels - 1)));
  Registration result;
  for (int l = levels - 1; l >= 0; --l) {
    const LevelResult r = align_level(src_pyr[l], dst_pyr[l], map, cfg);
    result.iterations += r.iterations;
    map = r.map;
    if (l == 0) {
      result.converged = r.converged;
      result.residual_rms = r.rms;
    } else {
      map = upscale_map(map, 2.0);
    }
  }
  result.map = map;

  const double det = map.determinant();
  if (!(std::abs(det) >= cfg.min_det && std::abs(det) <= cfg.max_det))
    throw RegistrationError("registration: degenerate map (|det| = " + std::to_string(std::abs(det)) + ")");
  const double overlap = overlap_fraction(map, src.width(), src.height());
  if (overlap < cfg.min_overlap)
    throw OverlapError("registration: overlap " + std::to_string(overlap) + " below minimum");
  return result;
}

AffineMap phase_map_to_full(const AffineMap& half) {
  return AffineMap::translate(0.5, 0.5) * upscale_map(half, 2.0) * AffineMap::translate(-0.5, -0.5);
}

Registration estimate_affine_bayer(const BayerFrame& src, const BayerFrame& dst, const RegistrationConfig& cfg) {
  if (!(src.pattern == dst.pattern)) throw ParameterError("estimate_affine_bayer: CFA patterns differ");
  Registration r = estimate_affine(pack_phases(src), pack_phases(dst), cfg);
  r.map = phase_map_to_full(r.map);
  return r;
}

Image warp_bilinear(const Image& src, const AffineMap& t, PlaneMatrix<double>* valid) {
  Image out(src.width(), src.height(), src.channels());
  if (valid) *valid = PlaneMatrix<double>::Zero(src.height(), src.width());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x) {
      const Eigen::Vector2d q = t.apply(x, y);
      if (!inside(q.x(), q.y(), src.width(), src.height())) continue;
      if (valid) (*valid)(y, x) = 1.0;
      for (int c = 0; c < src.channels(); ++c) out(c, y, x) = bilinear(src.channel(c), q.x(), q.y());
    }
  return out;
}

}  // namespace m2m
