#pragma once

#include "m2m/affine.hpp"
#include "m2m/image.hpp"

namespace m2m {

struct RegistrationConfig {
  int pyramid_levels = 4;
  int max_iters_per_level = 50;
  double convergence_eps = 1e-6;
  double min_overlap = 0.5;
  /// Estimated maps with |det| outside [min_det, max_det] are rejected.
  double min_det = 0.5;
  double max_det = 2.0;
  /// Pyramid levels are dropped while the coarsest side would fall below this.
  int min_level_size = 16;

  void validate() const;
};

struct Registration {
  AffineMap map;
  bool converged = false;  ///< false: best-so-far map after exhausting iterations
  int iterations = 0;
  double residual_rms = 0.0;
};

/// Affine T with warp(src, T) ≈ dst, i.e. src(T(x)) ≈ dst(x), found by the
/// inverse compositional Gauss-Newton scheme over a Gaussian pyramid. All
/// channels add into one set of normal equations; samples whose warped
/// position leaves src are skipped.
///
/// Throws ConvergenceError on a singular Hessian, RegistrationError on a
/// degenerate determinant and OverlapError below cfg.min_overlap.
Registration estimate_affine(const Image& src, const Image& dst, const RegistrationConfig& cfg = {},
                             const AffineMap& initial = AffineMap::identity());

/// Registers two mosaics through their packed 4-phase half-resolution images;
/// the returned map is in full-resolution pixel coordinates.
Registration estimate_affine_bayer(const BayerFrame& src, const BayerFrame& dst,
                                   const RegistrationConfig& cfg = {});

/// Half-resolution map to full-resolution Bayer coordinates. Packed pixel i
/// stands for the 2×2 tile whose center is at 2i + 0.5.
AffineMap phase_map_to_full(const AffineMap& half);

Image gaussian_blur(const Image& img, double sigma);
/// Blur with std 1 then keep every other pixel (coarse i ↔ fine 2i).
Image pyramid_down(const Image& img);

/// out(x) = src(t(x)) with bilinear interpolation. Optional valid mask (1 where
/// t(x) lies inside src); outside samples are 0.
Image warp_bilinear(const Image& src, const AffineMap& t, PlaneMatrix<double>* valid = nullptr);

}  // namespace m2m
