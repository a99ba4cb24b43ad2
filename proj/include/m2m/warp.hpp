#pragma once

#include <span>
#include <vector>

#include "m2m/affine.hpp"
#include "m2m/graph.hpp"

namespace m2m {

/// Catmull-Rom cubic convolution kernel (a = −0.5) at distance x.
double cubic_kernel(double x);

/// Per-pixel definedness of a warped image: (N, 1, H, W), 1 where the whole
/// 4×4 bicubic footprint of the source position lies inside the source.
template <typename Scalar>
using WarpMask = Tensor<Scalar>;

template <typename Scalar>
struct Warped {
  Var<Scalar> image;
  WarpMask<Scalar> mask;
};

/// out(n, c, y, x) = bicubic sample of img(n, c) at maps[n](x, y); 0 where the
/// footprint leaves the source. `maps` holds one map per batch element or a
/// single shared map. Gradients flow to img only.
template <typename Scalar>
Warped<Scalar> warp_bicubic(Var<Scalar> img, std::span<const AffineMap> maps, int out_height, int out_width);

/// Same-size convenience overload with one shared map.
template <typename Scalar>
Warped<Scalar> warp_bicubic(Var<Scalar> img, const AffineMap& map) {
  return warp_bicubic(img, std::span<const AffineMap>(&map, 1), img.value().height(), img.value().width());
}

enum class WarpBorder { Zero, Clamp };

/// Bicubic resampling of a plain image: out(x) = img(map(x)). With Clamp,
/// out-of-range taps replicate the nearest edge sample.
Image warp_bicubic_image(const Image& img, const AffineMap& map, int out_width, int out_height,
                         WarpBorder border = WarpBorder::Clamp);

extern template Warped<float> warp_bicubic(Var<float>, std::span<const AffineMap>, int, int);
extern template Warped<double> warp_bicubic(Var<double>, std::span<const AffineMap>, int, int);

}  // namespace m2m
