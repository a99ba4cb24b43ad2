#pragma once

#include <limits>

#include "m2m/image.hpp"

namespace m2m {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10·log10(1 / MSE) over all channels after dropping `border_crop` pixels per
/// side. Returns kInfinitePsnr for identical crops.
double psnr(const Image& a, const Image& b, int border_crop = 0);

/// PSNR restricted to pixels where mask (height × width) is nonzero; all
/// channels of those pixels count. Returns NaN when the mask is empty.
double psnr_masked(const Image& a, const Image& b, const PlaneMatrix<double>& mask);

double mean_squared_error(const Image& a, const Image& b, int border_crop = 0);

}  // namespace m2m
