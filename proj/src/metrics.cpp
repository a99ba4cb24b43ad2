#include "m2m/metrics.hpp"

#include <cmath>

namespace m2m {

double mean_squared_error(const Image& a, const Image& b, int border_crop) {
  if (!a.same_shape(b)) throw ShapeError("psnr: images differ in shape");
  if (border_crop < 0) throw ParameterError("psnr: border_crop must be >= 0");
  const int w = a.width() - 2 * border_crop, h = a.height() - 2 * border_crop;
  if (w <= 0 || h <= 0) throw ShapeError("psnr: border crop removes the whole image");
  double sse = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    sse += (a.channel(c).block(border_crop, border_crop, h, w) - b.channel(c).block(border_crop, border_crop, h, w))
               .squaredNorm();
  return sse / (double(w) * h * a.channels());
}

double psnr(const Image& a, const Image& b, int border_crop) {
  const double mse = mean_squared_error(a, b, border_crop);
  if (mse == 0.0) return kInfinitePsnr;
  return -10.0 * std::log10(mse);
}

double psnr_masked(const Image& a, const Image& b, const PlaneMatrix<double>& mask) {
  if (!a.same_shape(b)) throw ShapeError("psnr: images differ in shape");
  if (mask.rows() != a.height() || mask.cols() != a.width()) throw ShapeError("psnr: mask has wrong size");
  double sse = 0.0, n = 0.0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      if (mask(y, x) == 0.0) continue;
      for (int c = 0; c < a.channels(); ++c) {
        const double d = a(c, y, x) - b(c, y, x);
        sse += d * d;
        n += 1.0;
      }
    }
  if (n == 0.0) return std::nan("");
  if (sse == 0.0) return kInfinitePsnr;
  return -10.0 * std::log10(sse / n);
}

}  // namespace m2m
