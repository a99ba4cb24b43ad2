#include "m2m/warp.hpp"

#include <array>
#include <cmath>

namespace m2m {

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace {

struct Footprint {
  int x0, y0;  // top-left tap
  std::array<double, 4> wx, wy;
};

inline Footprint footprint(const Eigen::Vector2d& q) {
  const double fx = std::floor(q.x()), fy = std::floor(q.y());
  const double tx = q.x() - fx, ty = q.y() - fy;
  Footprint f{int(fx) - 1, int(fy) - 1, {}, {}};
  for (int i = 0; i < 4; ++i) {
    f.wx[i] = cubic_kernel(tx + 1.0 - i);
    f.wy[i] = cubic_kernel(ty + 1.0 - i);
  }
  return f;
}

inline bool interior(const Footprint& f, int w, int h) {
  return f.x0 >= 0 && f.y0 >= 0 && f.x0 + 3 <= w - 1 && f.y0 + 3 <= h - 1;
}

}  // namespace

template <typename Scalar>
Warped<Scalar> warp_bicubic(Var<Scalar> img, std::span<const AffineMap> maps, int out_height, int out_width) {
  const Tensor<Scalar>& src = img.value();
  const int n_batch = src.batch(), ch = src.channels(), h = src.height(), w = src.width();
  if (maps.size() != 1 && maps.size() != std::size_t(n_batch))
    throw ShapeError("warp_bicubic: need one map or one per batch element");
  for (const auto& m : maps)
    if (!m.invertible()) throw MapError("warp_bicubic: singular map");

  Tensor<Scalar> out({n_batch, ch, out_height, out_width});
  Tensor<Scalar> mask({n_batch, 1, out_height, out_width});
  for (int n = 0; n < n_batch; ++n) {
    const AffineMap& map = maps.size() == 1 ? maps[0] : maps[std::size_t(n)];
    for (int y = 0; y < out_height; ++y)
      for (int x = 0; x < out_width; ++x) {
        const Footprint f = footprint(map.apply(x, y));
        if (!interior(f, w, h)) continue;
        mask(n, 0, y, x) = Scalar(1);
        for (int c = 0; c < ch; ++c) {
          double acc = 0.0;
          for (int i = 0; i < 4; ++i) {
            double row = 0.0;
            for (int j = 0; j < 4; ++j) row += f.wx[j] * double(src(n, c, f.y0 + i, f.x0 + j));
            acc += f.wy[i] * row;
          }
          out(n, c, y, x) = Scalar(acc);
        }
      }
  }

  std::vector<AffineMap> kept(maps.begin(), maps.end());
  Graph<Scalar>& g = *img.graph;
  Var<Scalar> self{&g, int(g.size())};
  Var<Scalar> result =
      g.record(std::move(out), img.requires_grad(), [img, self, kept = std::move(kept)](Graph<Scalar>& g) {
        const Tensor<Scalar>& gy = g.grad(self);
        Tensor<Scalar>& gx = g.grad(img);
        const int n_batch = gy.batch(), ch = gy.channels(), oh = gy.height(), ow = gy.width();
        const int w = gx.width(), h = gx.height();
        for (int n = 0; n < n_batch; ++n) {
          const AffineMap& map = kept.size() == 1 ? kept[0] : kept[std::size_t(n)];
          for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
              const Footprint f = footprint(map.apply(x, y));
              if (!interior(f, w, h)) continue;
              for (int c = 0; c < ch; ++c) {
                const double gv = double(gy(n, c, y, x));
                if (gv == 0.0) continue;
                for (int i = 0; i < 4; ++i)
                  for (int j = 0; j < 4; ++j) gx(n, c, f.y0 + i, f.x0 + j) += Scalar(gv * f.wy[i] * f.wx[j]);
              }
            }
        }
      });
  return {result, std::move(mask)};
}

template Warped<float> warp_bicubic(Var<float>, std::span<const AffineMap>, int, int);
template Warped<double> warp_bicubic(Var<double>, std::span<const AffineMap>, int, int);

Image warp_bicubic_image(const Image& img, const AffineMap& map, int out_width, int out_height, WarpBorder border) {
  if (!map.invertible()) throw MapError("warp_bicubic_image: singular map");
  const int w = img.width(), h = img.height();
  Image out(out_width, out_height, img.channels());
  for (int y = 0; y < out_height; ++y)
    for (int x = 0; x < out_width; ++x) {
      const Footprint f = footprint(map.apply(x, y));
      const bool inside = interior(f, w, h);
      if (!inside && border == WarpBorder::Zero) continue;
      for (int c = 0; c < img.channels(); ++c) {
        const auto plane = img.channel(c);
        double acc = 0.0;
        for (int i = 0; i < 4; ++i) {
          const int yy = std::clamp(f.y0 + i, 0, h - 1);
          double row = 0.0;
          for (int j = 0; j < 4; ++j) row += f.wx[j] * plane(yy, std::clamp(f.x0 + j, 0, w - 1));
          acc += f.wy[i] * row;
        }
        out(c, y, x) = acc;
      }
    }
  return out;
}

}  // namespace m2m
