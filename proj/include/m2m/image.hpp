#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "m2m/errors.hpp"

namespace m2m {

template <typename Scalar>
using PlaneMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Multi-channel image, channel-planar and row-major. Samples are nominally
/// in [0,1]; nothing clamps them unless asked to (see clipped()).
template <typename Scalar>
class PlanarImage {
 public:
  using Samples = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using PlaneMap = Eigen::Map<PlaneMatrix<Scalar>>;
  using ConstPlaneMap = Eigen::Map<const PlaneMatrix<Scalar>>;

  PlanarImage() = default;
  PlanarImage(int width, int height, int channels, Scalar fill = Scalar(0))
      : width_(width), height_(height), channels_(channels) {
    if (width < 0 || height < 0 || channels < 0) throw DimensionError("negative image size");
    data_ = Samples::Constant(Eigen::Index(width) * height * channels, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  Eigen::Index plane_size() const { return Eigen::Index(width_) * height_; }
  bool empty() const { return data_.size() == 0; }

  Scalar& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  Scalar operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

  PlaneMap channel(int c) { return PlaneMap(data_.data() + c * plane_size(), height_, width_); }
  ConstPlaneMap channel(int c) const {
    return ConstPlaneMap(data_.data() + c * plane_size(), height_, width_);
  }

  Samples& data() { return data_; }
  const Samples& data() const { return data_; }

  template <typename Other>
  PlanarImage<Other> cast() const {
    PlanarImage<Other> out(width_, height_, channels_);
    out.data() = data_.template cast<Other>();
    return out;
  }

  PlanarImage clipped() const {
    PlanarImage out = *this;
    out.data_ = out.data_.max(Scalar(0)).min(Scalar(1));
    return out;
  }

  bool same_shape(const PlanarImage& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  /// Sub-window [x0,x0+w)×[y0,y0+h) of every channel.
  PlanarImage crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || w < 0 || h < 0 || x0 + w > width_ || y0 + h > height_)
      throw DimensionError("crop window outside image");
    PlanarImage out(w, h, channels_);
    for (int c = 0; c < channels_; ++c) out.channel(c) = channel(c).block(y0, x0, h, w);
    return out;
  }

 private:
  Eigen::Index index(int c, int y, int x) const {
    return (Eigen::Index(c) * height_ + y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  Samples data_;
};

using Image = PlanarImage<double>;

enum class CfaLayout { RGGB, BGGR, GRBG, GBRG };

/// 2×2 Bayer tile. Colors are indexed R=0, G=1, B=2.
struct CfaPattern {
  CfaLayout layout = CfaLayout::RGGB;

  /// Color sampled at pixel (y, x).
  int color(int y, int x) const {
    static constexpr std::array<std::array<int, 4>, 4> kTiles{{
        {0, 1, 1, 2},  // RGGB
        {2, 1, 1, 0},  // BGGR
        {1, 0, 2, 1},  // GRBG
        {1, 2, 0, 1},  // GBRG
    }};
    return kTiles[static_cast<int>(layout)][(y & 1) * 2 + (x & 1)];
  }

  std::string name() const {
    switch (layout) {
      case CfaLayout::RGGB: return "RGGB";
      case CfaLayout::BGGR: return "BGGR";
      case CfaLayout::GRBG: return "GRBG";
      case CfaLayout::GBRG: return "GBRG";
    }
    return "RGGB";
  }

  static CfaPattern parse(std::string_view s) {
    if (s == "RGGB") return {CfaLayout::RGGB};
    if (s == "BGGR") return {CfaLayout::BGGR};
    if (s == "GRBG") return {CfaLayout::GRBG};
    if (s == "GBRG") return {CfaLayout::GBRG};
    throw ParameterError("unknown CFA pattern '" + std::string(s) + "'");
  }

  /// Pattern seen by a crop whose top-left corner sits at (y0, x0).
  CfaPattern shifted(int y0, int x0) const {
    for (CfaLayout l : {CfaLayout::RGGB, CfaLayout::BGGR, CfaLayout::GRBG, CfaLayout::GBRG}) {
      CfaPattern p{l};
      if (p.color(0, 0) == color(y0, x0) && p.color(0, 1) == color(y0, x0 + 1) &&
          p.color(1, 0) == color(y0 + 1, x0))
        return p;
    }
    return *this;
  }

  friend bool operator==(const CfaPattern&, const CfaPattern&) = default;
};

/// Single-channel mosaicked frame. samples is height × width.
template <typename Scalar>
struct BayerFrameT {
  PlaneMatrix<Scalar> samples;
  CfaPattern pattern;

  int width() const { return int(samples.cols()); }
  int height() const { return int(samples.rows()); }
};

using BayerFrame = BayerFrameT<double>;

/// Additive white Gaussian noise. sigma is in 8-bit units; samples live in [0,1].
struct NoiseSpec {
  double sigma = 0.0;
  bool clip = false;
  std::uint64_t seed = 0;

  double stddev() const { return sigma / 255.0; }
};

namespace detail {
inline void require_even(int w, int h, const char* what) {
  if (w % 2 != 0 || h % 2 != 0)
    throw DimensionError(std::string(what) + ": width and height must be even");
}
}  // namespace detail

template <typename Scalar>
BayerFrameT<Scalar> mosaic(const PlanarImage<Scalar>& rgb, CfaPattern pattern = {}) {
  if (rgb.channels() != 3) throw DimensionError("mosaic: expected 3 channels");
  detail::require_even(rgb.width(), rgb.height(), "mosaic");
  BayerFrameT<Scalar> out{PlaneMatrix<Scalar>(rgb.height(), rgb.width()), pattern};
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x) out.samples(y, x) = rgb(pattern.color(y, x), y, x);
  return out;
}

/// 0/1 indicator of the sampled color at each pixel, as a 3-channel image.
template <typename Scalar = double>
PlanarImage<Scalar> cfa_mask(int width, int height, CfaPattern pattern = {}) {
  PlanarImage<Scalar> m(width, height, 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m(pattern.color(y, x), y, x) = Scalar(1);
  return m;
}

template <typename Scalar>
PlanarImage<Scalar> apply_mask(const PlanarImage<Scalar>& rgb, CfaPattern pattern = {}) {
  if (rgb.channels() != 3) throw DimensionError("apply_mask: expected 3 channels");
  PlanarImage<Scalar> out = rgb;
  out.data() *= cfa_mask<Scalar>(rgb.width(), rgb.height(), pattern).data();
  return out;
}

/// Places each Bayer sample in its color channel; the other two channels are 0.
template <typename Scalar>
PlanarImage<Scalar> embed_mosaic(const BayerFrameT<Scalar>& b) {
  PlanarImage<Scalar> out(b.width(), b.height(), 3);
  for (int y = 0; y < b.height(); ++y)
    for (int x = 0; x < b.width(); ++x) out(b.pattern.color(y, x), y, x) = b.samples(y, x);
  return out;
}

/// Channel k = 2·dy + dx holds the samples at offset (dy, dx) of every 2×2 tile.
template <typename Scalar>
PlanarImage<Scalar> pack_phases(const BayerFrameT<Scalar>& b) {
  detail::require_even(b.width(), b.height(), "pack_phases");
  const int w = b.width() / 2, h = b.height() / 2;
  PlanarImage<Scalar> out(w, h, 4);
  for (int k = 0; k < 4; ++k) {
    const int dy = k / 2, dx = k % 2;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(k, y, x) = b.samples(2 * y + dy, 2 * x + dx);
  }
  return out;
}

template <typename Scalar>
BayerFrameT<Scalar> unpack_phases(const PlanarImage<Scalar>& phases, CfaPattern pattern = {}) {
  if (phases.channels() != 4) throw DimensionError("unpack_phases: expected 4 channels");
  BayerFrameT<Scalar> out{PlaneMatrix<Scalar>(2 * phases.height(), 2 * phases.width()), pattern};
  for (int k = 0; k < 4; ++k) {
    const int dy = k / 2, dx = k % 2;
    for (int y = 0; y < phases.height(); ++y)
      for (int x = 0; x < phases.width(); ++x)
        out.samples(2 * y + dy, 2 * x + dx) = phases(k, y, x);
  }
  return out;
}

/// Bilinear demosaicking as a normalized convolution over the 3×3 neighborhood:
/// each missing color is the weighted mean of the in-bounds samples of that
/// color, with the classic bilinear weights (cross for green, tent for red
/// and blue). Interior pixels match the textbook kernels exactly; border pixels
/// renormalize over the samples that exist.
template <typename Scalar>
PlanarImage<Scalar> demosaic_bilinear(const BayerFrameT<Scalar>& b) {
  detail::require_even(b.width(), b.height(), "demosaic_bilinear");
  static constexpr double kGreen[3][3] = {{0, .25, 0}, {.25, 1, .25}, {0, .25, 0}};
  static constexpr double kRedBlue[3][3] = {{.25, .5, .25}, {.5, 1, .5}, {.25, .5, .25}};
  const int w = b.width(), h = b.height();
  PlanarImage<Scalar> out(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::array<double, 3> acc{}, norm{};
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          const int c = b.pattern.color(yy, xx);
          const double wt = (c == 1 ? kGreen : kRedBlue)[dy + 1][dx + 1];
          acc[c] += wt * double(b.samples(yy, xx));
          norm[c] += wt;
        }
      }
      for (int c = 0; c < 3; ++c) out(c, y, x) = Scalar(norm[c] > 0 ? acc[c] / norm[c] : 0.0);
    }
  }
  return out;
}

namespace detail {
template <typename Derived>
void add_noise_inplace(Eigen::DenseBase<Derived>& samples, const NoiseSpec& spec) {
  if (!(spec.sigma >= 0.0)) throw ParameterError("noise sigma must be >= 0");
  if (spec.sigma == 0.0 && !spec.clip) return;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, spec.stddev());
  using Scalar = typename Derived::Scalar;
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    double v = double(samples.derived().data()[i]);
    if (spec.sigma > 0.0) v += normal(rng);
    if (spec.clip) v = std::clamp(v, 0.0, 1.0);
    samples.derived().data()[i] = Scalar(v);
  }
}
}  // namespace detail

template <typename Scalar>
PlanarImage<Scalar> add_noise(PlanarImage<Scalar> x, const NoiseSpec& spec) {
  detail::add_noise_inplace(x.data(), spec);
  return x;
}

template <typename Scalar>
BayerFrameT<Scalar> add_noise(BayerFrameT<Scalar> b, const NoiseSpec& spec) {
  detail::add_noise_inplace(b.samples, spec);
  return b;
}

/// Mean over channels; used for grayscale experiments.
template <typename Scalar>
PlanarImage<Scalar> to_gray(const PlanarImage<Scalar>& img) {
  PlanarImage<Scalar> out(img.width(), img.height(), 1);
  for (int c = 0; c < img.channels(); ++c) out.channel(0) += img.channel(c);
  out.data() /= Scalar(std::max(1, img.channels()));
  return out;
}

}  // namespace m2m
