#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <numbers>
#include <random>

#include "m2m/affine.hpp"
#include "m2m/burst.hpp"
#include "m2m/datasets.hpp"
#include "m2m/registration.hpp"
#include "m2m/warp.hpp"

namespace m2m {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Image scene(int size, std::uint64_t seed) { return synthetic_scene(size, size, seed); }

// Random affinity about the image center: shift <= max_shift, rotation <= max_rot_deg.
AffineMap random_affinity(std::mt19937_64& rng, double max_shift, double max_rot_deg, int w, int h) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Eigen::Vector2d c(0.5 * (w - 1), 0.5 * (h - 1));
  return AffineMap::translate(max_shift * u(rng), max_shift * u(rng)) *
         AffineMap::rotation_about(max_rot_deg * kDeg * u(rng), c);
}

TEST(Affine, ComposeInverseAndJson) {
  const AffineMap a = AffineMap::from_params(1.01, 0.02, -0.03, 0.99, 2.5, -1.25);
  const AffineMap id = a * a.inverse();
  EXPECT_LT(endpoint_error(id, AffineMap::identity(), 64, 64), 1e-12);
  nlohmann::json j = a;
  EXPECT_EQ(j["a"].size(), 4u);
  EXPECT_EQ(j["t"].size(), 2u);
  const AffineMap b = j.get<AffineMap>();
  EXPECT_EQ(b.linear, a.linear);
  EXPECT_EQ(b.translation, a.translation);
}

TEST(UpscaleMap, Examples) {
  EXPECT_LT(endpoint_error(upscale_map(AffineMap::identity(), 2.0), AffineMap::identity(), 10, 10), 1e-15);
  const AffineMap t = upscale_map(AffineMap::translate(1.5, -0.25), 2.0);
  EXPECT_DOUBLE_EQ(t.translation.x(), 3.0);
  EXPECT_DOUBLE_EQ(t.translation.y(), -0.5);
  EXPECT_EQ(t.linear, Eigen::Matrix2d::Identity());
}

TEST(UpscaleMap, RotationAboutCenterScalesCenter) {
  const Eigen::Vector2d c(7.0, 5.0);
  const AffineMap half = AffineMap::rotation_about(2.0 * kDeg, c);
  const AffineMap full = upscale_map(half, 2.0);
  const AffineMap expect = AffineMap::rotation_about(2.0 * kDeg, 2.0 * c);
  for (const Eigen::Vector2d p : {Eigen::Vector2d(0, 0), Eigen::Vector2d(31, 0), Eigen::Vector2d(0, 17),
                                  Eigen::Vector2d(-4, 9)})
    EXPECT_LT((full(p) - expect(p)).norm(), 1e-12);
}

TEST(UpscaleMap, ComposesMultiplicatively) {
  const AffineMap t = AffineMap::from_params(0.98, 0.05, -0.04, 1.02, 3.25, -7.5);
  const AffineMap ab = upscale_map(upscale_map(t, 2.0), 4.0);
  const AffineMap direct = upscale_map(t, 8.0);
  EXPECT_EQ(ab.linear, direct.linear);
  EXPECT_EQ(ab.translation, direct.translation);
}

TEST(Overlap, Examples) {
  EXPECT_DOUBLE_EQ(overlap_fraction(AffineMap::identity(), 40, 30), 1.0);
  EXPECT_DOUBLE_EQ(overlap_fraction(AffineMap::translate(40, 0), 40, 30), 0.0);
  EXPECT_NEAR(overlap_fraction(AffineMap::translate(20, 0), 40, 30), 0.5, 1.0 / 40);
}

TEST(EstimateAffine, SelfRegistrationIsIdentity) {
  const Image img = scene(96, 3);
  const Registration r = estimate_affine(img, img);
  EXPECT_LT(endpoint_error(r.map, AffineMap::identity(), 96, 96), 1e-3);
}

TEST(EstimateAffine, RecoversKnownAffinity) {
  const Image src = scene(128, 4);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    const AffineMap a = random_affinity(rng, 5.0, 3.0, 128, 128);
    const Image dst = warp_bicubic_image(src, a, 128, 128, WarpBorder::Clamp);
    const Registration r = estimate_affine(src, dst);
    EXPECT_LT(mean_corner_error(r.map, a, 128, 128), 0.05) << "trial " << trial;
  }
}

TEST(EstimateAffine, NoisyPairsStayBelowFifthOfPixel) {
  const Image src = scene(128, 6);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    const AffineMap a = random_affinity(rng, 5.0, 3.0, 128, 128);
    const Image dst = warp_bicubic_image(src, a, 128, 128, WarpBorder::Clamp);
    const Registration r = estimate_affine(add_noise(src, NoiseSpec{10, false, 100u + trial}),
                                           add_noise(dst, NoiseSpec{10, false, 200u + trial}));
    EXPECT_LT(mean_corner_error(r.map, a, 128, 128), 0.2) << "trial " << trial;
  }
}

TEST(EstimateAffine, EquivarianceUnderCommonWarp) {
  const Image src = scene(128, 8);
  const Eigen::Vector2d c(63.5, 63.5);
  const AffineMap a = AffineMap::translate(1.5, -2.0) * AffineMap::rotation_about(1.0 * kDeg, c);
  const AffineMap b = AffineMap::translate(-1.0, 0.75) * AffineMap::rotation_about(-1.5 * kDeg, c);
  const Image wa = warp_bicubic_image(src, a, 128, 128);
  const Image wb = warp_bicubic_image(src, b, 128, 128);
  // wa(T(x)) = src(a(T(x))) = src(b(x)) = wb(x)  =>  T = a⁻¹ ∘ b.
  const Registration r = estimate_affine(wa, wb);
  EXPECT_LT(mean_corner_error(r.map, a.inverse() * b, 128, 128), 0.1);
}

TEST(EstimateAffine, Errors) {
  const Image img = scene(64, 9);
  EXPECT_THROW(estimate_affine(img, Image(64, 64, 3, 0.0).crop(0, 0, 32, 32)), DimensionError);
  const Image flat(64, 64, 3, 0.5);
  EXPECT_THROW(estimate_affine(flat, flat), ConvergenceError);
  RegistrationConfig strict;
  strict.min_overlap = 0.999;
  const AffineMap shift = AffineMap::translate(6.0, 0.0);
  EXPECT_THROW(estimate_affine(img, warp_bicubic_image(img, shift, 64, 64), strict), OverlapError);
  RegistrationConfig bad;
  bad.pyramid_levels = 0;
  EXPECT_THROW(bad.validate(), ParameterError);
}

TEST(EstimateAffineBayer, IdenticalFramesGiveIdentity) {
  const BayerFrame b = mosaic(scene(96, 10));
  const Registration r = estimate_affine_bayer(b, b);
  EXPECT_LT(endpoint_error(r.map, AffineMap::identity(), 96, 96), 1e-3);
}

TEST(EstimateAffineBayer, EvenIntegerTranslation) {
  const Image rgb = scene(140, 11);
  const int dx = 4, dy = -2;
  // Target samples the scene 4 px to the right and 2 px up of the input.
  const Image in = rgb.crop(6, 6, 128, 128);
  const Image tg = rgb.crop(6 + dx, 6 + dy, 128, 128);
  const Registration r = estimate_affine_bayer(mosaic(in), mosaic(tg));
  // in(T(y)) = tg(y) = in(y + d)  =>  T = translate(d).
  EXPECT_LT(endpoint_error(r.map, AffineMap::translate(dx, dy), 128, 128), 0.1);
}

TEST(EstimateAffineBayer, MatchesSimulatedGroundTruth) {
  const Image rgb = scene(176, 12);
  BurstSpec spec;
  spec.frames = 4;
  spec.max_shift = 5.0;
  spec.max_rot_deg = 3.0;
  spec.seed = 13;
  const Burst clean = simulate_burst(rgb, spec);
  spec.noise = NoiseSpec{5.0, false, 14};
  const Burst noisy = simulate_burst(rgb, spec);
  const int w = clean.frames[0].width(), h = clean.frames[0].height();
  for (int i = 1; i < spec.frames; ++i) {
    const AffineMap truth = clean.ground_truth_map(i, 0);
    EXPECT_LT(mean_corner_error(estimate_affine_bayer(clean.frames[i], clean.frames[0]).map, truth, w, h), 0.1);
    EXPECT_LT(mean_corner_error(estimate_affine_bayer(noisy.frames[i], noisy.frames[0]).map, truth, w, h), 0.3);
  }
}

TEST(EstimateAffineBayer, PatternMismatchIsRejected) {
  const Image rgb = scene(64, 15);
  EXPECT_THROW(estimate_affine_bayer(mosaic(rgb, {CfaLayout::RGGB}), mosaic(rgb, {CfaLayout::BGGR})),
               ParameterError);
}

TEST(Pyramid, HalvesAndPreservesConstants) {
  const Image flat(64, 48, 2, 0.3);
  const Image down = pyramid_down(flat);
  EXPECT_EQ(down.width(), 32);
  EXPECT_EQ(down.height(), 24);
  EXPECT_LT((down.data() - 0.3).abs().maxCoeff(), 1e-12);
}

TEST(WarpBilinear, IntegerShiftAndValidity) {
  const Image img = scene(32, 16);
  PlaneMatrix<double> valid;
  const Image out = warp_bilinear(img, AffineMap::translate(3, 1), &valid);
  for (int y = 0; y < 31; ++y)
    for (int x = 0; x < 29; ++x) {
      EXPECT_EQ(valid(y, x), 1.0);
      EXPECT_NEAR(out(1, y, x), img(1, y + 1, x + 3), 1e-12);
    }
  EXPECT_EQ(valid(0, 31), 0.0);
}

}  // namespace
}  // namespace m2m
