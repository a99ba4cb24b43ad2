#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "m2m/burst.hpp"
#include "m2m/datasets.hpp"
#include "m2m/metrics.hpp"
#include "m2m/training.hpp"
#include "m2m/warp.hpp"

namespace m2m {
namespace {

using T = Tensor<double>;

T random_tensor(T::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  T t(shape);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.values()[i] = u(rng);
  return t;
}

NetSpec tiny_demosaick() {
  NetSpec s = NetSpec::demosaick_default();
  s.body_layers = 2;
  s.features = 8;
  return s;
}

NetSpec tiny_denoise() {
  NetSpec s = NetSpec::denoise_default();
  s.body_layers = 3;
  s.features = 8;
  return s;
}

void perturb(NetParams<float>& p, std::uint64_t seed, float sd) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, sd);
  for (auto& t : p.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.values()[i] += n(rng);
}

double loss_value(NetParams<float> params, const BurstPair& pair, int p, Mode mode) {
  Graph<float> g;
  const auto vars = bind_params(g, params, false);
  return double(m2m_loss(params, vars, pair, p, mode).value().values()[0]);
}

// ---- warp_bicubic ----

TEST(WarpBicubic, IdentityCopiesAndMasksBorder) {
  Graph<double> g;
  const T img = random_tensor({1, 3, 10, 12}, 1);
  const auto w = warp_bicubic(g.leaf(img), AffineMap::identity());
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 12; ++x) {
      const bool inner = y >= 2 && y < 8 && x >= 2 && x < 10;
      if (inner) EXPECT_EQ(w.mask(0, 0, y, x), 1.0);
      if (y == 0 || x == 0 || y == 9 || x == 11) EXPECT_EQ(w.mask(0, 0, y, x), 0.0);
      if (w.mask(0, 0, y, x) == 0.0) continue;
      for (int c = 0; c < 3; ++c) EXPECT_NEAR(w.image.value()(0, c, y, x), img(0, c, y, x), 1e-6);
    }
}

TEST(WarpBicubic, IntegerTranslationIsExactShift) {
  Graph<double> g;
  const T img = random_tensor({1, 2, 12, 12}, 2);
  const auto w = warp_bicubic(g.leaf(img), AffineMap::translate(3, -2));
  int inside = 0;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) {
      if (w.mask(0, 0, y, x) == 0.0) continue;
      ++inside;
      for (int c = 0; c < 2; ++c) EXPECT_NEAR(w.image.value()(0, c, y, x), img(0, c, y - 2, x + 3), 1e-12);
    }
  EXPECT_GT(inside, 0);
}

TEST(WarpBicubic, MaskIsSoundAgainstGarbageOutsideTheDomain) {
  // Pixels the mask admits must not depend on anything outside the source:
  // surround the source with random garbage and the admitted outputs must not move.
  constexpr int kPad = 4;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = 7 + trial % 5, h = 6 + trial % 4;
    const AffineMap map = AffineMap::translate(2.0 * u(rng), 2.0 * u(rng)) *
                          AffineMap::rotation_about(0.3 * u(rng), {0.5 * w, 0.5 * h}, 1.0 + 0.1 * u(rng));
    const T small = random_tensor({1, 1, h, w}, 10u + trial);
    T big = random_tensor({1, 1, h + 2 * kPad, w + 2 * kPad}, 100u + trial);
    big.values() *= 50.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) big(0, 0, y + kPad, x + kPad) = small(0, 0, y, x);
    Graph<double> g;
    const auto ws = warp_bicubic(g.leaf(small), std::span<const AffineMap>(&map, 1), h, w);
    const AffineMap shifted = AffineMap::translate(kPad, kPad) * map;
    const auto wb = warp_bicubic(g.leaf(big), std::span<const AffineMap>(&shifted, 1), h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (ws.mask(0, 0, y, x) == 0.0) continue;
        // Brute-force footprint enumeration: every tap lies inside the source.
        const Eigen::Vector2d q = map.apply(x, y);
        for (int i = -1; i <= 2; ++i)
          for (int j = -1; j <= 2; ++j) {
            const int ty = int(std::floor(q.y())) + i, tx = int(std::floor(q.x())) + j;
            EXPECT_TRUE(ty >= 0 && ty < h && tx >= 0 && tx < w);
          }
        EXPECT_NEAR(ws.image.value()(0, 0, y, x), wb.image.value()(0, 0, y, x), 1e-12);
      }
  }
}

TEST(WarpBicubic, SingularMapIsRejected) {
  Graph<double> g;
  EXPECT_THROW(warp_bicubic(g.leaf(T({1, 1, 8, 8})), AffineMap::from_params(1, 1, 1, 1, 0, 0)), MapError);
}

// ---- m2m_loss ----

TEST(M2mLoss, SelfConsistentTargetGivesZero) {
  NetParams<float> p = build_demosaick_net(tiny_demosaick(), 4);
  perturb(p, 5, 0.002f);
  const BayerFrame input = mosaic(synthetic_scene(32, 32, 6));
  const Image own = forward_demosaick(p, input, Mode::Eval).clipped();
  ASSERT_GT((own.data() - demosaic_bilinear(input).data()).abs().maxCoeff(), 1e-4);
  const BurstPair pair{input, mosaic(own), AffineMap::identity(), true};
  const double l = loss_value(p, pair, 2, Mode::Eval);
  EXPECT_LT(l, 1e-6);
}

TEST(M2mLoss, ZeroWeightsMatchDirectReference) {
  NetParams<float> p = build_demosaick_net(tiny_demosaick(), 7);
  p.set_zero();
  const Image rgb = synthetic_scene(24, 24, 8);
  // The target's pattern differs from the input's, so the bilinear base is
  // compared at positions where it interpolated.
  const BayerFrame input = mosaic(rgb, {CfaLayout::RGGB});
  const BayerFrame target = mosaic(rgb, {CfaLayout::GRBG});
  const Image base = demosaic_bilinear(input);
  for (int pnorm : {1, 2}) {
    double acc = 0.0;
    int count = 0;
    for (int y = 1; y <= 24 - 3; ++y)
      for (int x = 1; x <= 24 - 3; ++x) {
        const double d = base(target.pattern.color(y, x), y, x) - target.samples(y, x);
        acc += pnorm == 1 ? std::abs(d) : d * d;
        ++count;
      }
    const double reference = acc / count;
    const double l = loss_value(p, BurstPair{input, target, AffineMap::identity(), true}, pnorm, Mode::Train);
    EXPECT_GT(reference, 1e-4);
    EXPECT_NEAR(l, reference, 1e-6 * std::max(1.0, reference)) << "p=" << pnorm;
  }
}

TEST(M2mLoss, DecreasesUnderAdamOnAFixedPair) {
  const Image rgb = synthetic_scene(96, 96, 9);
  BurstSpec spec;
  spec.frames = 2;
  spec.seed = 10;
  const Burst burst = simulate_burst(rgb, spec);
  const BurstPair pair{burst.frames[1], burst.frames[0], burst.ground_truth_map(1, 0), true};
  NetParams<float> p = build_demosaick_net(tiny_demosaick(), 11);
  AdamState<float> adam;
  adam.learning_rate = 1e-3;
  std::vector<double> losses;
  for (int k = 0; k < 100; ++k)
    losses.push_back(train_step(p, adam, [&](NetParams<float>& q, const std::vector<Var<float>>& vars) {
      return m2m_loss(q, vars, pair, 2, Mode::Train);
    }));
  int down = 0;
  for (std::size_t k = 1; k < losses.size(); ++k) down += losses[k] < losses[k - 1];
  EXPECT_GE(down, 80);
  // The untrained net is the bilinear base, so the first loss is the bilinear loss.
  EXPECT_LT(losses.back(), 0.9 * losses.front());
}

TEST(M2mLoss, InvalidPairAndEmptyMaskAreRejected) {
  NetParams<float> p = build_demosaick_net(tiny_demosaick(), 12);
  const BayerFrame b = mosaic(synthetic_scene(16, 16, 13));
  EXPECT_THROW(loss_value(p, BurstPair{b, b, AffineMap::identity(), false}, 1, Mode::Eval), ParameterError);
  EXPECT_THROW(loss_value(p, BurstPair{b, b, AffineMap::translate(100, 0), true}, 1, Mode::Eval),
               DegenerateLossError);
}

TEST(SamplePatchPair, IntegerShiftStaysConsistentInCropCoordinates) {
  const Image rgb = synthetic_scene(100, 100, 14);
  const BayerFrame input = mosaic(rgb.crop(4, 4, 80, 80));
  const BayerFrame target = mosaic(rgb.crop(6, 2, 80, 80));
  const AffineMap map = AffineMap::translate(2, -2);  // input(map(y)) = target(y)
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const BurstPair pr = sample_patch_pair(input, target, map, 32, rng);
    ASSERT_EQ(pr.target.width(), 32);
    ASSERT_EQ(pr.target.height(), 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const Eigen::Vector2d q = pr.map.apply(x, y);
        const int qx = int(std::lround(q.x())), qy = int(std::lround(q.y()));
        if (qx < 0 || qy < 0 || qx >= pr.input.width() || qy >= pr.input.height()) continue;
        EXPECT_EQ(pr.input.samples(qy, qx), pr.target.samples(y, x));
        EXPECT_EQ(pr.input.pattern.color(qy, qx), pr.target.pattern.color(y, x));
      }
  }
}

// ---- burst simulation and schedule ----

TEST(SimulateBurst, ZeroMotionNoiselessGivesIdenticalFrames) {
  BurstSpec spec;
  spec.frames = 2;
  spec.max_shift = 0;
  spec.max_rot_deg = 0;
  spec.max_scale_shear = 0;
  const Burst b = simulate_burst(synthetic_scene(64, 64, 16), spec);
  ASSERT_EQ(b.frames.size(), 2u);
  EXPECT_EQ(b.frames[0].samples, b.frames[1].samples);
  EXPECT_LT(endpoint_error(b.ground_truth_map(1, 0), AffineMap::identity(), 64, 64), 1e-12);
}

TEST(SimulateBurst, NoiseStdWithinFivePercent) {
  BurstSpec spec;
  spec.frames = 3;
  spec.seed = 17;
  const Image rgb = synthetic_scene(200, 200, 18);
  const Burst clean = simulate_burst(rgb, spec);
  spec.noise = NoiseSpec{5.0, false, 19};
  const Burst noisy = simulate_burst(rgb, spec);
  for (std::size_t i = 0; i < clean.frames.size(); ++i) {
    const Eigen::ArrayXXd d = (noisy.frames[i].samples - clean.frames[i].samples).array();
    const double sd = std::sqrt((d - d.mean()).square().sum() / double(d.size() - 1));
    EXPECT_NEAR(sd, 5.0 / 255.0, 0.05 * 5.0 / 255.0) << "frame " << i;
  }
}

TEST(SimulateBurst, DiskRoundTrip) {
  BurstSpec spec;
  spec.frames = 3;
  spec.seed = 20;
  spec.noise.sigma = 5;
  const Burst b = simulate_burst(synthetic_scene(64, 64, 21), spec);
  const auto dir = std::filesystem::temp_directory_path() / "m2m_burst_test";
  std::filesystem::remove_all(dir);
  write_burst(dir, b);
  const Burst r = read_burst(dir);
  ASSERT_EQ(r.frames.size(), b.frames.size());
  EXPECT_EQ(r.reference, b.reference);
  EXPECT_DOUBLE_EQ(r.sigma, b.sigma);
  ASSERT_EQ(r.to_reference.size(), b.to_reference.size());
  for (std::size_t i = 0; i < b.frames.size(); ++i)
    EXPECT_LE((r.frames[i].samples - b.frames[i].samples.cwiseMax(0.0).cwiseMin(1.0)).cwiseAbs().maxCoeff(),
              0.5 / 65535.0 + 1e-12);
  std::filesystem::remove_all(dir);
}

TEST(PairSchedule, CardinalityOrderAndReferenceLast) {
  for (int n : {2, 3, 10})
    for (int ref : {0, n / 2, n - 1}) {
      const PairSchedule s = PairSchedule::lexicographic(n, ref);
      ASSERT_EQ(int(s.size()), n * (n - 1));
      std::vector<std::pair<int, int>> sorted = s.pairs;
      std::sort(sorted.begin(), sorted.end());
      EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
      for (const auto& [i, j] : s.pairs) EXPECT_NE(i, j);
      // Final block: the reference as input.
      for (int k = 0; k < n - 1; ++k) EXPECT_EQ(s.pairs[s.size() - 1 - k].first, ref);
      // Everything before it is lexicographic.
      EXPECT_TRUE(std::is_sorted(s.pairs.begin(), s.pairs.end() - (n - 1)));
    }
  EXPECT_EQ(PairSchedule::lexicographic(10, 0).size(), 90u);
  EXPECT_THROW(PairSchedule::lexicographic(1, 0), ParameterError);
}

// ---- fine-tuning ----

TEST(FinetuneBurst, IdenticalFramesKeepTraceFlat) {
  const Image rgb = synthetic_scene(48, 48, 22);
  const BayerFrame f = mosaic(rgb);
  const std::vector<BayerFrame> burst(3, f);
  TrainConfig cfg = TrainConfig::finetune_defaults();
  cfg.patch_size = 32;
  const std::vector<AffineMap> maps(6, AffineMap::identity());
  const FinetuneResult r =
      finetune_burst(build_demosaick_net(tiny_demosaick(), 23), burst, 0, cfg, 2, {}, &rgb, &maps);
  ASSERT_EQ(r.trace.size(), 7u);
  EXPECT_EQ(r.trace.front().pair_index, 0);
  EXPECT_EQ(r.pairs_used, 6);
  for (std::size_t k = 1; k < r.trace.size(); ++k) {
    EXPECT_GE(r.trace[k].psnr_db, r.trace[k - 1].psnr_db - 0.1);
    EXPECT_EQ(r.trace[k].pair_index, int(k));
  }
  EXPECT_EQ(r.trace.back().input_index, 0);
}

TEST(FinetuneBurst, NoValidPairIsRegistrationError) {
  const BayerFrame f = mosaic(synthetic_scene(32, 32, 24));
  const std::vector<BayerFrame> burst(2, f);
  const std::vector<AffineMap> far(2, AffineMap::translate(1000, 0));
  EXPECT_THROW(finetune_burst(build_demosaick_net(tiny_demosaick()), burst, 0, TrainConfig::finetune_defaults(), 1,
                              {}, nullptr, &far),
               RegistrationError);
}

TEST(FinetuneBurst, DeterministicForFixedSeed) {
  BurstSpec spec;
  spec.frames = 3;
  spec.seed = 25;
  spec.noise = NoiseSpec{5, false, 26};
  const Burst b = simulate_burst(synthetic_scene(96, 96, 27), spec);
  TrainConfig cfg = TrainConfig::finetune_defaults();
  cfg.patch_size = 32;
  cfg.learning_rate = 1e-3;
  NetParams<float> net = build_demosaick_net(tiny_demosaick(), 28);
  const FinetuneResult a = finetune_burst(net, b.frames, 0, cfg, 2, {}, &*b.clean_reference);
  const FinetuneResult c = finetune_burst(net, b.frames, 0, cfg, 2, {}, &*b.clean_reference);
  ASSERT_EQ(a.trace.size(), c.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) EXPECT_EQ(a.trace[k].psnr_db, c.trace[k].psnr_db);
  for (std::size_t i = 0; i < a.params.tensors.size(); ++i)
    EXPECT_TRUE((a.params.tensors[i].values() == c.params.tensors[i].values()).all());
  for (const auto& r : a.registrations) EXPECT_TRUE(r.valid) << r.note;
}

// ---- pretraining ----

TrainConfig toy_pretrain() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.steps_per_epoch = 3;
  cfg.lr_drop_epochs = {1};
  cfg.batch_size = 2;
  cfg.patch_size = 16;
  cfg.learning_rate = 1e-3;
  cfg.seed = 29;
  return cfg;
}

TEST(Pretrain, ZeroLearningRateLeavesParamsAndLogFlat) {
  const auto data = synthetic_dataset(2, 48, 48, 30);
  const auto val = synthetic_dataset(1, 48, 48, 31);
  TrainConfig cfg = toy_pretrain();
  cfg.learning_rate = 0.0;
  cfg.bn_train_mode = false;
  const NetParams<float> init = build_demosaick_net(tiny_demosaick(), 32);
  for (PretrainMode mode : {PretrainMode::GroundTruth, PretrainMode::MosaicToMosaic}) {
    const PretrainResult r = pretrain(data, cfg, mode, init, val);
    for (std::size_t i = 0; i < init.tensors.size(); ++i)
      EXPECT_TRUE((r.params.tensors[i].values() == init.tensors[i].values()).all());
    for (double db : r.psnr_log) EXPECT_EQ(db, r.initial_psnr);
  }
}

TEST(Pretrain, IdenticalSeedsGiveBitIdenticalTraces) {
  const auto data = synthetic_dataset(2, 48, 48, 33);
  const auto val = synthetic_dataset(1, 48, 48, 34);
  const NetParams<float> init = build_demosaick_net(tiny_demosaick(), 35);
  for (PretrainMode mode : {PretrainMode::GroundTruth, PretrainMode::MosaicToMosaic}) {
    const PretrainResult a = pretrain(data, toy_pretrain(), mode, init, val);
    const PretrainResult b = pretrain(data, toy_pretrain(), mode, init, val);
    EXPECT_EQ(a.loss_log, b.loss_log);
    EXPECT_EQ(a.psnr_log, b.psnr_log);
  }
}

TEST(Pretrain, EmptyDatasetIsDataError) {
  EXPECT_THROW(pretrain({}, toy_pretrain(), PretrainMode::GroundTruth, build_demosaick_net(tiny_demosaick()), {}),
               DataError);
}

TEST(TrainConfig, ScheduleAndValidation) {
  const TrainConfig c = TrainConfig::pretrain_defaults();
  EXPECT_DOUBLE_EQ(c.learning_rate_at(0), 1e-2);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(19), 1e-2);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(20), 1e-3);
  EXPECT_NEAR(c.learning_rate_at(44), 1e-4, 1e-18);
  TrainConfig bad;
  bad.loss_p = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig();
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

// ---- denoiser paths ----

TEST(DenoiserBurst, LearningRateZeroKeepsParams) {
  const Image clean = to_gray(synthetic_scene(48, 48, 36));
  std::vector<Image> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(add_noise(clean, NoiseSpec{25, false, 37u + i}));
  TrainConfig cfg = TrainConfig::finetune_defaults();
  cfg.learning_rate = 0.0;
  cfg.patch_size = 16;
  const NetParams<float> init = build_denoise_net(tiny_denoise(), 38);
  const FinetuneResult r = finetune_denoiser_burst(init, frames, 1, cfg, 2, &clean);
  EXPECT_EQ(r.trace.size(), 7u);
  for (std::size_t i = 0; i < init.tensors.size(); ++i)
    EXPECT_TRUE((r.params.tensors[i].values() == init.tensors[i].values()).all());
  EXPECT_EQ(r.trace.back().input_index, 1);
}

TEST(Tnr, IdenticalCleanFramesAreInfinite) {
  const Image clean = to_gray(synthetic_scene(32, 32, 39));
  const std::vector<Image> burst(4, clean);
  NetParams<float> zero = build_denoise_net(tiny_denoise(), 40);
  zero.set_zero();
  const TnrTable t = tnr_baselines(burst, zero, clean);
  EXPECT_EQ(t.noisy_frame, kInfinitePsnr);
  EXPECT_EQ(t.temporal_mean, kInfinitePsnr);
  EXPECT_GT(t.single_denoised, 100.0);
  EXPECT_GT(t.denoised_mean, 100.0);
}

TEST(Tnr, MeanOfTenFramesGainsTenDecibels) {
  const Image clean = to_gray(synthetic_scene(128, 128, 41));
  std::vector<Image> burst;
  for (int i = 0; i < 10; ++i) burst.push_back(add_noise(clean, NoiseSpec{25, false, 42u + i}));
  NetParams<float> zero = build_denoise_net(tiny_denoise(), 43);
  zero.set_zero();
  const TnrTable t = tnr_baselines(burst, zero, clean);
  EXPECT_NEAR(t.temporal_mean - t.noisy_frame, 10.0, 0.3);
}

// ---- scalar median oracle ----

TEST(FitConstant, L1FindsMedianAndL2FindsMean) {
  const std::vector<double> z{0.12, 0.9, 0.33, 0.47, 0.05, 0.61, 0.2};
  std::vector<double> s = z;
  std::sort(s.begin(), s.end());
  EXPECT_NEAR(fit_constant(z, 1), s[3], 1e-3);
  double mean = 0;
  for (double v : z) mean += v;
  mean /= double(z.size());
  EXPECT_NEAR(fit_constant(z, 2), mean, 1e-9);
}

TEST(FitConstant, ClippedObservationsBiasOnlyTheMean) {
  std::vector<double> z;
  std::mt19937_64 rng(44);
  std::normal_distribution<double> n(1.0, 25.0 / 255.0);
  for (int i = 0; i < 11; ++i) z.push_back(std::min(1.0, n(rng)));
  std::vector<double> s = z;
  std::sort(s.begin(), s.end());
  double mean = 0;
  for (double v : z) mean += v;
  mean /= double(z.size());
  EXPECT_NEAR(fit_constant(z, 1), s[5], 1e-3);
  EXPECT_NEAR(fit_constant(z, 2), mean, 1e-9);
  EXPECT_LT(mean, 1.0);
  EXPECT_THROW(fit_constant(z, 3), ParameterError);
}

}  // namespace
}  // namespace m2m
