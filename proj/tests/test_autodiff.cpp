#include <gtest/gtest.h>

#include <random>

#include "m2m/adam.hpp"
#include "m2m/gradcheck.hpp"
#include "m2m/graph.hpp"
#include "m2m/warp.hpp"

namespace m2m {
namespace {

using T = Tensor<double>;

T random_tensor(T::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  T t(shape);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.values()[i] = u(rng);
  return t;
}

constexpr double kTol = 1e-4;

TEST(GradCheck, SumIsExact) {
  const auto f = [](Graph<double>&, const std::vector<Var<double>>& v) { return sum(v[0]); };
  EXPECT_LT(grad_check(f, {random_tensor({2, 3, 4, 5}, 1)}).max_rel_error, 1e-8);
}

TEST(Conv3x3, DeltaKernelIsIdentity) {
  Graph<double> g;
  const T x = random_tensor({1, 1, 6, 7}, 2);
  T w({1, 1, 3, 3});
  w(0, 0, 1, 1) = 1.0;
  const auto y = conv3x3(g.leaf(x), g.leaf(w), g.leaf(T({1, 1, 1, 1})));
  EXPECT_TRUE((y.value().values() == x.values()).all());
}

TEST(Conv3x3, ConstantInputGivesSumOfWeightsPlusBias) {
  Graph<double> g;
  const T x({1, 2, 8, 8}, 0.5);
  const T w = random_tensor({3, 2, 3, 3}, 3);
  const T b = random_tensor({1, 3, 1, 1}, 4);
  const auto y = conv3x3(g.leaf(x), g.leaf(w), g.leaf(b));
  ASSERT_EQ(y.shape(), (T::Shape{1, 3, 8, 8}));
  for (int o = 0; o < 3; ++o) {
    double s = 0;
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < 9; ++k) s += w(o, i, k / 3, k % 3);
    for (int yy = 1; yy < 7; ++yy)
      for (int xx = 1; xx < 7; ++xx) EXPECT_NEAR(y.value()(0, o, yy, xx), 0.5 * s + b(0, o, 0, 0), 1e-12);
  }
}

TEST(Conv3x3, ChannelMismatchIsShapeError) {
  Graph<double> g;
  EXPECT_THROW(conv3x3(g.leaf(T({1, 2, 4, 4})), g.leaf(T({1, 3, 3, 3})), g.leaf(T({1, 1, 1, 1}))), ShapeError);
}

TEST(Conv3x3, GradientMatchesFiniteDifferences) {
  const auto f = [](Graph<double>&, const std::vector<Var<double>>& v) {
    return dot(conv3x3(v[0], v[1], v[2]), random_tensor({2, 4, 8, 8}, 99));
  };
  const auto r = grad_check(f, {random_tensor({2, 3, 8, 8}, 5), random_tensor({4, 3, 3, 3}, 6),
                                random_tensor({1, 4, 1, 1}, 7)});
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(BatchNorm, TrainModeStandardizesPerChannel) {
  Graph<double> g;
  const T x = random_tensor({3, 2, 5, 5}, 8, 0.0, 4.0);
  auto st = BnState<double>::identity(2);
  const auto y = batch_norm(g.leaf(x), g.leaf(T({1, 2, 1, 1}, 1.0)), g.leaf(T({1, 2, 1, 1}, 0.0)), st, Mode::Train);
  for (int c = 0; c < 2; ++c) {
    double s = 0, s2 = 0, n = 0;
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < 25; ++i) {
        const double v = y.value()(b, c, i / 5, i % 5);
        s += v;
        s2 += v * v;
        ++n;
      }
    const double mean = s / n;
    EXPECT_NEAR(mean, 0.0, 1e-5);
    // Biased variance equals 1 up to the eps in the denominator.
    EXPECT_NEAR(s2 / n - mean * mean, 1.0, 1e-4);
  }
  EXPECT_GT(st.running_mean.abs().maxCoeff(), 0.0);
}

TEST(BatchNorm, EvalWithIdentityStatsIsIdentity) {
  Graph<double> g;
  const T x = random_tensor({2, 3, 4, 4}, 9);
  auto st = BnState<double>::identity(3);
  const auto y = batch_norm(g.leaf(x), g.leaf(T({1, 3, 1, 1}, 1.0)), g.leaf(T({1, 3, 1, 1}, 0.0)), st, Mode::Eval);
  EXPECT_LT((y.value().values() - x.values()).abs().maxCoeff(), 1e-5);
}

TEST(BatchNorm, GradientMatchesFiniteDifferencesInBothModes) {
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    auto st = BnState<double>::identity(3);
    st.running_mean << 0.1, -0.2, 0.3;
    st.running_var << 0.5, 1.5, 2.0;
    const T weights = random_tensor({2, 3, 4, 4}, 10);
    const auto f = [&](Graph<double>&, const std::vector<Var<double>>& v) {
      auto s = st;  // keep the running stats fixed across evaluations
      return dot(batch_norm(v[0], v[1], v[2], s, mode), weights);
    };
    const auto r = grad_check(f, {random_tensor({2, 3, 4, 4}, 11), random_tensor({1, 3, 1, 1}, 12, 0.5, 1.5),
                                  random_tensor({1, 3, 1, 1}, 13)});
    EXPECT_LT(r.max_rel_error, kTol) << (mode == Mode::Train ? "train" : "eval");
  }
}

TEST(BatchNorm, EmptyBatchIsShapeError) {
  Graph<double> g;
  auto st = BnState<double>::identity(2);
  EXPECT_THROW(batch_norm(g.leaf(T({0, 2, 4, 4})), g.leaf(T({1, 2, 1, 1}, 1.0)), g.leaf(T({1, 2, 1, 1})), st,
                          Mode::Train),
               ShapeError);
}

TEST(Relu, ZeroOnNegatedNonNegatives) {
  Graph<double> g;
  const T x = random_tensor({1, 2, 3, 3}, 14, 0.0, 1.0);
  const auto y = relu(scale(g.leaf(x), -1.0));
  EXPECT_TRUE((y.value().values() == 0.0).all());
}

TEST(ElementwiseOps, GradientsMatchFiniteDifferences) {
  const T w = random_tensor({1, 2, 5, 5}, 15);
  // Keep relu inputs away from the kink so central differences are meaningful.
  T x = random_tensor({1, 2, 5, 5}, 16);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (std::abs(x.values()[i]) < 0.05) x.values()[i] = 0.3;
  const T y = random_tensor({1, 2, 5, 5}, 17);
  const auto f_relu = [&](Graph<double>&, const std::vector<Var<double>>& v) { return dot(relu(v[0]), w); };
  const auto f_add = [&](Graph<double>&, const std::vector<Var<double>>& v) { return dot(add(v[0], v[1]), w); };
  const auto f_sub = [&](Graph<double>&, const std::vector<Var<double>>& v) { return dot(sub(v[0], v[1]), w); };
  const auto f_scale = [&](Graph<double>&, const std::vector<Var<double>>& v) { return dot(scale(v[0], -2.5), w); };
  EXPECT_LT(grad_check(f_relu, {x}).max_rel_error, kTol);
  EXPECT_LT(grad_check(f_add, {x, y}).max_rel_error, kTol);
  EXPECT_LT(grad_check(f_sub, {x, y}).max_rel_error, kTol);
  EXPECT_LT(grad_check(f_scale, {x}).max_rel_error, kTol);
}

TEST(DepthToSpace, ShapeLawAndInverse) {
  Graph<double> g;
  const T x = random_tensor({1, 12, 3, 4}, 18);
  const auto y = depth_to_space(g.leaf(x));
  EXPECT_EQ(y.shape(), (T::Shape{1, 3, 6, 8}));
  const auto back = space_to_depth(y);
  EXPECT_TRUE((back.value().values() == x.values()).all());
  EXPECT_THROW(depth_to_space(g.leaf(T({1, 6, 2, 2}))), ShapeError);
}

TEST(DepthToSpace, GradientsMatchFiniteDifferences) {
  const T w1 = random_tensor({2, 2, 6, 4}, 19);
  const auto f1 = [&](Graph<double>&, const std::vector<Var<double>>& v) { return dot(depth_to_space(v[0]), w1); };
  EXPECT_LT(grad_check(f1, {random_tensor({2, 8, 3, 2}, 20)}).max_rel_error, kTol);
  const T w2 = random_tensor({1, 8, 2, 3}, 21);
  const auto f2 = [&](Graph<double>&, const std::vector<Var<double>>& v) { return dot(space_to_depth(v[0]), w2); };
  EXPECT_LT(grad_check(f2, {random_tensor({1, 2, 4, 6}, 22)}).max_rel_error, kTol);
}

TEST(MaskedLoss, ZeroAtTargetWithZeroGradient) {
  Graph<double> g;
  const T t = random_tensor({1, 3, 4, 4}, 23);
  const auto x = g.leaf(t, true);
  for (int p : {1, 2}) {
    g.zero_grad();
    const auto l = masked_loss(x, t, T(t.shape(), 1.0), p);
    EXPECT_EQ(l.value().values()[0], 0.0);
    g.backward(l);
    EXPECT_TRUE((x.grad().values() == 0.0).all());
  }
}

TEST(MaskedLoss, ScalarL1Example) {
  Graph<double> g;
  const auto x = g.leaf(T({1, 1, 1, 1}, 0.5), true);
  const auto l = masked_loss(x, T({1, 1, 1, 1}, 0.2), T({1, 1, 1, 1}, 1.0), 1);
  EXPECT_NEAR(l.value().values()[0], 0.3, 1e-15);
  g.backward(l);
  EXPECT_EQ(x.grad().values()[0], 1.0);
}

TEST(MaskedLoss, EmptyMaskIsDegenerate) {
  Graph<double> g;
  EXPECT_THROW(masked_loss(g.leaf(T({1, 1, 2, 2})), T({1, 1, 2, 2}), T({1, 1, 2, 2}), 2), DegenerateLossError);
}

TEST(MaskedLoss, GradientsMatchFiniteDifferences) {
  const T target = random_tensor({2, 3, 5, 5}, 24);
  T mask = random_tensor({2, 3, 5, 5}, 25, 0.0, 1.0);
  mask.values() = (mask.values() > 0.4).cast<double>();
  for (int p : {1, 2}) {
    const auto f = [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return masked_loss(v[0], target, mask, p);
    };
    T x = random_tensor({2, 3, 5, 5}, 26);
    // Keep |x − target| away from 0 so the L1 kink is not straddled.
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (std::abs(x.values()[i] - target.values()[i]) < 0.05) x.values()[i] += 0.1;
    EXPECT_LT(grad_check(f, {x}).max_rel_error, kTol) << "p=" << p;
  }
}

TEST(WarpBicubicOp, GradientMatchesFiniteDifferences) {
  const AffineMap map = AffineMap::translate(0.37, -0.61) * AffineMap::rotation_about(0.05, {5.5, 5.5});
  const T w = random_tensor({1, 3, 12, 12}, 27);
  const auto f = [&](Graph<double>&, const std::vector<Var<double>>& v) { return dot(warp_bicubic(v[0], map).image, w); };
  EXPECT_LT(grad_check(f, {random_tensor({1, 3, 12, 12}, 28)}).max_rel_error, kTol);
}

TEST(Graph, DiamondFanOutAccumulates) {
  Graph<double> g;
  const T x0 = random_tensor({1, 1, 3, 3}, 29);
  const auto x = g.leaf(x0, true);
  // y = x + (x + x) = 3x; d(sum y)/dx = 3.
  const auto y = add(x, add(x, x));
  g.backward(sum(y));
  EXPECT_TRUE((x.grad().values() == 3.0).all());
}

TEST(Graph, AddDistributesGradientUnchanged) {
  Graph<double> g;
  const auto a = g.leaf(random_tensor({1, 2, 2, 2}, 30), true);
  const auto b = g.leaf(random_tensor({1, 2, 2, 2}, 31), true);
  const T w = random_tensor({1, 2, 2, 2}, 32);
  g.backward(dot(add(a, b), w));
  EXPECT_TRUE((a.grad().values() == w.values()).all());
  EXPECT_TRUE((b.grad().values() == w.values()).all());
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  std::vector<Tensor<double>> p{random_tensor({1, 1, 2, 2}, 33)};
  const auto before = p[0].values();
  AdamState<double> st;
  adam_step(p, {Tensor<double>({1, 1, 2, 2})}, st);
  EXPECT_TRUE((p[0].values() == before).all());
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, ConstantGradientGivesUnitSteps) {
  std::vector<Tensor<double>> p{Tensor<double>({1, 1, 1, 2})};
  Tensor<double> g({1, 1, 1, 2});
  g.values() << 3.0, -0.2;
  AdamState<double> st;
  st.learning_rate = 1e-2;
  for (int k = 0; k < 50; ++k) {
    const auto before = p[0].values();
    adam_step(p, {g}, st);
    const auto delta = p[0].values() - before;
    EXPECT_NEAR(delta[0], -1e-2, 1e-6);
    EXPECT_NEAR(delta[1], 1e-2, 1e-6);
  }
}

TEST(Adam, QuadraticBowlConverges) {
  std::vector<Tensor<double>> p{Tensor<double>({1, 1, 1, 4})};
  p[0].values() << 0.5, -0.5, 0.5, -0.5;  // norm 1
  AdamState<double> st;
  st.learning_rate = 1e-2;
  int steps = 0;
  while (p[0].values().matrix().norm() >= 1e-3 && steps < 500) {
    Tensor<double> g({1, 1, 1, 4});
    g.values() = 2.0 * p[0].values();
    adam_step(p, {g}, st);
    ++steps;
  }
  EXPECT_LT(p[0].values().matrix().norm(), 1e-3);
  EXPECT_LE(steps, 500);
}

TEST(Adam, ZeroLearningRateIsBitIdentical) {
  std::vector<Tensor<float>> p{random_tensor({2, 2, 3, 3}, 34).cast<float>()};
  const auto before = p[0].values();
  AdamState<float> st;
  st.learning_rate = 0.0;
  for (int k = 0; k < 5; ++k) adam_step(p, {random_tensor({2, 2, 3, 3}, 35u + k).cast<float>()}, st);
  EXPECT_TRUE((p[0].values() == before).all());
}

}  // namespace
}  // namespace m2m
