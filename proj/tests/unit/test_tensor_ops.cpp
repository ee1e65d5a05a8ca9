#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "focalfuse/core.hpp"
#include "support/oracles.hpp"

using namespace focalfuse;

namespace {

Shape s5(Index b, Index c, Index w, Index h, Index z) { return make_shape5(b, c, {w, h, z}); }

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

struct ShapeCase {
  Index b, cin, cout, groups, k, s, p, w, h, z;
};

// Every combination here keeps spatial extents <= 6.
std::vector<ShapeCase> conv_cases() {
  std::vector<ShapeCase> cases;
  const Index extents[][3] = {{3, 3, 3}, {4, 5, 6}, {6, 6, 6}, {5, 2, 3}, {6, 4, 2}};
  for (const auto& e : extents) {
    cases.push_back({1, 2, 3, 1, 3, 1, 1, e[0], e[1], e[2]});
    cases.push_back({2, 3, 2, 1, 1, 1, 0, e[0], e[1], e[2]});
    cases.push_back({1, 4, 4, 4, 3, 1, 1, e[0], e[1], e[2]});
    cases.push_back({1, 4, 4, 4, 3, 2, 1, e[0], e[1], e[2]});
    cases.push_back({1, 2, 4, 2, 3, 2, 1, e[0], e[1], e[2]});
  }
  return cases;
}

}  // namespace

TEST(Conv3d, AllOnesCountsInBoundsTaps) {
  Tensor<float> x(s5(1, 1, 3, 3, 3), 1.0f);
  Tensor<float> w(s5(1, 1, 3, 3, 3), 1.0f);
  const auto y = conv3d(x, w, Tensor<float>{}, ConvSpec::same3());
  EXPECT_EQ(y.at(0, 0, 1, 1, 1), 27.0f);
  for (Index a : {0, 2})
    for (Index b : {0, 2})
      for (Index c : {0, 2}) EXPECT_EQ(y.at(0, 0, a, b, c), 8.0f);
}

TEST(Conv3d, IdentityKernel) {
  std::mt19937_64 rng(1);
  const auto x = oracle::random_tensor<float>(s5(2, 1, 4, 3, 5), rng);
  Tensor<float> w(s5(1, 1, 1, 1, 1), 1.0f);
  EXPECT_TRUE(bitwise_equal(conv3d(x, w, Tensor<float>{}, ConvSpec::cube(1)), x));
}

TEST(Conv3d, MatchesLoopOracleOnSpecExample) {
  std::mt19937_64 rng(2);
  // Inputs in [-0.5, 0.5] keep outputs small enough that float rounding of the
  // 54-term sums stays under the absolute tolerance.
  const auto x = oracle::random_tensor<float>(s5(1, 2, 5, 5, 5), rng, -0.5, 0.5);
  const auto w = oracle::random_tensor<float>(s5(3, 2, 3, 3, 3), rng, -0.5, 0.5);
  const auto y = conv3d(x, w, Tensor<float>{}, ConvSpec::same3());
  EXPECT_LT(oracle::max_abs_diff(y, oracle::conv3d<float>(x, w, nullptr, {})), 1e-6);
}

TEST(Conv3d, MatchesLoopOracleAcrossShapes) {
  std::mt19937_64 rng(3);
  int n = 0;
  for (const auto& c : conv_cases()) {
    const oracle::ConvParams cp{{c.k, c.k, c.k}, {c.s, c.s, c.s}, {c.p, c.p, c.p}, c.groups};
    const ConvSpec spec = ConvSpec::cube(c.k, c.s, c.p, c.groups);
    const auto xf = oracle::random_tensor<float>(s5(c.b, c.cin, c.w, c.h, c.z), rng, -0.5, 0.5);
    const auto wf = oracle::random_tensor<float>(s5(c.cout, c.cin / c.groups, c.k, c.k, c.k), rng, -0.5, 0.5);
    const auto bf = oracle::random_tensor<float>(Shape{c.cout}, rng, -0.5, 0.5);
    EXPECT_LT(oracle::max_abs_diff(conv3d(xf, wf, bf, spec), oracle::conv3d(xf, wf, &bf, cp)), 1e-6) << n;

    const auto xd = oracle::random_tensor<double>(s5(c.b, c.cin, c.w, c.h, c.z), rng);
    const auto wd = oracle::random_tensor<double>(s5(c.cout, c.cin / c.groups, c.k, c.k, c.k), rng);
    EXPECT_LT(oracle::max_abs_diff(conv3d(xd, wd, Tensor<double>{}, spec), oracle::conv3d<double>(xd, wd, nullptr, cp)), 1e-12)
        << n;
    ++n;
  }
  EXPECT_GE(n, 20);
}

TEST(Conv3d, Errors) {
  Tensor<float> x(s5(1, 2, 4, 4, 4));
  EXPECT_THROW(conv3d(x, Tensor<float>(s5(1, 3, 3, 3, 3)), Tensor<float>{}, ConvSpec::same3()), DimensionError);
  EXPECT_THROW(conv3d(x, Tensor<float>(s5(1, 2, 3, 3, 3)), Tensor<float>(Shape{2}), ConvSpec::same3()),
               DimensionError);
  // Kernel larger than the padded input.
  EXPECT_THROW(conv3d(Tensor<float>(s5(1, 2, 2, 2, 2)), Tensor<float>(s5(1, 2, 3, 3, 3)), Tensor<float>{},
                      ConvSpec::cube(3)),
               DimensionError);
  Tensor<float> bad(s5(1, 2, 4, 4, 4));
  bad.mutable_data()[5] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(conv3d(bad, Tensor<float>(s5(1, 2, 3, 3, 3)), Tensor<float>{}, ConvSpec::same3()), NumericError);
}

TEST(ConvTranspose3d, ImpulseStampsKernel) {
  std::mt19937_64 rng(4);
  Tensor<double> x(s5(1, 1, 3, 3, 3));
  x.mutable_data()[oracle::at5(x.shape(), 0, 0, 1, 2, 0)] = 1.0;
  const auto w = oracle::random_tensor<double>(s5(1, 1, 3, 3, 3), rng);
  const auto y = conv_transpose3d(x, w, Tensor<double>{}, ConvSpec::cube(3, 1, 0));
  ASSERT_EQ(y.shape(), s5(1, 1, 5, 5, 5));
  for (Index a = 0; a < 5; ++a)
    for (Index b = 0; b < 5; ++b)
      for (Index c = 0; c < 5; ++c) {
        const Index kw = a - 1, kh = b - 2, kz = c;
        const bool inside = kw >= 0 && kw < 3 && kh >= 0 && kh < 3 && kz < 3;
        EXPECT_EQ(y.at(0, 0, a, b, c), inside ? w.at(0, 0, kw, kh, kz) : 0.0);
      }
}

TEST(ConvTranspose3d, Stride2DoublesExtent) {
  Tensor<float> x(s5(1, 2, 8, 8, 8), 1.0f);
  Tensor<float> w(s5(2, 3, 3, 3, 3), 0.5f);
  const auto y = conv_transpose3d(x, w, Tensor<float>{}, ConvSpec::stride2());
  EXPECT_EQ(y.shape(), s5(1, 3, 16, 16, 16));
}

TEST(ConvTranspose3d, MatchesScatterOracle) {
  std::mt19937_64 rng(5);
  int n = 0;
  for (const auto& c : conv_cases()) {
    if (c.k != 3) continue;
    const Index op = c.s - 1;
    const ConvSpec spec = ConvSpec::cube(c.k, c.s, c.p, c.groups, op);
    const oracle::ConvParams cp{{c.k, c.k, c.k}, {c.s, c.s, c.s}, {c.p, c.p, c.p}, c.groups};
    const auto x = oracle::random_tensor<double>(s5(c.b, c.cin, c.w, c.h, c.z), rng);
    const auto w = oracle::random_tensor<double>(s5(c.cin, c.cout / c.groups, c.k, c.k, c.k), rng);
    const auto b = oracle::random_tensor<double>(Shape{c.cout}, rng);
    EXPECT_LT(oracle::max_abs_diff(conv_transpose3d(x, w, b, spec), oracle::conv_transpose3d(x, w, &b, cp, {op, op, op})),
              1e-12)
        << n++;
  }
}

TEST(ConvTranspose3d, IsTheInputAdjointOfConv3d) {
  // <conv(x), y> == <x, convT(y)> for every x, y, so convT(y) is the input gradient
  // of sum(conv(x) * y).
  std::mt19937_64 rng(6);
  for (const Index groups : {Index{1}, Index{4}}) {
    const ConvSpec spec = ConvSpec::stride2(groups);
    auto x = oracle::random_tensor<double>(s5(1, 4, 8, 8, 8), rng);
    const auto w = oracle::random_tensor<double>(s5(4, 4 / groups, 3, 3, 3), rng);
    const auto dy = oracle::random_tensor<double>(s5(1, 4, 4, 4, 4), rng);
    x.set_requires_grad(true);
    {
      Tape<double> tape;
      Tape<double>::Scope scope(tape);
      tape.backward(sum(mul(conv3d(x, w, Tensor<double>{}, spec), dy)));
    }
    const Tensor<double> grad(x.shape(), x.grad());
    const auto y = conv_transpose3d(dy, w, Tensor<double>{}, spec);
    EXPECT_LT(oracle::max_abs_diff(y, grad), 1e-6);
  }
}

TEST(Pool3d, ConstantAverageAndSingleMax) {
  Tensor<float> c(s5(1, 2, 4, 4, 2), 2.5f);
  const auto avg = pool3d(c, PoolKind::avg);
  for (float v : avg.data()) EXPECT_EQ(v, 2.5f);
  Tensor<float> x(s5(1, 1, 4, 4, 4));
  x.mutable_data()[oracle::at5(x.shape(), 0, 0, 3, 2, 1)] = 9.0f;
  const auto y = pool3d(x, PoolKind::max);
  EXPECT_EQ(y.at(0, 0, 1, 1, 0), 9.0f);
  EXPECT_EQ(y.at(0, 0, 0, 0, 0), 0.0f);
}

TEST(Pool3d, MatchesLoopOracleExactly) {
  std::mt19937_64 rng(7);
  for (const auto& sh : {s5(1, 1, 4, 4, 4), s5(2, 3, 6, 2, 4), s5(1, 2, 2, 6, 6)}) {
    const auto x = oracle::random_tensor<float>(sh, rng);
    EXPECT_EQ(oracle::max_abs_diff(pool3d(x, PoolKind::max), oracle::pool(x, true)), 0.0);
    EXPECT_LT(oracle::max_abs_diff(pool3d(x, PoolKind::avg), oracle::pool(x, false)), 1e-7);
  }
}

TEST(Pool3d, OddExtentIsAnError) {
  EXPECT_THROW(pool3d(Tensor<float>(s5(1, 1, 4, 3, 4)), PoolKind::max), DimensionError);
}

TEST(GlobalAvgPool, ValuesAndOracle) {
  Tensor<double> r(s5(1, 1, 2, 2, 2), std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7});
  EXPECT_EQ(global_avg_pool(r).item(), 3.5);
  EXPECT_EQ(global_avg_pool(Tensor<double>(s5(1, 1, 3, 2, 5), -1.25)).item(), -1.25);
  std::mt19937_64 rng(8);
  const auto x = oracle::random_tensor<double>(s5(2, 3, 5, 4, 3), rng);
  EXPECT_LT(oracle::max_abs_diff(global_avg_pool(x), oracle::global_avg_pool(x)), 1e-12);
}

TEST(ResizeTrilinear, SameExtentsCopyBitwise) {
  std::mt19937_64 rng(9);
  const auto x = oracle::random_tensor<float>(s5(1, 2, 3, 4, 5), rng);
  EXPECT_TRUE(bitwise_equal(resize_trilinear(x, {3, 4, 5}), x));
}

TEST(ResizeTrilinear, ConstantFieldAtAnySize) {
  const Tensor<float> c(s5(1, 1, 3, 2, 5), 0.3f);
  for (const auto& target : {std::array<Index, 3>{7, 1, 4}, std::array<Index, 3>{6, 4, 10}}) {
    const auto y = resize_trilinear(c, target);
    for (float v : y.data()) EXPECT_EQ(v, 0.3f);
  }
}

TEST(ResizeTrilinear, LinearRampMatchesClosedForm) {
  // Ramp along each axis in turn, doubled extent: value = 2 * clamp(source coordinate) + 1.
  for (int axis = 0; axis < 3; ++axis) {
    std::array<Index, 3> in{3, 3, 3};
    in[axis] = 5;
    Tensor<double> x(make_shape5(1, 1, in));
    for (Index a = 0; a < in[0]; ++a)
      for (Index b = 0; b < in[1]; ++b)
        for (Index c = 0; c < in[2]; ++c) {
          const Index i = std::array<Index, 3>{a, b, c}[axis];
          x.mutable_data()[oracle::at5(x.shape(), 0, 0, a, b, c)] = 2.0 * static_cast<double>(i) + 1.0;
        }
    std::array<Index, 3> out = in;
    out[axis] *= 2;
    const auto y = resize_trilinear(x, out);
    for (Index a = 0; a < out[0]; ++a)
      for (Index b = 0; b < out[1]; ++b)
        for (Index c = 0; c < out[2]; ++c) {
          const Index o = std::array<Index, 3>{a, b, c}[axis];
          const double expect = 2.0 * oracle::trilinear_coordinate(o, in[axis], out[axis]) + 1.0;
          EXPECT_NEAR(y.at(0, 0, a, b, c), expect, 1e-6);
        }
  }
}

TEST(Linear, IdentityZeroAndOracle) {
  std::mt19937_64 rng(10);
  const auto x = oracle::random_tensor<double>(s5(2, 3, 2, 3, 2), rng);
  Tensor<double> eye(Shape{3, 3});
  for (Index i = 0; i < 3; ++i) eye.mutable_data()[i * 4] = 1.0;
  EXPECT_TRUE(bitwise_equal(linear(x, eye, Tensor<double>{}), x));

  const Tensor<double> b(Shape{2}, std::vector<double>{0.5, -2.0});
  const auto y = linear(x, Tensor<double>(Shape{2, 3}), b);
  for (Index v = 0; v < 12; ++v) {
    EXPECT_EQ(y.data()[v], 0.5);
    EXPECT_EQ(y.data()[12 + v], -2.0);
  }

  const auto w = oracle::random_tensor<double>(Shape{4, 3}, rng);
  const auto bias = oracle::random_tensor<double>(Shape{4}, rng);
  EXPECT_LT(oracle::max_abs_diff(linear(x, w, bias), oracle::linear(x, w, &bias)), 1e-12);
  EXPECT_THROW(linear(x, Tensor<double>(Shape{4, 2}), Tensor<double>{}), DimensionError);
}

TEST(InstanceNorm, ConstantSliceIsZero) {
  const Tensor<float> c(s5(1, 2, 2, 2, 2), 4.0f);
  const auto y = instance_norm(c, Tensor<float>{}, Tensor<float>{});
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(InstanceNorm, StandardizesEverySlice) {
  std::mt19937_64 rng(11);
  const auto x = oracle::random_tensor<double>(s5(2, 3, 4, 3, 5), rng, -3.0, 7.0);
  const auto y = instance_norm(x, Tensor<double>{}, Tensor<double>{});
  const Index n = 60;
  for (Index s = 0; s < 6; ++s) {
    double mean = 0.0, sq = 0.0;
    for (Index i = 0; i < n; ++i) mean += y.data()[s * n + i];
    mean /= n;
    for (Index i = 0; i < n; ++i) sq += (y.data()[s * n + i] - mean) * (y.data()[s * n + i] - mean);
    EXPECT_LT(std::abs(mean), 1e-5);
    EXPECT_NEAR(sq / n, 1.0, 1e-4);
  }
}

TEST(InstanceNorm, MatchesTwoPassOracle) {
  std::mt19937_64 rng(12);
  for (const auto& sh : {s5(1, 2, 3, 3, 3), s5(2, 4, 6, 5, 2), s5(1, 1, 2, 1, 1)}) {
    const auto x = oracle::random_tensor<float>(sh, rng);
    const auto g = oracle::random_tensor<float>(Shape{sh[1]}, rng, 0.5, 1.5);
    const auto b = oracle::random_tensor<float>(Shape{sh[1]}, rng);
    EXPECT_LT(oracle::max_abs_diff(instance_norm(x, g, b), oracle::instance_norm(x, g, b, kInstanceNormEps)), 1e-6);
  }
}

TEST(InstanceNorm, SingleVoxelIsAnError) {
  EXPECT_THROW(instance_norm(Tensor<float>(s5(1, 2, 1, 1, 1)), Tensor<float>{}, Tensor<float>{}), NumericError);
}

TEST(Activations, ReferenceValues) {
  const Tensor<double> x(Shape{3}, std::vector<double>{0.0, 1.0, -1.0});
  const auto g = gelu(x);
  EXPECT_EQ(g.data()[0], 0.0);
  EXPECT_NEAR(g.data()[1], 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0))), 1e-12);
  EXPECT_NEAR(g.data()[1], 0.841345, 1e-6);
  const auto r = relu(x);
  EXPECT_EQ(r.data()[2], 0.0);
  EXPECT_EQ(r.data()[1], 1.0);
  EXPECT_EQ(activation(x, Activation::relu).data()[2], 0.0);
}

TEST(Activations, SoftmaxSumsToOnePerVoxel) {
  std::mt19937_64 rng(13);
  const auto x = oracle::random_tensor<double>(s5(2, 5, 3, 2, 2), rng, -30.0, 30.0);
  const auto p = softmax_channel(x);
  for (Index b = 0; b < 2; ++b)
    for (Index v = 0; v < 12; ++v) {
      double s = 0.0;
      for (Index c = 0; c < 5; ++c) s += p.data()[(b * 5 + c) * 12 + v];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  // Large logits stay finite thanks to max subtraction.
  const Tensor<float> big(s5(1, 2, 1, 1, 2), std::vector<float>{1000.f, 0.f, 999.f, 0.f});
  const auto pb = softmax_channel(big);
  for (float v : pb.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(ConcatSlice, IdentityAndRoundTrip) {
  std::mt19937_64 rng(14);
  const auto a = oracle::random_tensor<float>(s5(2, 2, 3, 2, 2), rng);
  const auto b = oracle::random_tensor<float>(s5(2, 3, 3, 2, 2), rng);
  EXPECT_TRUE(bitwise_equal(concat_channels(std::vector<Tensor<float>>{a}), a));
  const auto c = concat_channels(std::vector<Tensor<float>>{a, b});
  EXPECT_EQ(c.dim(1), 5);
  EXPECT_TRUE(bitwise_equal(slice_channels(c, 0, 2), a));
  EXPECT_TRUE(bitwise_equal(slice_channels(c, 2, 3), b));
  EXPECT_THROW(concat_channels(std::vector<Tensor<float>>{a, Tensor<float>(s5(2, 1, 3, 2, 1))}), DimensionError);
}

TEST(Determinism, RepeatedCallsAreBitwiseIdentical) {
  std::mt19937_64 rng(15);
  const auto x = oracle::random_tensor<float>(s5(1, 4, 8, 8, 8), rng);
  const auto w = oracle::random_tensor<float>(s5(6, 4, 3, 3, 3), rng);
  const auto dw = oracle::random_tensor<float>(s5(4, 1, 3, 3, 3), rng);
  const auto g = oracle::random_tensor<float>(Shape{4}, rng);
  const auto run = [&] {
    auto y = conv3d(x, w, Tensor<float>{}, ConvSpec::same3());
    y = conv_transpose3d(pool3d(y, PoolKind::max), w, Tensor<float>{}, ConvSpec::stride2());
    y = gelu(instance_norm(conv3d(y, dw, Tensor<float>{}, ConvSpec::stride2(4)), g, g));
    return resize_trilinear(y, {5, 7, 3});
  };
  const auto first = run();
  for (int threads : {1, 2, 3}) {
    set_num_threads(threads);
    EXPECT_TRUE(bitwise_equal(run(), first)) << threads;
  }
  set_num_threads(1);
}
