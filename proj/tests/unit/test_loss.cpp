#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "focalfuse/metrics/loss.hpp"
#include "support/oracles.hpp"

using namespace focalfuse;
using metrics::dice_ce_loss;

namespace {

Shape s5(Index b, Index c, Index w, Index h, Index z) { return make_shape5(b, c, {w, h, z}); }

std::vector<std::uint8_t> random_labels(std::size_t n, int classes, std::mt19937_64& rng) {
  std::vector<std::uint8_t> l(n);
  for (auto& v : l) v = static_cast<std::uint8_t>(rng() % static_cast<std::uint64_t>(classes));
  return l;
}

/// Straight-line re-implementation: per-voxel softmax with std::exp on the raw
/// logits, then the two terms in long double.
long double loss_oracle(const Tensor<double>& x, const std::vector<std::uint8_t>& y) {
  const Index B = x.dim(0), C = x.dim(1);
  const auto e = x.shape().spatial();
  const Index S = e[0] * e[1] * e[2];
  long double ce = 0;
  std::vector<long double> inter(C, 0), ps(C, 0), gs(C, 0);
  for (Index b = 0; b < B; ++b)
    for (Index w = 0; w < e[0]; ++w)
      for (Index h = 0; h < e[1]; ++h)
        for (Index z = 0; z < e[2]; ++z) {
          const Index v = b * S + (w * e[1] + h) * e[2] + z;
          long double denom = 0;
          for (Index c = 0; c < C; ++c) denom += std::exp(static_cast<long double>(x.at(b, c, w, h, z)));
          for (Index c = 0; c < C; ++c) {
            const long double p = std::exp(static_cast<long double>(x.at(b, c, w, h, z))) / denom;
            ps[c] += p;
            if (y[v] == c) {
              inter[c] += p;
              gs[c] += 1;
              ce -= std::log(p);
            }
          }
        }
  ce /= static_cast<long double>(B * S);
  long double dice = 0;
  for (Index c = 0; c < C; ++c) dice += (2 * inter[c] + 1e-5L) / (ps[c] + gs[c] + 1e-5L);
  dice /= static_cast<long double>(C);
  return 0.5L * (1 - dice) + 0.5L * ce;
}

}  // namespace

TEST(DiceCeLoss, PeakedLogitsGiveNearZeroLoss) {
  std::mt19937_64 rng(1);
  const auto shape = s5(1, 4, 4, 4, 4);
  auto y = random_labels(64, 4, rng);
  // Every class present so no dice term rests on epsilon alone.
  for (std::uint8_t c = 0; c < 4; ++c) y[c] = c;
  Tensor<float> x(shape);
  for (Index v = 0; v < 64; ++v) x.mutable_data()[y[v] * 64 + v] = 20.0f;
  EXPECT_LT(dice_ce_loss(x, y).item(), 0.01f);
}

TEST(DiceCeLoss, UniformLogitsTwoClassesClosedForm) {
  std::mt19937_64 rng(2);
  const auto y = random_labels(2 * 27, 2, rng);
  const Tensor<double> x(s5(2, 2, 3, 3, 3), 0.7);
  double g1 = 0;
  for (auto v : y) g1 += v;
  const double m = 54.0;
  const double g[2] = {m - g1, g1};
  double dice = 0;
  for (double gc : g) dice += (2 * 0.5 * gc + 1e-5) / (0.5 * m + gc + 1e-5);
  dice /= 2;
  const double expect = 0.5 * (1 - dice) + 0.5 * std::log(2.0);
  EXPECT_NEAR(dice_ce_loss(x, y).item(), expect, 1e-14);
}

TEST(DiceCeLoss, MatchesStraightLineOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const Index B = 1 + static_cast<Index>(seed % 2), C = 2 + static_cast<Index>(seed % 4);
    const auto x = oracle::random_tensor<double>(s5(B, C, 3, 2, 4), rng, -3.0, 3.0);
    const auto y = random_labels(static_cast<std::size_t>(B * 24), static_cast<int>(C), rng);
    const long double want = loss_oracle(x, y);
    EXPECT_NEAR(dice_ce_loss(x, y).item(), static_cast<double>(want), 1e-12);
    std::vector<float> xf(x.data().begin(), x.data().end());
    EXPECT_NEAR(dice_ce_loss(Tensor<float>(x.shape(), xf), y).item(), static_cast<double>(want), 1e-6);
  }
}

TEST(DiceCeLoss, StepAlongNegativeGradientDecreasesLoss) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(200 + seed);
    auto x = oracle::random_tensor<double>(s5(1, 3, 3, 3, 3), rng, -2.0, 2.0);
    const auto y = random_labels(27, 3, rng);
    x.set_requires_grad(true);
    double before = 0;
    {
      Tape<double> tape;
      Tape<double>::Scope scope(tape);
      const auto loss = dice_ce_loss(x, y);
      before = loss.item();
      tape.backward(loss);
    }
    const auto g = x.grad();
    std::vector<double> moved(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < moved.size(); ++i) moved[i] -= 1e-3 * g[i];
    EXPECT_LT(dice_ce_loss(Tensor<double>(x.shape(), moved), y).item(), before);
  }
}

TEST(DiceCeLoss, InvalidLabelsAreRejected) {
  const Tensor<float> x(s5(1, 3, 2, 2, 2));
  std::vector<std::uint8_t> y(8, 0);
  y[5] = 3;
  EXPECT_THROW(dice_ce_loss(x, y), DataError);
  EXPECT_THROW(dice_ce_loss(x, std::vector<std::uint8_t>(7, 0)), DimensionError);
}

TEST(Argmax, LowestClassWinsTies) {
  Tensor<float> x(s5(1, 3, 1, 1, 2));
  auto d = x.mutable_data();
  // voxel 0: classes 1 and 2 tie; voxel 1: class 2 wins
  d[0] = 0.0f, d[2] = 1.0f, d[4] = 1.0f;
  d[1] = 0.0f, d[3] = 0.5f, d[5] = 2.0f;
  EXPECT_EQ(metrics::argmax_channels(x), (std::vector<std::uint8_t>{1, 2}));
}
