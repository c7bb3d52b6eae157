#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "sentlat/autodiff/adam.hpp"
#include "sentlat/autodiff/ops.hpp"

using namespace sentlat::ad;
using gradcheck::max_relative_error;
using gradcheck::random_tensor;
using gradcheck::weighted_sum;
using T64 = Tensor<double>;
using T32 = Tensor<float>;

constexpr double kOpTol = 1e-4;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto eye = T32::from({2, 2}, {1, 0, 0, 1});
  auto m = T32::from({2, 2}, {1, 2, 3, 4});
  auto r = matmul(eye, m);
  EXPECT_EQ(std::vector<float>(r.data().begin(), r.data().end()), (std::vector<float>{1, 2, 3, 4}));
}

TEST(Matmul, RowTimesColumn) {
  auto r = matmul(T32::from({1, 2}, {1, 2}), T32::from({2, 1}, {3, 4}));
  ASSERT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_FLOAT_EQ(r.item(), 11.0f);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(T32::zeros({2, 3}), T32::zeros({2, 3})), DimensionError);
}

TEST(Matmul, GradOfSumIsColumnSumsOfB) {
  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  backward(sum(matmul(a, b)));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      const double expect = b.at(k, 0) + b.at(k, 1);
      EXPECT_NEAR(a.grad()[i * 4 + k], expect, 1e-12);
    }
  }
}

TEST(GradCheck, Matmul) {
  std::mt19937_64 rng(2);
  auto a = random_tensor({3, 5}, rng);
  auto b = random_tensor({5, 4}, rng);
  EXPECT_LT(max_relative_error([&] { return weighted_sum(matmul(a, b)); }, {a, b}), kOpTol);
}

TEST(GradCheck, MatmulTransposed) {
  std::mt19937_64 rng(3);
  auto a = random_tensor({3, 5}, rng);
  auto b = random_tensor({4, 5}, rng);
  EXPECT_LT(max_relative_error([&] { return weighted_sum(matmul_nt(a, b)); }, {a, b}), kOpTol);
}

TEST(GradCheck, ElementwiseOps) {
  std::mt19937_64 rng(4);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({3, 4}, rng);
  auto bias = random_tensor({4}, rng);
  EXPECT_LT(max_relative_error([&] { return weighted_sum(add(a, b)); }, {a, b}), kOpTol);
  EXPECT_LT(max_relative_error([&] { return weighted_sum(sub(a, b)); }, {a, b}), kOpTol);
  EXPECT_LT(max_relative_error([&] { return weighted_sum(mul(a, b)); }, {a, b}), kOpTol);
  EXPECT_LT(max_relative_error([&] { return weighted_sum(scale(a, 1.7)); }, {a}), kOpTol);
  EXPECT_LT(max_relative_error([&] { return weighted_sum(add_row(a, bias)); }, {a, bias}), kOpTol);
  EXPECT_LT(max_relative_error([&] { return mean(mul(a, a)); }, {a}), kOpTol);
}

TEST(Softmax, UniformAndStableAndClosedForm) {
  auto s = softmax_rows(T64::from({3, 2}, {0, 0, 1000, 0, std::log(2.0), 0}));
  EXPECT_NEAR(s.at(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(s.at(1, 0), 1.0, 1e-12);
  EXPECT_NEAR(s.at(1, 1), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(s.at(1, 1)));
  EXPECT_NEAR(s.at(2, 0), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(s.at(2, 1), 1.0 / 3.0, 1e-12);

  auto u = softmax_rows(T32::zeros({1, 3}));
  for (float v : u.data()) EXPECT_NEAR(v, 1.0f / 3.0f, 1e-7);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({20, 7}, rng, 5.0, false);
  auto s = softmax_rows(x);
  for (std::size_t r = 0; r < 20; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GE(s.at(r, c), 0.0);
      EXPECT_LE(s.at(r, c), 1.0);
      total += s.at(r, c);
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(GradCheck, Softmax) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({4, 5}, rng);
  EXPECT_LT(max_relative_error([&] { return weighted_sum(softmax_rows(x)); }, {x}), kOpTol);
}

TEST(LayerNorm, ConstantRowIsZero) {
  auto y = layer_norm(T32::full({1, 4}, 3.0f), T32::full({4}, 1.0f), T32::zeros({4}));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(LayerNorm, TwoValues) {
  auto y = layer_norm(T32::from({1, 2}, {1, 3}), T32::full({2}, 1.0f), T32::zeros({2}));
  EXPECT_NEAR(y.data()[0], -1.0f, 1e-3);
  EXPECT_NEAR(y.data()[1], 1.0f, 1e-3);
}

TEST(LayerNorm, GainMismatchThrows) {
  EXPECT_THROW(layer_norm(T32::zeros({2, 3}), T32::zeros({4}), T32::zeros({3})), DimensionError);
}

TEST(GradCheck, LayerNorm) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({3, 6}, rng);
  auto g = random_tensor({6}, rng);
  auto b = random_tensor({6}, rng);
  EXPECT_LT(max_relative_error([&] { return weighted_sum(layer_norm(x, g, b)); }, {x, g, b}), kOpTol);
}

TEST(Gelu, ZeroAndAsymptote) {
  auto y = gelu(T64::from({1, 3}, {0.0, 10.0, -10.0}));
  EXPECT_EQ(y.at(0, 0), 0.0);
  EXPECT_NEAR(y.at(0, 1), 10.0, 1e-9);
  EXPECT_NEAR(y.at(0, 2), 0.0, 1e-9);
}

TEST(Gelu, MatchesTanhFormula) {
  const double x = 0.7;
  const double expect = 0.5 * x * (1 + std::tanh(kSqrtTwoOverPi * (x + kGeluCubic * x * x * x)));
  EXPECT_NEAR(gelu(T64::from({1, 1}, {x})).item(), expect, 1e-15);
}

TEST(GradCheck, Gelu) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({4, 5}, rng, 2.0);
  EXPECT_LT(max_relative_error([&] { return weighted_sum(gelu(x)); }, {x}), kOpTol);
}

TEST(CrossEntropy, ConfidentTargetIsNearZero) {
  auto logits = T32::from({1, 4}, {0, 20, 0, 0});
  const int target = 1;
  EXPECT_NEAR(cross_entropy_from_logits(logits, std::span<const int>(&target, 1)).item(), 0.0f, 1e-6);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  auto logits = T64::zeros({3, 4});
  const std::vector<int> targets = {0, 3, 2};
  EXPECT_NEAR(cross_entropy_from_logits(logits, std::span<const int>(targets)).item(), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, AllMaskedIsAnError) {
  const std::vector<int> targets = {0, 1};
  const std::vector<std::uint8_t> mask = {0, 0};
  EXPECT_THROW(cross_entropy_from_logits(T32::zeros({2, 3}), std::span<const int>(targets),
                                         std::span<const std::uint8_t>(mask)),
               std::invalid_argument);
}

TEST(CrossEntropy, OutOfRangeTarget) {
  const std::vector<int> targets = {0, 3};
  EXPECT_THROW(cross_entropy_from_logits(T32::zeros({2, 3}), std::span<const int>(targets)), std::out_of_range);
}

TEST(CrossEntropy, MaskedRowsIgnored) {
  auto logits = T64::from({2, 2}, {5, 0, 0, 0});
  const std::vector<int> targets = {1, 0};
  const std::vector<std::uint8_t> mask = {0, 1};
  EXPECT_NEAR(cross_entropy_from_logits(logits, std::span<const int>(targets), std::span<const std::uint8_t>(mask))
                  .item(),
              std::log(2.0), 1e-12);
}

TEST(GradCheck, CrossEntropyWithMask) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({4, 6}, rng);
  const std::vector<int> targets = {1, 5, 0, 2};
  const std::vector<std::uint8_t> mask = {1, 0, 1, 1};
  EXPECT_LT(max_relative_error(
                [&] {
                  return cross_entropy_from_logits(x, std::span<const int>(targets),
                                                   std::span<const std::uint8_t>(mask));
                },
                {x}),
            kOpTol);
}

TEST(GradCheck, BceMseNormalize) {
  std::mt19937_64 rng(10);
  auto z = random_tensor({5, 1}, rng);
  const std::vector<double> labels = {1, 0, 0, 1, 1};
  EXPECT_LT(max_relative_error([&] { return bce_with_logits(z, std::span<const double>(labels)); }, {z}), kOpTol);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({3, 4}, rng);
  EXPECT_LT(max_relative_error([&] { return mse(a, b); }, {a, b}), kOpTol);
  EXPECT_LT(max_relative_error([&] { return weighted_sum(normalize_rows(a)); }, {a}), kOpTol);
}

TEST(Bce, ClosedForm) {
  auto z = T64::from({2, 1}, {0.0, 2.0});
  const std::vector<double> labels = {1, 0};
  const double expect = (std::log(2.0) + std::log1p(std::exp(2.0))) / 2;
  EXPECT_NEAR(bce_with_logits(z, std::span<const double>(labels)).item(), expect, 1e-12);
}

TEST(GradCheck, RowGatherStackConcat) {
  std::mt19937_64 rng(11);
  auto table = random_tensor({5, 3}, rng);
  auto other = random_tensor({2, 3}, rng);
  const std::vector<std::size_t> idx = {4, 0, 4, 2};
  EXPECT_LT(max_relative_error([&] { return weighted_sum(gather_rows(table, std::span<const std::size_t>(idx))); },
                               {table}),
            kOpTol);
  EXPECT_LT(max_relative_error(
                [&] {
                  std::vector<RowRef<double>> refs = {{table, 1}, {other, 0}, {table, 1}, {other, 1}};
                  return weighted_sum(stack_rows<double>(refs));
                },
                {table, other}),
            kOpTol);
  EXPECT_LT(max_relative_error(
                [&] {
                  std::vector<T64> parts = {table, other};
                  return weighted_sum(concat_rows<double>(parts));
                },
                {table, other}),
            kOpTol);
}

TEST(GradCheck, CausalAttentionPackedWithPrivateRows) {
  std::mt19937_64 rng(12);
  auto qkv = random_tensor({7, 12}, rng);
  AttentionLayout layout;
  layout.segments = {{0, 4}, {4, 3}};
  layout.is_private = {0, 0, 1, 0, 0, 0, 1};
  EXPECT_LT(max_relative_error([&] { return weighted_sum(causal_attention(qkv, 2, layout)); }, {qkv}), kOpTol);
}

TEST(GradCheck, CausalAttentionWithPrefix) {
  std::mt19937_64 rng(13);
  auto qkv = random_tensor({3, 12}, rng);
  auto pk = random_tensor({2, 4}, rng, 1.0, false);
  auto pv = random_tensor({2, 4}, rng, 1.0, false);
  AttentionPrefix<double> prefix{pk.data(), pv.data(), 2};
  EXPECT_LT(max_relative_error(
                [&] { return weighted_sum(causal_attention(qkv, 2, AttentionLayout::single(3), prefix)); }, {qkv}),
            kOpTol);
}

TEST(CausalAttention, PrivateRowInvisibleToLaterRows) {
  std::mt19937_64 rng(14);
  auto base = random_tensor({4, 6}, rng, 1.0, false);
  AttentionLayout layout = AttentionLayout::single(4);
  layout.is_private = {0, 1, 0, 0};
  auto out1 = causal_attention(base, 1, layout);
  std::vector<double> changed(base.data().begin(), base.data().end());
  for (std::size_t c = 0; c < 6; ++c) changed[6 + c] += 3.0;  // perturb private row 1
  auto out2 = causal_attention(T64::from({4, 6}, changed), 1, layout);
  for (std::size_t r : {0u, 2u, 3u}) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(out1.at(r, c), out2.at(r, c));
  }
}

TEST(Backward, SquareAtThree) {
  auto x = T64::from({1}, {3.0}, true);
  backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, FanOutAccumulates) {
  // y = 2x + x*x reuses x along two paths: dy/dx = 2 + 2x.
  auto x = T64::from({1}, {1.5}, true);
  auto y = sum(add(scale(x, 2.0), mul(x, x)));
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0 + 3.0);
}

TEST(Backward, SharedSubexpressionEqualsSumOfPaths) {
  // s = a*b is shared: loss = sum(s) + sum(s*s).
  auto a = T64::from({2}, {0.5, -1.0}, true);
  auto b = T64::from({2}, {2.0, 3.0}, true);
  auto s = mul(a, b);
  backward(add(sum(s), sum(mul(s, s))));
  for (std::size_t i = 0; i < 2; ++i) {
    const double si = a.data()[i] * b.data()[i];
    EXPECT_NEAR(a.grad()[i], (1 + 2 * si) * b.data()[i], 1e-12);
    EXPECT_NEAR(b.grad()[i], (1 + 2 * si) * a.data()[i], 1e-12);
  }
}

TEST(Backward, GradientsAccumulateAcrossCalls) {
  auto x = T64::from({1}, {2.0}, true);
  backward(sum(mul(x, x)));
  backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, NonScalarLossThrows) {
  auto x = T64::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(mul(x, x)), DimensionError);
}

TEST(Determinism, ForwardAndGradientsBitwise) {
  auto run = [] {
    std::mt19937_64 rng(15);
    auto a = random_tensor({4, 8}, rng);
    auto w = random_tensor({8, 24}, rng);
    auto loss = weighted_sum(causal_attention(matmul(a, w), 2, AttentionLayout::single(4)));
    backward(loss);
    std::vector<double> out{loss.item()};
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ZeroGradientLeavesParameter) {
  auto p = T32::from({2}, {1.0f, -2.0f}, true);
  Adam<float> opt({p}, {});
  p.mutable_grad()[0] = 0;
  p.mutable_grad()[1] = 0;
  opt.step();
  EXPECT_EQ(p.data()[0], 1.0f);
  EXPECT_EQ(p.data()[1], -2.0f);
  EXPECT_FALSE(p.has_grad());
}

TEST(Adam, FirstStepIsLrTimesSign) {
  auto p = T64::from({3}, {0.0, 0.0, 0.0}, true);
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam<double> opt({p}, cfg);
  const std::vector<double> g = {0.3, -5.0, 1e-3};
  for (std::size_t i = 0; i < 3; ++i) p.mutable_grad()[i] = g[i];
  opt.step();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p.data()[i], -0.01 * (g[i] > 0 ? 1 : -1), 1e-6);
}

TEST(Adam, MissingGradientIsAnError) {
  auto p = T32::zeros({2}, true);
  Adam<float> opt({p}, {});
  EXPECT_THROW(opt.step(), std::logic_error);
}

TEST(Adam, QuadraticBowlDecreasesMonotonically) {
  auto p = T64::from({4}, {3.0, -2.0, 1.5, 4.0}, true);
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam<double> opt({p}, cfg);
  double prev = 1e300;
  for (int i = 0; i < 100; ++i) {
    auto loss = sum(mul(p, p));
    EXPECT_LT(loss.item(), prev);
    prev = loss.item();
    backward(loss);
    opt.step();
  }
  EXPECT_LT(prev, 0.5 * (9.0 + 4.0 + 2.25 + 16.0));
}
