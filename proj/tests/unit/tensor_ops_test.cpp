// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include "rge/error.hpp"
#include "rge/gradcheck.hpp"
#include "rge/ops.hpp"
#include "support/test_util.hpp"

namespace rge {
namespace {

using testing::random_tensor;
using testing::weighted_sum;
using T64 = Tensor<double>;

constexpr double kOpTolerance = 1e-4;

double check(const std::function<T64()>& loss, std::vector<T64> params) {
  return finite_diff_check<double>(loss, std::move(params), 1e-6).max_rel_error;
}

TEST(TensorTest, FromDataValidatesSize) {
  EXPECT_THROW(Tensor<float>::from_data({2, 2}, {1, 2, 3}), DimensionError);
  const auto t = Tensor<float>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_FLOAT_EQ(t.at(1, 2), 6.0f);
}

TEST(TensorTest, NoGradGuardRecordsNothing) {
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const auto a = random_tensor<double>({2, 2}, 1);
  {
    NoGradGuard guard;
    (void)ops::add(a, a);
  }
  EXPECT_EQ(tape.size(), 0u);
  (void)ops::add(a, a);
  EXPECT_EQ(tape.size(), 1u);
}

TEST(TensorTest, GradientsAccumulateAcrossUses) {
  const auto a = random_tensor<double>({1, 3}, 2);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const auto loss = ops::sum(ops::add(a, a));
  tape.backward(loss);
  for (double g : a.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(OpsTest, MatmulMatchesHandProduct) {
  const auto a = T64::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto b = T64::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
  const auto c = ops::matmul(a, b);
  const std::vector<double> expected = {58, 64, 139, 154};
  ASSERT_EQ(c.shape(), (Shape{2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(c.data()[i], expected[i]);
  const auto bt = T64::from_data({2, 3}, {7, 9, 11, 8, 10, 12});
  const auto c2 = ops::matmul_nt(a, bt);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(c2.data()[i], expected[i]);
  EXPECT_THROW(ops::matmul(a, a), DimensionError);
}

TEST(OpsTest, ElementwiseRequiresIdenticalShapes) {
  const auto a = random_tensor<double>({2, 3}, 1);
  const auto b = random_tensor<double>({3, 2}, 2);
  EXPECT_THROW(ops::add(a, b), DimensionError);
  EXPECT_THROW(ops::mul(a, b), DimensionError);
}

TEST(OpsTest, GeluMatchesTanhForm) {
  const auto x = T64::from_data({1, 3}, {-1.0, 0.0, 1.5});
  const auto y = ops::gelu(x);
  for (std::size_t i = 0; i < 3; ++i) {
    const double v = x.data()[i];
    const double ref = 0.5 * v * (1 + std::tanh(std::sqrt(2 / std::numbers::pi) * (v + 0.044715 * v * v * v)));
    EXPECT_NEAR(y.data()[i], ref, 1e-15);
  }
}

TEST(OpsTest, LogSoftmaxRowsNormalize) {
  const auto x = random_tensor<double>({3, 5}, 4, 3.0);
  const auto y = ops::log_softmax_lastdim(x);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += std::exp(y.at(r, c));
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(OpsTest, LogSoftmaxSurvivesLargeLogits) {
  const auto x = T64::from_data({1, 2}, {1000.0, 0.0});
  const auto y = ops::log_softmax_lastdim(x);
  EXPECT_NEAR(y.data()[0], 0.0, 1e-12);
  EXPECT_NEAR(y.data()[1], -1000.0, 1e-9);
}

TEST(OpsTest, CausalSoftmaxHidesFuture) {
  const auto x = random_tensor<double>({3, 5}, 5);
  const auto y = ops::causal_softmax(x, 2);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      if (c > r + 2) {
        EXPECT_EQ(y.at(r, c), 0.0);
      }
      s += y.at(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(OpsTest, LayerNormStandardizesRows) {
  const auto x = random_tensor<double>({2, 8}, 6, 4.0);
  const auto gain = T64::from_data({8}, std::vector<double>(8, 1.0));
  const auto bias = T64::from_data({8}, std::vector<double>(8, 0.0));
  const auto y = ops::layer_norm(x, gain, bias);
  for (std::size_t r = 0; r < 2; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 8; ++c) mean += y.at(r, c) / 8;
    for (std::size_t c = 0; c < 8; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean) / 8;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(OpsTest, CosineZeroNormRowIsZero) {
  const auto q = T64::from_data({2, 2}, {0, 0, 3, 4});
  const auto t = T64::from_data({1, 2}, {6, 8});
  const auto s = ops::cosine_similarity_matrix(q, t);
  EXPECT_EQ(s.at(0, 0), 0.0);
  EXPECT_NEAR(s.at(1, 0), 1.0, 1e-15);
}

TEST(OpsTest, GatherAndSliceSelectRows) {
  const auto table = T64::from_data({3, 2}, {0, 1, 10, 11, 20, 21});
  const std::vector<std::int32_t> ids = {2, 0, 2};
  const auto g = ops::gather_rows(table, std::span<const std::int32_t>(ids));
  EXPECT_EQ(g.shape(), (Shape{3, 2}));
  EXPECT_EQ(g.at(0, 1), 21.0);
  EXPECT_EQ(g.at(1, 0), 0.0);
  const auto s = ops::slice_cols(table, 1, 1);
  EXPECT_EQ(s.shape(), (Shape{3, 1}));
  EXPECT_EQ(s.at(2, 0), 21.0);
  const std::vector<std::int32_t> bad = {3};
  EXPECT_THROW(ops::gather_rows(table, std::span<const std::int32_t>(bad)), DimensionError);
}

// Finite-difference checks, one per differentiable operation.

TEST(GradCheckTest, Matmul) {
  const auto a = random_tensor<double>({3, 4}, 1);
  const auto b = random_tensor<double>({4, 2}, 2);
  EXPECT_LT(check([&] { return weighted_sum(ops::matmul(a, b), 9); }, {a, b}), kOpTolerance);
}

TEST(GradCheckTest, MatmulTransposed) {
  const auto a = random_tensor<double>({3, 4}, 1);
  const auto b = random_tensor<double>({2, 4}, 2);
  EXPECT_LT(check([&] { return weighted_sum(ops::matmul_nt(a, b), 9); }, {a, b}), kOpTolerance);
}

TEST(GradCheckTest, AddSubMulScale) {
  const auto a = random_tensor<double>({2, 3}, 1);
  const auto b = random_tensor<double>({2, 3}, 2);
  EXPECT_LT(check([&] { return weighted_sum(ops::add(a, b), 9); }, {a, b}), kOpTolerance);
  EXPECT_LT(check([&] { return weighted_sum(ops::sub(a, b), 9); }, {a, b}), kOpTolerance);
  EXPECT_LT(check([&] { return weighted_sum(ops::mul(a, b), 9); }, {a, b}), kOpTolerance);
  EXPECT_LT(check([&] { return weighted_sum(ops::scale(a, 2.5), 9); }, {a}), kOpTolerance);
}

TEST(GradCheckTest, Gelu) {
  const auto x = random_tensor<double>({2, 5}, 3, 2.0);
  EXPECT_LT(check([&] { return weighted_sum(ops::gelu(x), 9); }, {x}), kOpTolerance);
}

TEST(GradCheckTest, LogSoftmax) {
  const auto x = random_tensor<double>({3, 6}, 4);
  EXPECT_LT(check([&] { return weighted_sum(ops::log_softmax_lastdim(x), 9); }, {x}), kOpTolerance);
}

TEST(GradCheckTest, CausalSoftmax) {
  const auto x = random_tensor<double>({4, 6}, 5);
  EXPECT_LT(check([&] { return weighted_sum(ops::causal_softmax(x, 1), 9); }, {x}), kOpTolerance);
}

TEST(GradCheckTest, LayerNorm) {
  const auto x = random_tensor<double>({3, 6}, 6);
  const auto gain = random_tensor<double>({6}, 7);
  const auto bias = random_tensor<double>({6}, 8);
  EXPECT_LT(check([&] { return weighted_sum(ops::layer_norm(x, gain, bias), 9); }, {x, gain, bias}), kOpTolerance);
}

TEST(GradCheckTest, CosineSimilarity) {
  const auto q = random_tensor<double>({3, 5}, 1);
  const auto t = random_tensor<double>({4, 5}, 2);
  EXPECT_LT(check([&] { return weighted_sum(ops::cosine_similarity_matrix(q, t), 9); }, {q, t}), kOpTolerance);
}

TEST(GradCheckTest, GatherRowsAccumulatesRepeats) {
  const auto table = random_tensor<double>({4, 3}, 1);
  const std::vector<std::int32_t> ids = {1, 3, 1, 0};
  EXPECT_LT(check([&] { return weighted_sum(ops::gather_rows(table, std::span<const std::int32_t>(ids)), 9); },
                  {table}),
            kOpTolerance);
}

TEST(GradCheckTest, SlicesAndConcats) {
  const auto a = random_tensor<double>({4, 6}, 1);
  const auto b = random_tensor<double>({2, 6}, 2);
  const auto c = random_tensor<double>({4, 2}, 3);
  EXPECT_LT(check([&] { return weighted_sum(ops::slice_rows(a, 1, 2), 9); }, {a}), kOpTolerance);
  EXPECT_LT(check([&] { return weighted_sum(ops::slice_cols(a, 2, 3), 9); }, {a}), kOpTolerance);
  EXPECT_LT(check([&] { return weighted_sum(ops::concat_rows<double>({a, b}), 9); }, {a, b}), kOpTolerance);
  EXPECT_LT(check([&] { return weighted_sum(ops::concat_cols<double>({a, c}), 9); }, {a, c}), kOpTolerance);
}

TEST(GradCheckTest, ReshapeSumMean) {
  const auto a = random_tensor<double>({2, 6}, 1);
  EXPECT_LT(check([&] { return weighted_sum(ops::reshape(a, {3, 4}), 9); }, {a}), kOpTolerance);
  EXPECT_LT(check([&] { return ops::mean(ops::mul(a, a)); }, {a}), kOpTolerance);
  EXPECT_LT(check([&] { return ops::sum(ops::gelu(a)); }, {a}), kOpTolerance);
}

TEST(GradCheckTest, GatherElements) {
  const auto x = random_tensor<double>({3, 4}, 1);
  const std::vector<std::pair<std::size_t, std::size_t>> idx = {{0, 1}, {2, 3}, {0, 1}};
  EXPECT_LT(check([&] { return weighted_sum(ops::gather_elements(x, std::span(idx)), 9); }, {x}), kOpTolerance);
}

TEST(GradCheckTest, FlagsAMissingGradientPath) {
  // x * x enters through detached copies, so the tape only sees the linear
  // term and the check must report the mismatch.
  const auto x = random_tensor<double>({1, 3}, 2);
  const auto r = finite_diff_check<double>(
      [&] { return ops::sum(ops::add(ops::mul(x.detach(), x.detach()), x)); }, {x}, 1e-6);
  EXPECT_GT(r.max_rel_error, 1e-2);
}

}  // namespace
}  // namespace rge
