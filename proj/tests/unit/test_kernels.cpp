#include <gtest/gtest.h>

#include <omp.h>

#include "saf/gemm.hpp"
#include "saf/kernels.hpp"
#include "saf/reference.hpp"
#include "../support/gradcheck.hpp"

namespace saf {
namespace {

using testing::random_tensor;
using testing::relative_error;

constexpr int kSeeds = 20;

TEST(Conv, ZeroInputGivesZeroOutput) {
  Tensor<double> x({1, 1, 3, 3});
  auto w = random_tensor({2, 1, 2, 2}, 1);
  Tensor<double> b({2});
  const auto y = conv2d_forward(x, w, b, 1, 0);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv, IdentityKernel) {
  auto x = random_tensor({2, 1, 4, 5}, 2);
  Tensor<double> w({1, 1, 1, 1}, 1.0);
  Tensor<double> b({1});
  EXPECT_EQ(conv2d_forward(x, w, b, 1, 0), x);
}

TEST(Conv, OutputExtent) {
  EXPECT_EQ(conv_output_extent(28, 5, 1, 0), 24u);
  EXPECT_EQ(conv_output_extent(32, 5, 1, 2), 32u);
  EXPECT_EQ(conv_output_extent(7, 3, 2, 1), 4u);
  auto y = conv2d_forward(random_tensor({1, 2, 7, 7}, 3), random_tensor({3, 2, 3, 3}, 4), Tensor<double>({3}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 4, 4}));
}

TEST(Conv, MatchesDirectLoop) {
  for (int s = 0; s < kSeeds; ++s) {
    auto x = random_tensor({1, 2, 5, 5}, s);
    auto w = random_tensor({3, 2, 3, 3}, s + 100);
    auto b = random_tensor({3}, s + 200);
    const std::size_t stride = 1 + s % 2, pad = s % 3;
    EXPECT_LT(relative_error(conv2d_forward(x, w, b, stride, pad), reference::conv2d_forward(x, w, b, stride, pad)),
              1e-12);
  }
}

TEST(Conv, BackwardMatchesReference) {
  for (int s = 0; s < 5; ++s) {
    auto x = random_tensor({2, 3, 6, 6}, s);
    auto w = random_tensor({4, 3, 3, 3}, s + 100);
    const auto up = random_tensor(conv2d_forward(x, w, Tensor<double>({4}), 1, 1).shape(), s + 200);
    const auto fast = conv2d_backward(x, w, up, 1, 1);
    const auto ref = reference::conv2d_backward(x, w, up, 1, 1);
    EXPECT_LT(relative_error(fast.input_grad, ref.input_grad), 1e-12);
    EXPECT_LT(relative_error(fast.param_grads[0], ref.param_grads[0]), 1e-12);
    EXPECT_LT(relative_error(fast.param_grads[1], ref.param_grads[1]), 1e-12);
  }
}

TEST(Conv, ScalarChainRule) {
  Tensor<double> x({1, 1, 1, 1}, 3.0), w({1, 1, 1, 1}, -2.0), up({1, 1, 1, 1}, 0.5);
  const auto g = conv2d_backward(x, w, up, 1, 0);
  EXPECT_DOUBLE_EQ(g.param_grads[0][0], 1.5);
  EXPECT_DOUBLE_EQ(g.param_grads[1][0], 0.5);
  EXPECT_DOUBLE_EQ(g.input_grad[0], -1.0);
}

TEST(Conv, ZeroUpstreamGivesZeroGrads) {
  auto x = random_tensor({1, 2, 5, 5}, 5);
  auto w = random_tensor({3, 2, 3, 3}, 6);
  const auto g = conv2d_backward(x, w, Tensor<double>({1, 3, 3, 3}), 1, 0);
  for (double v : g.input_grad.data()) EXPECT_EQ(v, 0.0);
  for (const auto& p : g.param_grads)
    for (double v : p.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv, ShapeMismatchThrows) {
  EXPECT_THROW(conv2d_forward(random_tensor({1, 2, 5, 5}, 1), random_tensor({3, 1, 3, 3}, 2), Tensor<double>({3}), 1, 0),
               DimensionError);
  EXPECT_THROW(conv2d_forward(random_tensor({1, 2, 5, 5}, 1), random_tensor({3, 2, 3, 3}, 2), Tensor<double>({2}), 1, 0),
               DimensionError);
  EXPECT_THROW(conv2d_backward(random_tensor({1, 2, 5, 5}, 1), random_tensor({3, 2, 3, 3}, 2), Tensor<double>({1, 3, 2, 2}), 1, 0),
               DimensionError);
}

TEST(Conv, FiniteDifferences) {
  for (int s = 0; s < kSeeds; ++s) EXPECT_LT(testing::check_conv(s).worst(), 1e-4) << "seed " << s;
}

TEST(Pool, DirectDefinition) {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(maxpool_forward(x, 2, 2)[0], 4.0);
  EXPECT_EQ(avgpool_forward(x, 2, 2)[0], 2.5);
}

TEST(Pool, ConstantField) {
  Tensor<double> x({2, 3, 6, 6}, 7.25);
  const auto mx = maxpool_forward(x, 2, 2);
  const auto av = avgpool_forward(x, 3, 3);
  for (double v : mx.data()) EXPECT_EQ(v, 7.25);
  for (double v : av.data()) EXPECT_EQ(v, 7.25);
}

TEST(Pool, MaxTieRoutesToFirstIndex) {
  Tensor<double> x({1, 1, 2, 2}, 1.0);
  const auto g = maxpool_backward(x, Tensor<double>({1, 1, 1, 1}, 1.0), 2, 2);
  EXPECT_EQ(g.storage(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Pool, WindowLargerThanInputThrows) {
  EXPECT_THROW(maxpool_forward(Tensor<double>({1, 1, 2, 2}), 3, 1), DimensionError);
  EXPECT_THROW(avgpool_forward(Tensor<double>({1, 1, 3, 2}), 3, 1), DimensionError);
}

TEST(Pool, WindowProperties) {
  for (int s = 0; s < 5; ++s) {
    auto x = random_tensor({2, 2, 6, 6}, s);
    const auto mx = maxpool_forward(x, 2, 2);
    const auto av = avgpool_forward(x, 2, 2);
    EXPECT_EQ(mx, reference::maxpool_forward(x, 2, 2));
    EXPECT_LT(relative_error(av, reference::avgpool_forward(x, 2, 2)), 1e-15);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 3; ++j) {
            double sum = 0.0;
            for (std::size_t a = 0; a < 2; ++a)
              for (std::size_t b = 0; b < 2; ++b) {
                EXPECT_GE(mx.at(n, c, i, j), x.at(n, c, 2 * i + a, 2 * j + b));
                sum += x.at(n, c, 2 * i + a, 2 * j + b);
              }
            EXPECT_NEAR(av.at(n, c, i, j), sum / 4.0, 1e-15);
          }
  }
}

TEST(Pool, FiniteDifferences) {
  for (int s = 0; s < kSeeds; ++s) {
    EXPECT_LT(testing::check_maxpool(s).worst(), 1e-4) << "seed " << s;
    EXPECT_LT(testing::check_avgpool(s).worst(), 1e-4) << "seed " << s;
  }
}

TEST(Linear, IdentityAndConstant) {
  auto x = random_tensor({3, 4}, 1);
  Tensor<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  EXPECT_EQ(linear_forward(x, eye, Tensor<double>({4})), x);
  Tensor<double> v({2}, std::vector<double>{0.5, -3.0});
  const auto y = linear_forward(x, Tensor<double>({2, 4}), v);
  for (std::size_t n = 0; n < 3; ++n) {
    EXPECT_EQ(y[n * 2], 0.5);
    EXPECT_EQ(y[n * 2 + 1], -3.0);
  }
}

TEST(Linear, FlattensSpatialInput) {
  auto x = random_tensor({2, 2, 3, 3}, 1);
  auto w = random_tensor({5, 18}, 2);
  auto b = random_tensor({5}, 3);
  EXPECT_EQ(linear_forward(x, w, b), linear_forward(x.reshaped({2, 18}), w, b));
  EXPECT_LT(relative_error(linear_forward(x, w, b), reference::linear_forward(x, w, b)), 1e-14);
  EXPECT_THROW(linear_forward(x, random_tensor({5, 17}, 2), b), DimensionError);
}

TEST(Linear, FiniteDifferences) {
  for (int s = 0; s < kSeeds; ++s) EXPECT_LT(testing::check_linear(s).worst(), 1e-4) << "seed " << s;
}

TEST(BatchNorm, ConstantChannelNormalizesToZero) {
  Tensor<double> x({4, 2, 3, 3}, 5.0);
  const auto stats = batchnorm_init_stats<double>(2);
  const auto y = batchnorm_forward(x, Tensor<double>({2}, 1.0), Tensor<double>({2}), stats, Mode::Train, {});
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, StandardizedInputIsFixedPoint) {
  // Each channel takes values +-1 with equal counts: mean 0, population variance 1.
  Tensor<double> x({4, 1, 1, 2}, std::vector<double>{1, -1, -1, 1, 1, -1, -1, 1});
  const auto stats = batchnorm_init_stats<double>(1);
  const auto y = batchnorm_forward(x, Tensor<double>({1}, 1.0), Tensor<double>({1}), stats, Mode::Train, {});
  EXPECT_LT(relative_error(y, x), 1e-5);
}

TEST(BatchNorm, RunningStatisticsUpdate) {
  auto x = random_tensor({6, 2, 2, 2}, 3, 0.0, 4.0);
  auto stats = batchnorm_init_stats<double>(2);
  auto update = stats;
  const BatchNormConfig cfg;
  batchnorm_forward(x, Tensor<double>({2}, 1.0), Tensor<double>({2}), stats, Mode::Train, cfg, &update);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t n = 0; n < 6; ++n)
      for (std::size_t k = 0; k < 4; ++k) mean += x[(n * 2 + c) * 4 + k];
    mean /= 24.0;
    for (std::size_t n = 0; n < 6; ++n)
      for (std::size_t k = 0; k < 4; ++k) var += std::pow(x[(n * 2 + c) * 4 + k] - mean, 2);
    var /= 24.0;
    EXPECT_NEAR(update.running_mean[c], 0.9 * stats.running_mean[c] + 0.1 * mean, 1e-12);
    // The running variance folds in the unbiased batch estimate.
    EXPECT_NEAR(update.running_var[c], 0.9 * stats.running_var[c] + 0.1 * var * 24.0 / 23.0, 1e-12);
  }
}

TEST(BatchNorm, EvalUsesRunningStatistics) {
  auto x = random_tensor({3, 1, 2, 2}, 4);
  BatchNormStats<double> stats{Tensor<double>({1}, 0.5), Tensor<double>({1}, 4.0)};
  const auto y = batchnorm_forward(x, Tensor<double>({1}, 2.0), Tensor<double>({1}, 1.0), stats, Mode::Eval, {});
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], 2.0 * (x[i] - 0.5) / std::sqrt(4.0 + 1e-5) + 1.0, 1e-12);
}

TEST(BatchNorm, SingleSampleTrainBatchThrows) {
  const auto stats = batchnorm_init_stats<double>(1);
  EXPECT_THROW(batchnorm_forward(random_tensor({1, 1, 3, 3}, 1), Tensor<double>({1}, 1.0), Tensor<double>({1}), stats,
                                 Mode::Train, {}),
               DimensionError);
}

TEST(BatchNorm, FiniteDifferences) {
  for (int s = 0; s < kSeeds; ++s) {
    EXPECT_LT(testing::check_batchnorm(s, Mode::Train).worst(), 1e-3) << "seed " << s;
    EXPECT_LT(testing::check_batchnorm(s, Mode::Eval).worst(), 1e-3) << "seed " << s;
  }
}

TEST(Gemm, MatchesReferenceInAllLayouts) {
  const std::size_t m = 37, n = 29, k = 53;
  auto a = random_tensor({m * k}, 1);
  auto b = random_tensor({k * n}, 2);
  Tensor<double> ref({m * n});
  reference::gemm(m, n, k, a.raw(), b.raw(), ref.raw());
  Tensor<double> c({m * n});
  gemm(Transpose::No, Transpose::No, m, n, k, a.raw(), b.raw(), c.raw());
  EXPECT_LT(relative_error(c, ref), 1e-14);

  Tensor<double> at({k * m}), bt({n * k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) at[j * m + i] = a[i * k + j];
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];
  gemm(Transpose::Yes, Transpose::Yes, m, n, k, at.raw(), bt.raw(), c.raw());
  EXPECT_LT(relative_error(c, ref), 1e-14);
  gemm(Transpose::Yes, Transpose::No, m, n, k, at.raw(), b.raw(), c.raw(), true);
  for (auto& v : ref.data()) v *= 2.0;
  EXPECT_LT(relative_error(c, ref), 1e-14);
}

TEST(Determinism, ResultsIndependentOfThreadCount) {
  const int saved = omp_get_max_threads();
  auto x = random_tensor({4, 3, 12, 12}, 1).cast<float>();
  auto w = random_tensor({8, 3, 5, 5}, 2).cast<float>();
  auto b = random_tensor({8}, 3).cast<float>();
  auto run = [&] {
    auto y = conv2d_forward(x, w, b, 1, 2);
    auto g = conv2d_backward(x, w, y, 1, 2);
    auto p = maxpool_forward(y, 2, 2);
    auto l = linear_forward(p, random_tensor({10, 8 * 6 * 6}, 4).cast<float>(), Tensor<float>({10}));
    return std::vector<Tensor<float>>{y, g.input_grad, g.param_grads[0], g.param_grads[1], p, l};
  };
  omp_set_num_threads(1);
  const auto one = run();
  omp_set_num_threads(4);
  const auto four = run();
  omp_set_num_threads(saved);
  ASSERT_EQ(one.size(), four.size());
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(one[i], four[i]) << "output " << i;
}

}  // namespace
}  // namespace saf
