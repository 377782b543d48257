#include <gtest/gtest.h>

#include <cmath>

#include "stablekd/errors.hpp"
#include "stablekd/ops.hpp"
#include "stablekd/random.hpp"

namespace skd {
namespace {

// Naive reference implementations used as oracles.

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  Tensor<double> out(Shape{n, m}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * m + j];
      out[i * m + j] = acc;
    }
  }
  return out;
}

Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride,
                          std::size_t pad) {
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const std::size_t f = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor<double> out(Shape{n, f, oh, ow}, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                acc += x[((b * c + ch) * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)] *
                       w[((o * c + ch) * kh + ky) * kw + kx];
              }
          out[((b * f + o) * oh + y) * ow + xx] = acc;
        }
  return out;
}

Tensor<double> random_tensor(Shape shape, Rng& rng) {
  Tensor<double> t(shape, 0.0);
  for (double& v : t.values()) v = rng.normal();
  return t;
}

Tensor<double> eval_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  Tape<double> tape;
  return matmul(tape.constant(a), tape.constant(b)).value();
}

TEST(MatMul, IdentityAndZero) {
  const auto a = Tensor<double>::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(eval_matmul(a, Tensor<double>::matrix({{1, 0}, {0, 1}})), a);
  EXPECT_EQ(eval_matmul(a, Tensor<double>::matrix({{0, 0}, {0, 0}})),
            Tensor<double>::matrix({{0, 0}, {0, 0}}));
}

TEST(MatMul, MatchesDotProductOracle) {
  const auto a = Tensor<double>::matrix({{1, 2}, {3, 4}});
  const auto b = Tensor<double>::matrix({{5}, {6}});
  const auto got = eval_matmul(a, b);
  EXPECT_EQ(got, naive_matmul(a, b));
  EXPECT_EQ(got, Tensor<double>::matrix({{17}, {39}}));
}

TEST(MatMul, RandomShapesMatchOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 1 + rng.below(6), k = 1 + rng.below(7), m = 1 + rng.below(5);
    const auto a = random_tensor(Shape{n, k}, rng), b = random_tensor(Shape{k, m}, rng);
    const auto got = eval_matmul(a, b), want = naive_matmul(a, b);
    for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(MatMul, IncompatibleShapesThrow) {
  Tape<double> tape;
  EXPECT_THROW(matmul(tape.constant(Tensor<double>(Shape{2, 3})), tape.constant(Tensor<double>(Shape{2, 3}))),
               DimensionError);
}

TEST(Conv2d, IdentityKernelAndZeroKernel) {
  Tape<double> tape;
  const Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(conv2d(tape.constant(x), tape.constant(Tensor<double>(Shape{1, 1, 1, 1}, 1.0)), 1, 0).value(), x);
  const auto zero = conv2d(tape.constant(x), tape.constant(Tensor<double>(Shape{1, 1, 1, 1}, 0.0)), 1, 0);
  for (double v : zero.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, OnesWindowSumsToNine) {
  Tape<double> tape;
  const Tensor<double> x(Shape{1, 1, 3, 3}, 1.0), w(Shape{1, 1, 3, 3}, 1.0);
  const auto y = conv2d(tape.constant(x), tape.constant(w), 1, 0).value();
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], naive_conv(x, w, 1, 0)[0]);
  EXPECT_EQ(y[0], 9.0);
}

TEST(Conv2d, RandomConfigurationsMatchOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
    const std::size_t c = 1 + rng.below(3), f = 1 + rng.below(4);
    // Odd padded extent keeps stride 2 integral for a 3-wide kernel.
    const std::size_t side = 5 + 2 * rng.below(2) - 2 * pad;
    const auto x = random_tensor(Shape{2, c, side, side}, rng);
    const auto w = random_tensor(Shape{f, c, 3, 3}, rng);
    Tape<double> tape;
    const auto got = conv2d(tape.constant(x), tape.constant(w), stride, pad).value();
    const auto want = naive_conv(x, w, stride, pad);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2d, NonIntegralExtentIsConfigError) {
  Tape<double> tape;
  const Tensor<double> x(Shape{1, 1, 4, 4}, 1.0), w(Shape{1, 1, 3, 3}, 1.0);
  EXPECT_THROW(conv2d(tape.constant(x), tape.constant(w), 2, 0), ConfigError);
}

TEST(Relu, SignCasesAndGate) {
  Tape<double> tape;
  EXPECT_EQ(relu(tape.constant(Tensor<double>::vector({-1, 0, 2}))).value(),
            Tensor<double>::vector({0, 0, 2}));
  const auto nan = relu(tape.constant(Tensor<double>::vector({std::nan("")}))).value();
  EXPECT_TRUE(std::isnan(nan[0]));
  const auto pos = Tensor<double>::vector({0.5, 3});
  EXPECT_EQ(relu(tape.constant(pos)).value(), pos);

  Tape<double> t2;
  Parameter<double> x{"x", Tensor<double>::vector({-1, 2}), true};
  const auto g = t2.backward(sum(relu(t2.parameter(x)))).at("x");
  EXPECT_EQ(g, Tensor<double>::vector({0, 1}));
}

TEST(AvgPool, MeanOfWindow) {
  Tape<double> tape;
  const Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 3, 5, 7});
  const auto y = avgpool2d(tape.constant(x), 2).value();
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], (1.0 + 3.0 + 5.0 + 7.0) / 4.0);
  EXPECT_EQ(y[0], 4.0);
}

TEST(AvgPool, ConstantMapAndUnitWindow) {
  Tape<double> tape;
  const Tensor<double> c(Shape{1, 2, 4, 4}, 2.5);
  const auto y = avgpool2d(tape.constant(c), 2).value();
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 2.5);
  Rng rng(3);
  const auto x = random_tensor(Shape{2, 1, 3, 3}, rng);
  EXPECT_EQ(avgpool2d(tape.constant(x), 1).value(), x);
  EXPECT_THROW(avgpool2d(tape.constant(x), 2), ConfigError);
}

TEST(Affine, IdentityZeroAndHandArithmetic) {
  Tape<double> tape;
  const auto x = Tensor<double>::matrix({{1, 1}});
  const auto w = Tensor<double>::matrix({{1, 2}, {3, 4}});
  const auto b = Tensor<double>::vector({10, 10});
  const auto y = affine(tape.constant(x), tape.constant(w), tape.constant(b)).value();
  // Oracle: x·W + b by explicit dot products.
  EXPECT_EQ(y[0], 1 * 1 + 1 * 3 + 10.0);
  EXPECT_EQ(y[1], 1 * 2 + 1 * 4 + 10.0);
  EXPECT_EQ(y, Tensor<double>::matrix({{14, 16}}));

  const auto eye = Tensor<double>::matrix({{1, 0}, {0, 1}});
  const auto zb = Tensor<double>::vector({0, 0});
  const auto xs = Tensor<double>::matrix({{3, -2}, {0.5, 7}});
  EXPECT_EQ(affine(tape.constant(xs), tape.constant(eye), tape.constant(zb)).value(), xs);
  const auto rows =
      affine(tape.constant(Tensor<double>(Shape{3, 2}, 0.0)), tape.constant(w), tape.constant(b)).value();
  for (std::size_t i = 0; i < rows.numel(); ++i) EXPECT_EQ(rows[i], 10.0);
}

TEST(Flatten, KeepsBatchAndOrder) {
  Tape<double> tape;
  Rng rng(5);
  const auto x = random_tensor(Shape{2, 3, 2, 2}, rng);
  const auto y = flatten(tape.constant(x)).value();
  EXPECT_EQ(y.shape(), (Shape{2, 12}));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(ConvOutputExtent, Arithmetic) {
  EXPECT_EQ(conv_output_extent(8, 3, 1, 1), 8u);
  EXPECT_EQ(conv_output_extent(5, 3, 2, 1), 3u);
  EXPECT_THROW(conv_output_extent(2, 5, 1, 0), ConfigError);
}

}  // namespace
}  // namespace skd
