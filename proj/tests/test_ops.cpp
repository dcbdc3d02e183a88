#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "gradcheck.hpp"
#include "lip2us/ops.hpp"

using namespace lip2us;
using lip2us::testing::grad_check;
using lip2us::testing::random_tensor;

namespace {

// Straight loops over the definition of cross-correlation with zero padding.
std::vector<double> naive_conv(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad,
                               std::size_t& oh, std::size_t& ow) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  oh = (H + 2 * pad - kh) / stride + 1;
  ow = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out(B * O * oh * ow);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = b.value(o);
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y * stride + i) - pad;
                const long ix = static_cast<long>(xx * stride + j) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                acc += x.value(((n * C + c) * H + iy) * W + ix) * k.value(((o * C + c) * kh + i) * kw + j);
              }
          out[((n * O + o) * oh + y) * ow + xx] = acc;
        }
  return out;
}

// Weighted sum so every output element gets a distinct upstream gradient.
Tensor weighted(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  return sum(mul(y, random_tensor(y.shape(), g)));
}

}  // namespace

TEST(Conv2d, MatchesNaiveLoopsOnRandomShapes) {
  std::mt19937_64 g(11);
  std::uniform_int_distribution<int> small(1, 4), side(3, 11), kern(1, 3), str(1, 3), pad(0, 2);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t B = small(g), C = small(g), O = small(g), H = side(g), W = side(g);
    const std::size_t k = 2 * kern(g) - 1;
    const int s = str(g), p = std::min<int>(pad(g), static_cast<int>(k / 2));
    if (H + 2 * p < k || W + 2 * p < k) continue;
    Tensor x = random_tensor({B, C, H, W}, g), w = random_tensor({O, C, k, k}, g), b = random_tensor({O}, g);
    std::size_t oh, ow;
    const auto want = naive_conv(x, w, b, s, p, oh, ow);
    const Tensor y = conv2d(x, w, b, s, p);
    ASSERT_EQ(y.shape(), (Shape{B, O, oh, ow})) << "trial " << trial;
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(y.value(i), want[i], 1e-12) << "trial " << trial;
  }
}

TEST(Conv2d, SingleImageDropsBatchAxis) {
  std::mt19937_64 g(1);
  Tensor x = random_tensor({2, 5, 5}, g), w = random_tensor({3, 2, 3, 3}, g), b = random_tensor({3}, g);
  const Tensor y = conv2d(x, w, b, 1, 1);
  EXPECT_EQ(y.shape(), (Shape{3, 5, 5}));
  const Tensor yb = conv2d(reshape(x, {1, 2, 5, 5}), w, b, 1, 1);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.value(i), yb.value(i));
}

TEST(Conv2d, RejectsChannelMismatch) {
  Tensor x({1, 2, 5, 5}, DType::f64), w({3, 4, 3, 3}, DType::f64), b({3}, DType::f64);
  EXPECT_THROW(conv2d(x, w, b), DimensionError);
  EXPECT_THROW(conv2d(x, Tensor({3, 2, 7, 7}, DType::f64), b), DimensionError);
  EXPECT_THROW(conv2d(x, Tensor({3, 2, 3, 3}, DType::f64), b, 0), ConfigError);
}

TEST(MaxPool, MatchesNaiveLoops) {
  std::mt19937_64 g(12);
  std::uniform_int_distribution<int> small(1, 3), side(2, 12), win(1, 3);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t B = small(g), C = small(g), H = side(g), W = side(g);
    const int w = win(g), s = win(g);
    if (static_cast<std::size_t>(w) > std::min(H, W)) continue;
    Tensor x = random_tensor({B, C, H, W}, g);
    const Tensor y = maxpool2d(x, w, s);
    const std::size_t oh = (H - w) / s + 1, ow = (W - w) / s + 1;
    ASSERT_EQ(y.shape(), (Shape{B, C, oh, ow}));
    for (std::size_t n = 0; n < B * C; ++n)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double m = -std::numeric_limits<double>::infinity();
          for (int a = 0; a < w; ++a)
            for (int c = 0; c < w; ++c) m = std::max(m, x.value((n * H + i * s + a) * W + j * s + c));
          ASSERT_EQ(y.value((n * oh + i) * ow + j), m);
        }
  }
}

TEST(MaxPool, TieSendsGradientToFirstCell) {
  Tensor x = Tensor::full({1, 1, 2, 2}, 3.0, DType::f64).set_requires_grad();
  backward(sum(maxpool2d(x, 2, 2)));
  EXPECT_EQ(x.grad().to_vector(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Dense, MatchesNaiveLoops) {
  std::mt19937_64 g(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + g() % 5, I = 1 + g() % 9, O = 1 + g() % 7;
    Tensor x = random_tensor({B, I}, g), w = random_tensor({O, I}, g), b = random_tensor({O}, g);
    const Tensor y = dense(x, w, b);
    ASSERT_EQ(y.shape(), (Shape{B, O}));
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t o = 0; o < O; ++o) {
        double acc = b.value(o);
        for (std::size_t i = 0; i < I; ++i) acc += x.value(n * I + i) * w.value(o * I + i);
        ASSERT_NEAR(y.value(n * O + o), acc, 1e-12);
      }
  }
  Tensor v({4}, DType::f64);
  EXPECT_EQ(dense(v, Tensor({3, 4}, DType::f64)).shape(), (Shape{3}));
  EXPECT_THROW(dense(v, Tensor({3, 5}, DType::f64)), DimensionError);
}

TEST(Activation, ClosedForms) {
  Tensor x = Tensor::from({4}, std::vector<double>{-2.0, -0.5, 0.0, 1.5});
  const auto s = sigmoid(x).to_vector(), t = tanh(x).to_vector(), l = leaky_relu(x, 0.3).to_vector();
  for (std::size_t i = 0; i < 4; ++i) {
    const double v = x.value(i);
    EXPECT_NEAR(s[i], 1.0 / (1.0 + std::exp(-v)), 1e-15);
    EXPECT_NEAR(t[i], std::tanh(v), 1e-15);
    EXPECT_EQ(l[i], v > 0 ? v : 0.3 * v);
  }
}

TEST(GradCheck, Conv2dStridedPadded) {
  std::mt19937_64 g(21);
  Tensor x = random_tensor({2, 3, 7, 6}, g), w = random_tensor({4, 3, 3, 3}, g), b = random_tensor({4}, g);
  const auto r = grad_check([&] { return weighted(conv2d(x, w, b, 2, 1), 5); }, {x, w, b}, 12, 1);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
  EXPECT_EQ(r.points, 28u);
}

TEST(GradCheck, MaxPool) {
  std::mt19937_64 g(22);
  Tensor x = random_tensor({2, 2, 6, 6}, g);
  const auto r = grad_check([&] { return weighted(maxpool2d(x, 2, 2), 6); }, {x}, 20, 2);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(GradCheck, Dense) {
  std::mt19937_64 g(23);
  Tensor x = random_tensor({3, 5}, g), w = random_tensor({4, 5}, g), b = random_tensor({4}, g);
  const auto r = grad_check([&] { return weighted(dense(x, w, b), 7); }, {x, w, b}, 12, 3);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(GradCheck, Activations) {
  std::mt19937_64 g(24);
  Tensor x = random_tensor({20}, g, -3, 3);
  for (const auto kind : {Activation::sigmoid(), Activation::tanh(), Activation::leaky_relu(0.3)}) {
    const auto r = grad_check([&] { return weighted(activation(x, kind), 8); }, {x}, 12, 4);
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
  }
}

TEST(GradCheck, BatchNormTrainAndInfer) {
  std::mt19937_64 g(25);
  Tensor x = random_tensor({4, 3, 3, 3}, g, -2, 2);
  BatchNormParams bn = BatchNormParams::create(3, DType::f64);
  bn.gamma = random_tensor({3}, g, 0.5, 1.5);
  bn.beta = random_tensor({3}, g);
  for (const Mode mode : {Mode::train, Mode::infer}) {
    const auto r = grad_check([&] { return weighted(batchnorm(x, bn, mode), 9); }, {x, bn.gamma, bn.beta}, 12, 5);
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
  }
}

TEST(GradCheck, DropoutWithFixedMask) {
  std::mt19937_64 g(26);
  Tensor x = random_tensor({30}, g);
  const auto r = grad_check(
      [&] {
        std::mt19937_64 rng(77);
        return weighted(dropout(x, 0.4, Mode::train, rng), 10);
      },
      {x}, 15, 6);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(GradCheck, LossAndElementwise) {
  std::mt19937_64 g(27);
  Tensor a = random_tensor({3, 4}, g), b = random_tensor({3, 4}, g), gate = random_tensor({3, 1}, g);
  auto check = [&](const std::function<Tensor()>& f, std::vector<Tensor> in) {
    const auto r = grad_check(f, std::move(in), 12, 7);
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
  };
  check([&] { return mse_loss(a, b); }, {a, b});
  check([&] { return weighted(add(a, b), 1); }, {a, b});
  check([&] { return weighted(mul(a, b), 2); }, {a, b});
  check([&] { return weighted(scale_rows(a, gate), 3); }, {a, gate});
  check([&] { return weighted(concat_cols({a, b}), 4); }, {a, b});
  check([&] { return weighted(concat_rows({a, b}), 5); }, {a, b});
  check([&] { return weighted(slice_rows(a, 1, 3), 6); }, {a});
  check([&] { return weighted(reshape(a, {2, 6}), 7); }, {a});
}

TEST(BatchNorm, TrainNormalizesAndUpdatesRunningStats) {
  std::mt19937_64 g(31);
  Tensor x = random_tensor({8, 2, 4, 4}, g, 3, 7);
  BatchNormParams bn = BatchNormParams::create(2, DType::f64);
  bn.momentum = 0.25;
  const Tensor y = batchnorm(x, bn, Mode::train);
  const std::size_t sp = 16, count = 8 * sp;
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, m2 = 0, xm = 0, xs = 0;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t i = 0; i < sp; ++i) {
        const std::size_t k = (n * 2 + c) * sp + i;
        m += y.value(k);
        m2 += y.value(k) * y.value(k);
        xm += x.value(k);
      }
    m /= count;
    xm /= count;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t i = 0; i < sp; ++i) xs += std::pow(x.value((n * 2 + c) * sp + i) - xm, 2);
    const double var = xs / count;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(m2 / count, var / (var + bn.epsilon), 1e-9);
    EXPECT_NEAR(bn.running_mean.value(c), 0.25 * xm, 1e-12);
    EXPECT_NEAR(bn.running_var.value(c), 0.75 + 0.25 * xs / (count - 1), 1e-12);
  }
}

TEST(BatchNorm, InferUsesRunningStatsOnly) {
  BatchNormParams bn = BatchNormParams::create(1, DType::f64);
  bn.running_mean.set_value(0, 2.0);
  bn.running_var.set_value(0, 4.0);
  bn.epsilon = 1e-12;
  const Tensor y = batchnorm(Tensor::full({1, 1, 2, 2}, 6.0, DType::f64), bn, Mode::infer);
  for (double v : y.to_vector()) EXPECT_NEAR(v, 2.0, 1e-9);
  EXPECT_EQ(bn.running_mean.value(0), 2.0);
  EXPECT_THROW(batchnorm(Tensor({1, 1, 2, 2}, DType::f64), bn, Mode::train), ConfigError);
}

TEST(Dropout, RateAndScaleStatistics) {
  std::mt19937_64 rng(41);
  const std::size_t n = 200000;
  const Tensor x = Tensor::full({n}, 1.0, DType::f64);
  const Tensor y = dropout(x, 0.3, Mode::train, rng);
  std::size_t zeros = 0;
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = y.value(i);
    if (v == 0) ++zeros;
    else EXPECT_NEAR(v, 1.0 / 0.7, 1e-12);
    total += v;
  }
  // Binomial sd of the drop fraction is about 0.001.
  EXPECT_NEAR(static_cast<double>(zeros) / n, 0.3, 0.005);
  EXPECT_NEAR(total / n, 1.0, 0.01);
  const Tensor z = dropout(x, 0.3, Mode::infer, rng);
  EXPECT_TRUE(z.same(x));
  EXPECT_THROW(dropout(x, 1.0, Mode::train, rng), ConfigError);
}

TEST(Autograd, GradientsAccumulateAcrossUses) {
  Tensor a = Tensor::from({2}, std::vector<double>{1.5, -2.0}).set_requires_grad();
  backward(sum(add(mul(a, a), a)));
  EXPECT_EQ(a.grad().to_vector(), (std::vector<double>{4.0, -3.0}));
  backward(sum(a));
  EXPECT_EQ(a.grad().to_vector(), (std::vector<double>{5.0, -2.0}));
  a.zero_grad();
  EXPECT_EQ(a.grad().to_vector(), (std::vector<double>{0.0, 0.0}));
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Tensor a = Tensor::from({2}, std::vector<double>{1, 2}).set_requires_grad();
  Tensor y;
  {
    NoGradGuard guard;
    y = mul(a, a);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_enabled());
}

TEST(Autograd, NonFiniteResultRaises) {
  Tensor a = Tensor::full({2}, 1e300, DType::f64);
  EXPECT_THROW(mul(a, a), NumericError);
  Tensor f = Tensor::full({2}, 1e30, DType::f32);
  EXPECT_THROW(mul(f, f), NumericError);
}

TEST(Autograd, ShapeMismatchesRaise) {
  Tensor a({2, 3}, DType::f64), b({3, 2}, DType::f64);
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(mse_loss(a, b), DimensionError);
  EXPECT_THROW(reshape(a, {4}), DimensionError);
  EXPECT_THROW(slice_rows(a, 1, 3), DimensionError);
  EXPECT_THROW(add(a, Tensor({2, 3}, DType::f32)), Error);
}
