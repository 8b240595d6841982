// Tensor engine: forward-op oracles, analytic-vs-numeric gradient checks in
// double precision, backward accumulation semantics, Adam, clipping.

#include <gtest/gtest.h>

#include <cmath>

#include "slue/tensor.hpp"

using slue::Tensor;

namespace {

// scalar-valued wrapper: fixed random weights dot the flattened output
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& t, const std::vector<T>& w) {
  auto row = reshape(t, {1, static_cast<int>(t.numel())});
  auto wm = Tensor<T>::from({static_cast<int>(t.numel()), 1},
                            std::vector<T>(w.begin(), w.begin() + t.numel()));
  return matmul(row, wm);
}

std::vector<double> rand_vec(std::size_t n, slue::Rng& rng, double s = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * s;
  return v;
}

}  // namespace

TEST(TensorForward, MatmulOracle) {
  auto a = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<float>::from({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (std::vector<int>{2, 2}));
  EXPECT_FLOAT_EQ(c.data()[0], 58);
  EXPECT_FLOAT_EQ(c.data()[1], 64);
  EXPECT_FLOAT_EQ(c.data()[2], 139);
  EXPECT_FLOAT_EQ(c.data()[3], 154);
}

TEST(TensorForward, MatmulShapeError) {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({2, 2});
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const slue::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2,2]"), std::string::npos);
  }
}

TEST(TensorForward, AddBroadcastRow) {
  auto a = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<float>::from({3}, {10, 20, 30});
  auto c = add(a, b);
  EXPECT_FLOAT_EQ(c.data()[0], 11);
  EXPECT_FLOAT_EQ(c.data()[5], 36);
  EXPECT_THROW(add(a, Tensor<float>::from({2}, {1, 2})), slue::ShapeError);
}

TEST(TensorForward, LogSoftmaxUniform) {
  const int v = 7;
  auto z = Tensor<double>::from({1, v}, std::vector<double>(v, 0.42));
  auto lp = log_softmax_flat(z);
  for (int i = 0; i < v; ++i) EXPECT_NEAR(lp.data()[i], -std::log(double(v)), 1e-12);
}

TEST(TensorForward, Conv2dIdentityKernel) {
  slue::Rng rng(3);
  auto x = Tensor<double>::from({1, 4, 5}, rand_vec(20, rng));
  auto w = Tensor<double>::from({1, 1, 1, 1}, {1.0});
  auto b = Tensor<double>::zeros({1});
  auto y = conv2d(x, w, b, 1, 1, 0, 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(TensorForward, BatchNormInferenceIdentity) {
  slue::Rng rng(4);
  auto x = Tensor<double>::from({2, 3, 4}, rand_vec(24, rng));
  auto gamma = Tensor<double>::from({2}, {1, 1});
  auto beta = Tensor<double>::zeros({2});
  auto rm = Tensor<double>::zeros({2});
  auto rv = Tensor<double>::from({2}, {1, 1});
  auto y = batch_norm(x, gamma, beta, rm, rv, /*training=*/false);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-5);
}

TEST(TensorBackward, SumOfSquares) {
  auto x = Tensor<double>::from({1, 1}, {3.0}, true);
  auto loss = mul(x, x);
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(TensorBackward, SoftmaxNllGradIdentity) {
  slue::Rng rng(5);
  auto z = Tensor<double>::from({1, 5}, rand_vec(5, rng), true);
  const int target = 2;
  auto loss = nll(log_softmax_flat(z), target);
  backward(loss);
  // expected: softmax(z) - onehot(target)
  double mx = *std::max_element(z.data().begin(), z.data().end());
  double s = 0;
  for (double v : z.data()) s += std::exp(v - mx);
  for (int i = 0; i < 5; ++i) {
    const double p = std::exp(z.data()[i] - mx) / s;
    EXPECT_NEAR(z.grad()[i], p - (i == target ? 1.0 : 0.0), 1e-12);
  }
}

TEST(TensorBackward, NonScalarLossRejected) {
  auto x = Tensor<double>::from({1, 2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(add(x, x)), std::invalid_argument);
}

TEST(TensorBackward, AccumulationLinearity) {
  slue::Rng rng(6);
  auto x = Tensor<double>::from({1, 4}, rand_vec(4, rng), true);
  auto w = rand_vec(4, rng);
  auto loss1 = [&] { return weighted_sum(tanh_t(x), w); };
  auto loss2 = [&] { return weighted_sum(mul(x, x), w); };

  x.zero_grad();
  backward(loss1());
  backward(loss2());
  auto accumulated = x.grad();

  x.zero_grad();
  backward(add(loss1(), loss2()));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(accumulated[i], x.grad()[i], 1e-12);
}

TEST(TensorGradCheck, TrivialQuadratic) {
  auto x = Tensor<double>::from({1, 1}, {3.0}, true);
  auto err = slue::grad_check<double>([&] { return mul(x, x); }, {x}, 1e-5);
  EXPECT_LT(err, 1e-8);
}

TEST(TensorGradCheck, ConstantFunction) {
  auto x = Tensor<double>::from({1, 1}, {3.0}, true);
  auto err = slue::grad_check<double>(
      [&] { return scale(mul(x, x), 0.0); }, {x}, 1e-5);
  EXPECT_DOUBLE_EQ(err, 0.0);
}

TEST(TensorGradCheck, EveryOpManyRandomInstances) {
  slue::Rng rng(7);
  double worst = 0;
  for (int it = 0; it < 100; ++it) {
    auto a = Tensor<double>::from({2, 3}, rand_vec(6, rng), true);
    auto b = Tensor<double>::from({3, 2}, rand_vec(6, rng), true);
    auto c = Tensor<double>::from({2, 2}, rand_vec(4, rng), true);
    auto bias = Tensor<double>::from({2}, rand_vec(2, rng), true);
    auto w6 = rand_vec(6, rng);
    auto w4 = rand_vec(4, rng);
    auto w12 = rand_vec(12, rng);

    std::vector<std::pair<const char*, std::function<Tensor<double>()>>> cases = {
        {"matmul", [&] { return weighted_sum(matmul(a, b), w4); }},
        {"add", [&] { return weighted_sum(add(c, c), w4); }},
        {"add_bcast", [&] { return weighted_sum(add(c, bias), w4); }},
        {"scale", [&] { return weighted_sum(scale(a, 1.7), w6); }},
        {"mul", [&] { return weighted_sum(mul(c, c), w4); }},
        {"tanh", [&] { return weighted_sum(tanh_t(a), w6); }},
        {"sigmoid", [&] { return weighted_sum(sigmoid_t(a), w6); }},
        {"softmax", [&] { return weighted_sum(softmax_flat(a), w6); }},
        {"log_softmax", [&] { return weighted_sum(log_softmax_flat(a), w6); }},
        {"nll", [&] { return nll(log_softmax_flat(reshape(a, {1, 6})), 3); }},
        {"concat", [&] { return weighted_sum(concat1d(c, bias), w6); }},
        {"slice", [&] { return weighted_sum(slice_flat(a, 1, 4), w4); }},
        {"transpose", [&] { return weighted_sum(transpose(a), w6); }},
        {"take_row", [&] { return weighted_sum(take_row(a, 1), w4); }},
        {"stack_rows",
         [&] {
           std::vector<Tensor<double>> rows = {take_row(a, 0), take_row(a, 1)};
           return weighted_sum(stack_rows(rows), w6);
         }},
        {"channels_to_rows",
         [&] { return weighted_sum(channels_to_rows(reshape(a, {2, 3, 1})), w6); }},
    };
    for (auto& [name, f] : cases) {
      std::vector<Tensor<double>> params = {a, b, c, bias};
      const double err = slue::grad_check<double>(f, params, 1e-5);
      EXPECT_LT(err, 1e-4) << name << " at iteration " << it;
      worst = std::max(worst, err);
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(TensorGradCheck, Conv2dWithBias) {
  slue::Rng rng(28);
  for (int it = 0; it < 10; ++it) {
    auto x = Tensor<double>::from({2, 4, 3}, rand_vec(24, rng), true);
    auto w = Tensor<double>::from({3, 2, 3, 3}, rand_vec(54, rng, 0.5), true);
    auto b = Tensor<double>::from({3}, rand_vec(3, rng), true);
    auto wsum = rand_vec(64, rng);
    auto f = [&] { return weighted_sum(tanh_t(conv2d(x, w, b, 2, 1, 1, 1)), wsum); };
    const double err = slue::grad_check<double>(f, {x, w, b}, 1e-5);
    EXPECT_LT(err, 1e-4) << "iteration " << it;
  }
}

TEST(TensorGradCheck, Conv2dAndBatchNorm) {
  slue::Rng rng(8);
  for (int it = 0; it < 10; ++it) {
    auto x = Tensor<double>::from({2, 4, 3}, rand_vec(24, rng), true);
    auto w = Tensor<double>::from({3, 2, 3, 3}, rand_vec(54, rng, 0.5), true);
    auto b = Tensor<double>::from({3}, rand_vec(3, rng), true);
    auto gamma = Tensor<double>::from({3}, {1.1, 0.9, 1.3}, true);
    auto beta = Tensor<double>::from({3}, rand_vec(3, rng), true);
    auto wsum = rand_vec(64, rng);
    auto f = [&] {
      auto y = conv2d(x, w, b, 2, 1, 1, 1);
      auto rm = Tensor<double>::zeros({3});
      auto rv = Tensor<double>::from({3}, {1, 1, 1});
      auto z = tanh_t(batch_norm(y, gamma, beta, rm, rv, /*training=*/true));
      return weighted_sum(z, wsum);
    };
    // The conv bias shifts every element of its channel equally, so the
    // train-mode mean subtraction cancels it exactly: its true gradient is
    // zero, which central differences can only see as rounding noise.  Assert
    // the zero analytically and finite-difference the rest.
    std::vector<Tensor<double>> ps = {x, w, b, gamma, beta};
    for (auto& p : ps) p.zero_grad();
    backward(f());
    for (double g : b.grad()) EXPECT_NEAR(g, 0.0, 1e-12);
    const double err = slue::grad_check<double>(f, {x, w, gamma, beta}, 1e-5);
    EXPECT_LT(err, 1e-4) << "iteration " << it;
  }
}

TEST(TensorForward, PureAndDeterministic) {
  slue::Rng rng(9);
  auto a = Tensor<float>::from({3, 3}, std::vector<float>(9, 0.25f), true);
  auto r1 = tanh_t(matmul(a, a)).data();
  auto r2 = tanh_t(matmul(a, a)).data();
  EXPECT_EQ(r1, r2);
}

TEST(Adam, ZeroGradIsNoOp) {
  auto p = Tensor<float>::from({1, 2}, {1.0f, -2.0f}, true);
  slue::AdamOptimizer<float> opt({p}, 0.1f);
  p.zero_grad();
  opt.step();
  EXPECT_FLOAT_EQ(p.data()[0], 1.0f);
  EXPECT_FLOAT_EQ(p.data()[1], -2.0f);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(Adam, FirstStepIsSignedLr) {
  auto p = Tensor<double>::from({1, 2}, {0.0, 0.0}, true);
  slue::AdamOptimizer<double> opt({p}, 0.1);
  p.grad() = {0.5, -3.0};
  opt.step();
  EXPECT_NEAR(p.data()[0], -0.1, 1e-6);
  EXPECT_NEAR(p.data()[1], 0.1, 1e-6);
}

TEST(Adam, FirstStepScaleInvariance) {
  auto p = Tensor<double>::from({1, 2}, {0.0, 0.0}, true);
  slue::AdamOptimizer<double> opt({p}, 0.1);
  p.grad() = {0.01, 1.0};  // g and 100 g
  opt.step();
  EXPECT_NEAR(std::abs(p.data()[0]), std::abs(p.data()[1]), 1e-6);
}

TEST(Clip, GlobalNorm) {
  auto p = Tensor<double>::from({1, 2}, {0.0, 0.0}, true);
  p.grad() = {3.0, 4.0};
  std::vector<Tensor<double>> params = {p};
  const double pre = slue::clip_global_norm(params, 1.0);
  EXPECT_DOUBLE_EQ(pre, 5.0);
  EXPECT_NEAR(std::hypot(p.grad()[0], p.grad()[1]), 1.0, 1e-12);
  // below the threshold: untouched
  p.grad() = {0.3, 0.4};
  slue::clip_global_norm(params, 1.0);
  EXPECT_DOUBLE_EQ(p.grad()[0], 0.3);
}

TEST(Rng, DeterministicStreams) {
  slue::Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  slue::Rng c(42);
  auto f1 = c.fork(7);
  auto f2 = c.fork(8);
  EXPECT_NE(f1.next_u64(), f2.next_u64());
}
