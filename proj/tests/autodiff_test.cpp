#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cthgr/autodiff.hpp"
#include "cthgr/gradcheck.hpp"
#include "cthgr/optim.hpp"

using namespace cthgr;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = true,
                             double spread = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-spread, spread);
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = uni(rng);
  return Tensor<double>(std::move(shape), std::move(data), requires_grad);
}

// Scalarizes an op output with fixed random weights so FD checks see every
// output element.
Tensor<double> weighted_sum(const Tensor<double>& t, std::uint64_t seed) {
  auto w = random_tensor(t.shape(), seed, false);
  return sum(mul(t, w));
}

void expect_op_grad(const std::function<Tensor<double>()>& f,
                    const std::vector<Tensor<double>*>& leaves, const char* what,
                    double tol = 1e-6) {
  auto report = grad_check(f, leaves, tol);
  EXPECT_TRUE(report.pass) << what << ": max rel err " << report.max_rel_error;
}

}  // namespace

TEST(Forward, SoftmaxConstantRowIsUniform) {
  auto x = Tensor<double>::full({2, 9}, 3.7);
  auto y = softmax(x);
  for (double v : y.value()) EXPECT_NEAR(v, 1.0 / 9.0, 1e-15);
}

TEST(Forward, SoftmaxRowsSumToOne) {
  auto x = random_tensor({5, 4, 7}, 11, false, 8.0);
  auto y = softmax(x);
  const auto& v = y.value();
  for (std::size_t r = 0; r < 20; ++r) {
    double s = 0;
    for (std::size_t i = 0; i < 7; ++i) {
      const double p = v[r * 7 + i];
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0);
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Forward, CrossEntropyUniformLogits) {
  auto x = Tensor<double>::zeros({3, 66});
  auto loss = cross_entropy(x, {0, 13, 65});
  EXPECT_NEAR(loss.item(), std::log(66.0), 1e-12);
  EXPECT_NEAR(loss.item(), 4.18965, 1e-5);
}

TEST(Forward, LayerNormKnownVector) {
  auto x = Tensor<double>({1, 3}, {1.0, 2.0, 3.0});
  auto y = layer_norm(x);
  // independent arithmetic: mean 2, biased variance 2/3, default eps 1e-5
  const double expect = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(y.value()[0], -expect, 1e-12);
  EXPECT_NEAR(y.value()[1], 0.0, 1e-12);
  EXPECT_NEAR(y.value()[2], expect, 1e-12);
  EXPECT_NEAR(y.value()[2], 1.22474, 1e-4);
  // per-row mean 0, variance 1 (up to eps)
  double m = 0, var = 0;
  for (double v : y.value()) m += v;
  m /= 3;
  for (double v : y.value()) var += (v - m) * (v - m);
  var /= 3;
  EXPECT_NEAR(m, 0.0, 1e-12);
  EXPECT_NEAR(var, 1.0, 1e-4);
}

TEST(Forward, DropoutIdentityCases) {
  auto x = random_tensor({4, 5}, 3);
  auto y_eval = dropout(x, 0.5, /*train=*/false, 1);
  auto y_zero = dropout(x, 0.0, /*train=*/true, 1);
  EXPECT_EQ(y_eval.value(), x.value());
  EXPECT_EQ(y_zero.value(), x.value());
}

TEST(Forward, GeluKnownValues) {
  auto x = Tensor<double>({3}, {0.0, 1.0, -1.0});
  auto y = gelu(x);
  EXPECT_NEAR(y.value()[0], 0.0, 1e-15);
  EXPECT_NEAR(y.value()[1], 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0))), 1e-15);
  EXPECT_NEAR(y.value()[1] + y.value()[2], 1.0 * (2.0 * 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0))) - 1.0),
              1e-12);  // gelu(x) + gelu(-x) = x*(2*Phi(x)-1) at x=1
}

TEST(Backward, SumGivesOnes) {
  auto x = random_tensor({3, 4}, 5);
  auto loss = sum(x);
  backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, HalfSquareNormGivesX) {
  auto x = random_tensor({7}, 6);
  auto loss = scale(sum(mul(x, x)), 0.5);
  backward(loss);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x.grad()[i], x.value()[i], 1e-12);
}

TEST(Backward, CalledTwiceThrows) {
  auto x = random_tensor({2}, 7);
  auto loss = sum(x);
  backward(loss);
  EXPECT_THROW(backward(loss), Error);
}

TEST(Backward, NonScalarLossThrows) {
  auto x = random_tensor({2, 2}, 8);
  EXPECT_THROW(backward(x), Error);
}

TEST(GradCheck, MatmulPlain) {
  auto a = random_tensor({3, 4}, 21);
  auto b = random_tensor({4, 5}, 22);
  expect_op_grad([&] { return weighted_sum(matmul(a, b), 99); }, {&a, &b}, "matmul 2d");
}

TEST(GradCheck, MatmulBatchedSharedRhs) {
  auto a = random_tensor({2, 3, 4}, 23);
  auto b = random_tensor({4, 5}, 24);
  expect_op_grad([&] { return weighted_sum(matmul(a, b), 98); }, {&a, &b}, "matmul batched/shared");
}

TEST(GradCheck, MatmulBatchedBoth) {
  auto a = random_tensor({2, 3, 4}, 25);
  auto b = random_tensor({2, 4, 5}, 26);
  expect_op_grad([&] { return weighted_sum(matmul(a, b), 97); }, {&a, &b}, "matmul batched");
}

TEST(GradCheck, AddBroadcast) {
  auto a = random_tensor({2, 3, 4}, 27);
  auto bias = random_tensor({4}, 28);
  auto rows = random_tensor({3, 4}, 29);
  expect_op_grad([&] { return weighted_sum(add(add(a, bias), rows), 96); }, {&a, &bias, &rows},
                 "add broadcast");
}

TEST(GradCheck, MulScaleReshape) {
  auto a = random_tensor({3, 4}, 30);
  auto b = random_tensor({3, 4}, 31);
  expect_op_grad(
      [&] { return weighted_sum(reshape(scale(mul(a, b), 1.7), {12}), 95); }, {&a, &b},
      "mul/scale/reshape");
}

TEST(GradCheck, ConcatSliceTranspose) {
  auto a = random_tensor({2, 3, 4}, 32);
  auto b = random_tensor({2, 2, 4}, 33);
  expect_op_grad(
      [&] {
        auto c = concat<double>({a, b}, 1);          // [2,5,4]
        auto s = slice(c, 1, 1, 3);                  // [2,3,4]
        return weighted_sum(transpose(s), 94);       // [2,4,3]
      },
      {&a, &b}, "concat/slice/transpose");
}

TEST(GradCheck, TileBatch) {
  auto a = random_tensor({1, 4}, 34);
  expect_op_grad([&] { return weighted_sum(tile_batch(a, 3), 93); }, {&a}, "tile_batch");
}

TEST(GradCheck, Softmax) {
  auto a = random_tensor({2, 3, 5}, 35, true, 2.0);
  expect_op_grad([&] { return weighted_sum(softmax(a), 92); }, {&a}, "softmax");
}

TEST(GradCheck, LayerNormAffine) {
  auto a = random_tensor({2, 3, 6}, 36);
  auto g = random_tensor({6}, 37);
  auto b = random_tensor({6}, 38);
  expect_op_grad([&] { return weighted_sum(layer_norm(a, g, b), 91); }, {&a, &g, &b},
                 "layer_norm affine");
}

TEST(GradCheck, LayerNormPlain) {
  auto a = random_tensor({4, 5}, 39);
  expect_op_grad([&] { return weighted_sum(layer_norm(a), 90); }, {&a}, "layer_norm");
}

TEST(GradCheck, Gelu) {
  auto a = random_tensor({3, 7}, 40, true, 2.5);
  expect_op_grad([&] { return weighted_sum(gelu(a), 89); }, {&a}, "gelu");
}

TEST(GradCheck, DropoutTrainMode) {
  auto a = random_tensor({4, 6}, 41);
  expect_op_grad([&] { return weighted_sum(dropout(a, 0.3, true, 1234), 88); }, {&a}, "dropout");
}

TEST(GradCheck, MeanAndSum) {
  auto a = random_tensor({3, 5}, 42);
  expect_op_grad([&] { return mean(a); }, {&a}, "mean");
  expect_op_grad([&] { return scale(sum(a), 0.25); }, {&a}, "sum");
}

TEST(GradCheck, CrossEntropy) {
  auto logits = random_tensor({4, 9}, 43, true, 3.0);
  std::vector<int> labels{0, 5, 8, 2};
  expect_op_grad([&] { return cross_entropy(logits, labels); }, {&logits},
                 "softmax cross-entropy");
}

TEST(GradCheck, ThreeLayerComposite) {
  auto x = random_tensor({3, 6}, 44);
  auto w1 = random_tensor({6, 8}, 45);
  auto b1 = random_tensor({8}, 46);
  auto w2 = random_tensor({8, 8}, 47);
  auto b2 = random_tensor({8}, 48);
  auto w3 = random_tensor({8, 4}, 49);
  std::vector<int> labels{1, 0, 3};
  expect_op_grad(
      [&] {
        auto h1 = gelu(add(matmul(x, w1), b1));
        auto h2 = layer_norm(gelu(add(matmul(h1, w2), b2)));
        return cross_entropy(matmul(h2, w3), labels);
      },
      {&x, &w1, &b1, &w2, &b2, &w3}, "3-layer composite");
}

TEST(GradCheck, ConstantFunctionIsZero) {
  auto x = random_tensor({3}, 50);
  auto report = grad_check([&] { return Tensor<double>::scalar(4.2); }, {&x}, 1e-6);
  EXPECT_TRUE(report.pass);
  EXPECT_DOUBLE_EQ(report.max_rel_error, 0.0);
}

// ---------------------------------------------------------------------
// Adam

TEST(Adam, ZeroGradZeroDecayLeavesParams) {
  auto p = random_tensor({4}, 60);
  const auto before = p.value();
  p.zero_grad();
  std::vector<Tensor<double>*> params{&p};
  auto st = AdamState<double>::init(params);
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.0;
  adam_step(params, st, cfg);
  EXPECT_EQ(p.value(), before);
}

TEST(Adam, UnitGradientFirstStepMagnitude) {
  auto p = Tensor<double>::scalar(0.0, true);
  auto loss = sum(p);  // gradient 1
  backward(loss);
  std::vector<Tensor<double>*> params{&p};
  auto st = AdamState<double>::init(params);
  AdamConfig cfg;
  cfg.learning_rate = 1e-3;
  adam_step(params, st, cfg);
  // bias-corrected mhat = 1, vhat = 1 -> delta = lr / (1 + eps)
  EXPECT_NEAR(p.item(), -1e-3 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, DecoupledDecayAppliedBeforeDelta) {
  auto p = Tensor<double>::scalar(1.0, true);
  p.zero_grad();  // zero gradient -> delta is exactly 0
  std::vector<Tensor<double>*> params{&p};
  auto st = AdamState<double>::init(params);
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.1;  // lr * wd = 0.01
  adam_step(params, st, cfg);
  EXPECT_DOUBLE_EQ(p.item(), 0.99);
}

TEST(Adam, RejectsNonPositiveLearningRate) {
  auto p = Tensor<double>::scalar(1.0, true);
  p.zero_grad();
  std::vector<Tensor<double>*> params{&p};
  auto st = AdamState<double>::init(params);
  AdamConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(adam_step(params, st, cfg), Error);
}

TEST(Adam, ScheduleConstantThenLinear) {
  // 20 epochs, anneal after 10: base for 1..10, then linear toward zero
  const double base = 1e-4;
  for (int e = 1; e <= 10; ++e) EXPECT_DOUBLE_EQ(scheduled_lr(base, e, 20, 10), base);
  EXPECT_DOUBLE_EQ(scheduled_lr(base, 11, 20, 10), base);
  EXPECT_DOUBLE_EQ(scheduled_lr(base, 20, 20, 10), base * 0.1);
  EXPECT_GT(scheduled_lr(base, 15, 20, 10), scheduled_lr(base, 16, 20, 10));
  EXPECT_DOUBLE_EQ(scheduled_lr(base, 12, 20, 10, true), base * 0.1);
}

TEST(Adam, DeterministicTrajectory) {
  auto run = [] {
    std::vector<double> losses;
    auto w = random_tensor({3, 2}, 77);
    auto x = random_tensor({5, 3}, 78, false);
    std::vector<int> labels{0, 1, 0, 1, 1};
    std::vector<Tensor<double>*> params{&w};
    auto st = AdamState<double>::init(params);
    AdamConfig cfg;
    cfg.learning_rate = 0.05;
    for (int step = 0; step < 10; ++step) {
      auto loss = cross_entropy(matmul(x, w), labels);
      losses.push_back(loss.item());
      backward(loss);
      adam_step(params, st, cfg);
    }
    return losses;
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a, b);  // bit-identical
  EXPECT_LT(a.back(), a.front());
}
