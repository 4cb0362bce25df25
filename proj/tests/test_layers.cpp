#include <doctest.h>

#include <cmath>
#include <random>

#include "gfcn/layers.hpp"
#include "support/oracles.hpp"

using namespace gfcn;
using namespace gfcn::testing;

namespace {

std::pair<std::vector<double>, std::vector<double>> channel_stats(const TensorD& y) {
  const Index C = y.dim(y.rank() - 1), rows = y.size() / C;
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  for (Index c = 0; c < C; ++c) {
    for (Index r = 0; r < rows; ++r) mean[c] += y[r * C + c];
    mean[c] /= static_cast<double>(rows);
    for (Index r = 0; r < rows; ++r) var[c] += (y[r * C + c] - mean[c]) * (y[r * C + c] - mean[c]);
    var[c] /= static_cast<double>(rows);
  }
  return {mean, var};
}

BatchNormState<double> random_bn(Index C, std::mt19937_64& rng) {
  auto s = BatchNormState<double>::create(C);
  s.gamma = random_tensor(Shape{C}, rng, 0.5, 1.5);
  s.beta = random_tensor(Shape{C}, rng);
  s.running_mean = random_tensor(Shape{C}, rng);
  s.running_var = random_tensor(Shape{C}, rng, 0.5, 2.0);
  return s;
}

}  // namespace

TEST_CASE("separable_conv: zero depthwise kernel gives zeros") {
  Rng rng(1);
  auto p = SeparableConvParams<double>::create(3, 4, 3, Activation::elu, true, rng);
  p.depthwise_kernel.array().setZero();
  std::mt19937_64 r(2);
  Graph<double> g;
  auto out = separable_conv(g.constant(random_tensor(Shape{2, 5, 6, 3}, r)), p, true).value();
  CHECK(out.array().abs().maxCoeff() == 0.0);
}

TEST_CASE("separable_conv: identity configuration in inference mode") {
  Rng rng(1);
  auto p = SeparableConvParams<double>::create(3, 3, 3, Activation::none, true, rng);
  p.depthwise_kernel.array().setZero();
  for (Index c = 0; c < 3; ++c) p.depthwise_kernel(1, 1, c) = 1.0;
  p.bn->epsilon = 1e-9;
  p.pointwise_weights.array().setZero();
  for (Index c = 0; c < 3; ++c) p.pointwise_weights(c, c) = 1.0;
  std::mt19937_64 r(3);
  TensorD x = random_tensor(Shape{2, 4, 5, 3}, r);
  Graph<double> g;
  CHECK(max_abs_diff(separable_conv(g.constant(x), p, false).value(), x) <= 1e-6);
}

TEST_CASE("separable_conv: matches composition of loop oracles") {
  std::mt19937_64 r(4);
  Rng rng(4);
  for (auto act : {Activation::tanh, Activation::sigmoid, Activation::elu, Activation::none}) {
    auto p = SeparableConvParams<double>::create(3, 5, 3, act, true, rng);
    p.bn->gamma = random_tensor(Shape{3}, r, 0.5, 1.5);
    p.bn->beta = random_tensor(Shape{3}, r);
    p.pointwise_bias = random_tensor(Shape{5}, r);
    TensorD x = random_tensor(Shape{2, 6, 7, 3}, r);
    TensorD expected = naive_pointwise(naive_batch_norm(naive_depthwise_same(x, p.depthwise_kernel), p.bn->gamma, p.bn->beta,
                                                        p.bn->epsilon),
                                       p.pointwise_weights, p.pointwise_bias);
    for (auto& v : expected.values()) {
      if (act == Activation::tanh) v = std::tanh(v);
      if (act == Activation::sigmoid) v = sigmoid_ref(v);
      if (act == Activation::elu) v = elu_ref(v);
    }
    Graph<double> g;
    CHECK(max_abs_diff(separable_conv(g.constant(x), p, true).value(), expected) <= 1e-10);
  }
  Graph<double> g;
  auto p = SeparableConvParams<double>::create(3, 5, 3, Activation::none, true, rng);
  CHECK_THROWS_AS(separable_conv(g.constant(TensorD(Shape{1, 3, 3, 4})), p, true), DimensionError);
}

TEST_CASE("batch_norm: inference with unit running stats is the identity") {
  auto s = BatchNormState<double>::create(4);
  std::mt19937_64 r(5);
  TensorD x = random_tensor(Shape{2, 3, 3, 4}, r);
  Graph<double> g;
  auto y = batch_norm(g.constant(x), s, false).value();
  CHECK(max_abs_diff(y, TensorD(x.shape(), x.array() / std::sqrt(1.0 + s.epsilon))) <= 1e-15);
  CHECK(max_abs_diff(y, x) <= 1e-3);
  CHECK(s.step == 0);
}

TEST_CASE("batch_norm: r_max = 1, d_max = 0 collapses to plain batch normalization") {
  std::mt19937_64 r(6);
  auto s = random_bn(3, r);
  s.renorm = RenormSchedule::plain();
  s.step = 10'000;
  TensorD x = random_tensor(Shape{4, 3, 2, 3}, r, -3, 5);
  Graph<double> g;
  auto y = batch_norm(g.constant(x), s, true).value();
  CHECK(max_abs_diff(y, naive_batch_norm(x, s.gamma, s.beta, s.epsilon)) <= 1e-12);
  CHECK(s.step == 10'001);
}

TEST_CASE("batch_norm: plain training output has zero mean and unit variance") {
  std::mt19937_64 r(7);
  auto s = BatchNormState<double>::create(5);
  s.epsilon = 1e-12;
  TensorD x = random_tensor(Shape{3, 4, 4, 5}, r, -10, 20);
  Graph<double> g;
  auto [mean, var] = channel_stats(batch_norm(g.constant(x), s, true).value());
  for (Index c = 0; c < 5; ++c) {
    CHECK(std::abs(mean[c]) <= 1e-6);
    CHECK(std::abs(var[c] - 1.0) <= 1e-6);
  }
}

TEST_CASE("batch_norm: renorm factors are clipped to the schedule") {
  std::mt19937_64 r(8);
  auto s = BatchNormState<double>::create(2);
  s.epsilon = 1e-12;
  s.step = 1'000'000;  // past the ramp: r_max = 3, d_max = 5
  s.running_mean.array() = -100.0;
  s.running_var.array() = 1e-4;
  TensorD x = random_tensor(Shape{2, 3, 3, 2}, r);
  Graph<double> g;
  auto y = batch_norm(g.constant(x), s, true).value();
  // Huge r and d clip to r_max = 3 and d_max = 5: y = 3 * xhat + 5.
  TensorD xhat = naive_batch_norm(x, TensorD::constant(Shape{2}, 1.0), TensorD(Shape{2}), 1e-12);
  CHECK(max_abs_diff(y, TensorD(x.shape(), 3.0 * xhat.array() + 5.0)) <= 1e-9);
  CHECK((s.running_var.array() >= 0).all());
  CHECK(s.renorm.rmax_at(3500) == doctest::Approx(2.0));
  CHECK(s.renorm.dmax_at(3500) == doctest::Approx(2.5));
  CHECK(s.renorm.rmax_at(0) == 1.0);
  CHECK(s.renorm.dmax_at(999) == 0.0);
}

TEST_CASE("batch_norm: a single statistic sample is rejected in training") {
  auto s = BatchNormState<double>::create(2);
  Graph<double> g;
  CHECK_THROWS_AS(batch_norm(g.constant(TensorD(Shape{1, 1, 1, 2})), s, true), DegenerateBatchError);
  CHECK_NOTHROW(batch_norm(g.constant(TensorD(Shape{1, 1, 1, 2})), s, false));
  CHECK_THROWS_AS(batch_norm(g.constant(TensorD(Shape{2, 1, 1, 3})), s, false), DimensionError);
}

TEST_CASE("batch_norm: running statistics converge to train-mode behaviour") {
  std::mt19937_64 r(9);
  auto s = BatchNormState<double>::create(3);
  s.renorm = RenormSchedule::plain();
  TensorD x = random_tensor(Shape{4, 4, 4, 3}, r, -1, 3);
  TensorD train_out;
  for (int i = 0; i < 500; ++i) {
    Graph<double> g;
    train_out = batch_norm(g.constant(x), s, true).value();
  }
  Graph<double> g;
  CHECK(max_abs_diff(train_out, batch_norm(g.constant(x), s, false).value()) <= 1e-2);
}

TEST_CASE("layer_norm: constant image, statistics, affine invariance") {
  auto p = LayerNormParams<double>::create(2);
  Graph<double> g;
  auto zeros = layer_norm(g.constant(TensorD::constant(Shape{2, 3, 4, 2}, 0.7)), p).value();
  CHECK(zeros.array().abs().maxCoeff() == 0.0);

  std::mt19937_64 r(10);
  std::normal_distribution<double> normal(0.0, 1.0);
  TensorD x(Shape{3, 4, 5, 2});
  for (auto& v : x.values()) v = normal(r);
  auto y = layer_norm(g.constant(x), p).value();
  const Index per = y.size() / 3;
  for (Index n = 0; n < 3; ++n) {
    auto block = y.array().segment(n * per, per);
    const double mean = block.mean();
    const double var = (block - mean).square().mean();
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-3);
  }
  for (double a : {0.5, 2.0, 10.0}) {
    TensorD z(x.shape(), a * x.array() + 3.0);
    CHECK(max_abs_diff(layer_norm(g.constant(z), p).value(), y) <= 1e-5);
  }
  CHECK_THROWS_AS(layer_norm(g.constant(TensorD(Shape{1, 2, 2, 3})), p), DimensionError);
}

TEST_CASE("spatial_dropout: identities and config errors") {
  std::mt19937_64 r(11);
  TensorD x = random_tensor(Shape{2, 3, 3, 4}, r);
  Rng rng(1);
  Graph<double> g;
  CHECK(max_abs_diff(spatial_dropout(g.constant(x), DropoutConfig{0.0}, true, rng).value(), x) == 0.0);
  CHECK(max_abs_diff(spatial_dropout(g.constant(x), DropoutConfig{0.7}, false, rng).value(), x) == 0.0);
  CHECK_THROWS_AS(spatial_dropout(g.constant(x), DropoutConfig{1.0}, true, rng), ConfigError);
}

TEST_CASE("spatial_dropout: whole channels drop at the configured rate") {
  Rng rng(12);
  Graph<double> g;
  TensorD x = TensorD::constant(Shape{100, 2, 2, 100}, 1.0);
  auto y = spatial_dropout(g.constant(x), DropoutConfig{0.5}, true, rng).value();
  Index dropped = 0;
  for (Index n = 0; n < 100; ++n)
    for (Index c = 0; c < 100; ++c) {
      const double v = y(n, 0, 0, c);
      CHECK((v == 0.0 || v == 2.0));
      for (Index h = 0; h < 2; ++h)
        for (Index w = 0; w < 2; ++w) CHECK(y(n, h, w, c) == v);
      dropped += v == 0.0;
    }
  const double fraction = static_cast<double>(dropped) / 10'000.0;
  CHECK(fraction >= 0.48);
  CHECK(fraction <= 0.52);
}

TEST_CASE("spatial_dropout: preserves the expectation") {
  std::mt19937_64 r(13);
  TensorD x = random_tensor(Shape{1, 1, 2, 3}, r, 0.5, 1.5);
  for (double rate : {0.1, 0.25, 0.5}) {
    Rng rng(14);
    TensorD acc(x.shape());
    for (int i = 0; i < 10'000; ++i) {
      Graph<double> g;
      acc.array() += spatial_dropout(g.constant(x), DropoutConfig{rate}, true, rng).value().array();
    }
    const double rel = ((acc.array() / 10'000.0 - x.array()) / x.array()).abs().maxCoeff();
    CHECK(rel <= 0.02);
  }
}

TEST_CASE("global_avg_pool_height: identity, hand value, oracle") {
  std::mt19937_64 r(15);
  Graph<double> g;
  TensorD flat = random_tensor(Shape{2, 1, 5, 3}, r);
  CHECK(max_abs_diff(global_avg_pool_height(g.constant(flat)).value(), flat) == 0.0);
  TensorD col(Shape{1, 3, 1, 1});
  col[0] = 2;
  col[1] = 4;
  col[2] = 6;
  CHECK(global_avg_pool_height(g.constant(col)).value().item() == 4.0);
  TensorD x = random_tensor(Shape{2, 6, 5, 3}, r);
  CHECK(max_abs_diff(global_avg_pool_height(g.constant(x)).value(), naive_mean_height(x)) <= 1e-12);
}

TEST_CASE("layer gradients match finite differences for inputs and parameters") {
  std::mt19937_64 r(16);
  const Shape s{2, 3, 4, 3};
  double worst = 0;

  for (bool training : {true, false}) {
    auto bn = random_bn(3, r);
    bn.renorm = RenormSchedule::plain();
    worst = std::max(worst, gradient_check([&](auto&, const auto& v) { return batch_norm(v[0], bn, training); },
                                           {random_tensor(s, r, -2, 2)}, r));
    TensorD x = random_tensor(s, r);
    worst = std::max(worst, parameter_gradient_check([&](auto& g) { return batch_norm(g.constant(x), bn, training); },
                                                     {&bn.gamma, &bn.beta}, r));
  }

  auto ln = LayerNormParams<double>::create(3);
  ln.gamma = random_tensor(Shape{3}, r, 0.5, 1.5);
  ln.beta = random_tensor(Shape{3}, r);
  worst = std::max(worst, gradient_check([&](auto&, const auto& v) { return layer_norm(v[0], ln); }, {random_tensor(s, r)}, r));
  TensorD lx = random_tensor(s, r);
  worst = std::max(worst, parameter_gradient_check([&](auto& g) { return layer_norm(g.constant(lx), ln); },
                                                   {&ln.gamma, &ln.beta}, r));

  worst = std::max(worst, gradient_check(
                              [&](auto&, const auto& v) {
                                Rng rng(99);
                                return spatial_dropout(v[0], DropoutConfig{0.4}, true, rng);
                              },
                              {random_tensor(s, r)}, r));
  worst = std::max(worst, gradient_check([](auto&, const auto& v) { return global_avg_pool_height(v[0]); },
                                         {random_tensor(s, r)}, r));

  Rng init(17);
  for (auto act : {Activation::tanh, Activation::sigmoid, Activation::elu}) {
    auto p = SeparableConvParams<double>::create(3, 4, 3, act, true, init);
    p.bn->renorm = RenormSchedule::plain();
    worst = std::max(worst, gradient_check([&](auto&, const auto& v) { return separable_conv(v[0], p, true); },
                                           {random_tensor(s, r)}, r));
    TensorD x = random_tensor(s, r);
    worst = std::max(worst, parameter_gradient_check([&](auto& g) { return separable_conv(g.constant(x), p, true); },
                                                     {&p.depthwise_kernel, &p.bn->gamma, &p.bn->beta,
                                                      &p.pointwise_weights, &p.pointwise_bias},
                                                     r));
  }
  CHECK(worst <= 1e-5);
}
