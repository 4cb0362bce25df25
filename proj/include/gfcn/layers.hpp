#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gfcn/graph.hpp"
#include "gfcn/ops.hpp"

namespace gfcn {

using Rng = std::mt19937_64;

/// Whether a tensor is optimized or only carried along (running statistics).
enum class TensorRole { parameter, buffer };

/// Uniform in +-sqrt(3 / fan_in), i.e. variance 1 / fan_in.
template <typename Scalar>
Tensor<Scalar> fan_in_uniform(const Shape& shape, Index fan_in, Rng& rng) {
  const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<Scalar> t(shape);
  for (auto& v : t.values()) v = static_cast<Scalar>(dist(rng));
  return t;
}

/// Linear ramps for the batch-renorm clipping bounds.
struct RenormSchedule {
  double rmax_start = 1.0;
  double rmax_end = 3.0;
  double dmax_start = 0.0;
  double dmax_end = 5.0;
  std::int64_t ramp_begin = 1000;
  std::int64_t ramp_end = 6000;

  double progress(std::int64_t step) const {
    if (step <= ramp_begin) return 0.0;
    if (step >= ramp_end) return 1.0;
    return static_cast<double>(step - ramp_begin) / static_cast<double>(ramp_end - ramp_begin);
  }
  double rmax_at(std::int64_t step) const { return rmax_start + (rmax_end - rmax_start) * progress(step); }
  double dmax_at(std::int64_t step) const { return dmax_start + (dmax_end - dmax_start) * progress(step); }

  /// r_max = 1 and d_max = 0 at every step: plain batch normalization.
  static RenormSchedule plain() { return {1.0, 1.0, 0.0, 0.0, 0, 1}; }
};

template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> gamma, beta;
  Tensor<Scalar> running_mean, running_var;
  double momentum = 0.99;
  double epsilon = 1e-3;
  RenormSchedule renorm;
  std::int64_t step = 0;

  static BatchNormState create(Index channels) {
    BatchNormState s;
    s.gamma = Tensor<Scalar>::constant(Shape{channels}, Scalar(1));
    s.beta = Tensor<Scalar>(Shape{channels});
    s.running_mean = Tensor<Scalar>(Shape{channels});
    s.running_var = Tensor<Scalar>::constant(Shape{channels}, Scalar(1));
    return s;
  }
  Index channels() const { return gamma.size(); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + "gamma", gamma, TensorRole::parameter);
    fn(prefix + "beta", beta, TensorRole::parameter);
    fn(prefix + "running_mean", running_mean, TensorRole::buffer);
    fn(prefix + "running_var", running_var, TensorRole::buffer);
  }
};

template <typename Scalar>
struct LayerNormParams {
  Tensor<Scalar> gamma, beta;
  double epsilon = 1e-6;

  static LayerNormParams create(Index channels) {
    return {Tensor<Scalar>::constant(Shape{channels}, Scalar(1)), Tensor<Scalar>(Shape{channels}), 1e-6};
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + "gamma", gamma, TensorRole::parameter);
    fn(prefix + "beta", beta, TensorRole::parameter);
  }
};

struct DropoutConfig {
  double rate = 0.25;
};

template <typename Scalar>
struct SeparableConvParams {
  Tensor<Scalar> depthwise_kernel;  // [K, K, C]
  std::optional<BatchNormState<Scalar>> bn;
  Tensor<Scalar> pointwise_weights;  // [C, C']
  Tensor<Scalar> pointwise_bias;     // [C']
  Activation activation = Activation::none;

  static SeparableConvParams create(Index in, Index out, Index kernel, Activation act, bool with_bn, Rng& rng) {
    if (in < 1 || out < 1) throw ConfigError("separable conv: channel counts must be positive");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("separable conv: kernel size must be odd");
    SeparableConvParams p;
    p.depthwise_kernel = fan_in_uniform<Scalar>(Shape{kernel, kernel, in}, kernel * kernel, rng);
    if (with_bn) p.bn = BatchNormState<Scalar>::create(in);
    p.pointwise_weights = fan_in_uniform<Scalar>(Shape{in, out}, in, rng);
    p.pointwise_bias = Tensor<Scalar>(Shape{out});
    p.activation = act;
    return p;
  }

  Index kernel_size() const { return depthwise_kernel.dim(0); }
  Index in_channels() const { return depthwise_kernel.dim(2); }
  Index out_channels() const { return pointwise_weights.dim(1); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + "depthwise", depthwise_kernel, TensorRole::parameter);
    if (bn) bn->visit(prefix + "bn.", fn);
    fn(prefix + "pointwise.weights", pointwise_weights, TensorRole::parameter);
    fn(prefix + "pointwise.bias", pointwise_bias, TensorRole::parameter);
  }
};

// ---------------------------------------------------------------------------

/// Batch (re)normalization over all non-channel positions. In training mode the
/// correction factors r and d are clipped to the schedule's bounds and treated as
/// constants for the gradient; running statistics then advance by one EMA step.
template <typename Scalar>
Var<Scalar> batch_norm(Var<Scalar> x, BatchNormState<Scalar>& state, bool training) {
  // Channel-major views: column j holds the C channels of position j.
  using Arr = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Col = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Graph<Scalar>& g = *x.graph;
  const Shape s = x.shape();
  const Index C = s[s.rank() - 1];
  if (C != state.channels()) throw DimensionError("batch_norm", "channels", static_cast<long>(state.channels()), static_cast<long>(C));
  const Index rows = s.numel() / C;
  Eigen::Map<const Arr> xm(x.value().data(), C, rows);
  const Var<Scalar> gamma = g.parameter(state.gamma), beta = g.parameter(state.beta);
  const Col gv = state.gamma.array(), bv = state.beta.array();
  const Scalar eps = static_cast<Scalar>(state.epsilon);

  Tensor<Scalar> out(s);
  Eigen::Map<Arr> y(out.data(), C, rows);
  const std::size_t xi = x.id, gi = gamma.id, bi = beta.id;

  if (!training) {
    const Col mean = state.running_mean.array();
    const Col inv = (state.running_var.array() + eps).rsqrt();
    y = ((xm.colwise() - mean).colwise() * (inv * gv)).colwise() + bv;
    return g.record(std::move(out), {xi, gi, bi}, [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
      Eigen::Map<const Arr> d(dy.data(), C, rows);
      if (gr.requires_grad(xi)) {
        Eigen::Map<Arr> dx(gr.grad_of(xi).data(), C, rows);
        dx += d.colwise() * (inv * gv);
      }
      Eigen::Map<const Arr> xv(gr.value(xi).data(), C, rows);
      if (gr.requires_grad(gi)) gr.grad_of(gi).array() += ((xv.colwise() - mean).colwise() * inv * d).rowwise().sum();
      if (gr.requires_grad(bi)) gr.grad_of(bi).array() += d.rowwise().sum();
    });
  }

  if (rows < 2) {
    throw DegenerateBatchError("batch_norm: training needs at least 2 values per channel, got " + std::to_string(rows));
  }
  const Col mean = xm.rowwise().mean();
  const Col var = (xm.colwise() - mean).square().rowwise().mean();
  const Col inv_sigma = (var + eps).rsqrt();
  const Col run_mean = state.running_mean.array();
  const Col run_sigma = (state.running_var.array() + eps).sqrt();
  const Scalar rmax = static_cast<Scalar>(state.renorm.rmax_at(state.step));
  const Scalar dmax = static_cast<Scalar>(state.renorm.dmax_at(state.step));
  const Col r = ((var + eps).sqrt() / run_sigma).max(Scalar(1) / rmax).min(rmax);
  const Col d = ((mean - run_mean) / run_sigma).max(-dmax).min(dmax);

  // y = gamma * (xhat * r + d) + beta with xhat = (x - mean) / sigma.
  Arr xhat = (xm.colwise() - mean).colwise() * inv_sigma;
  y = (((xhat.colwise() * r).colwise() + d).colwise() * gv).colwise() + bv;

  const Scalar momentum = static_cast<Scalar>(state.momentum);
  state.running_mean.array() = momentum * state.running_mean.array() + (1 - momentum) * mean;
  state.running_var.array() = momentum * state.running_var.array() + (1 - momentum) * var;
  ++state.step;

  return g.record(std::move(out), {xi, gi, bi}, [=, xhat = std::move(xhat)](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    Eigen::Map<const Arr> da(dy.data(), C, rows);
    if (gr.requires_grad(gi)) gr.grad_of(gi).array() += (da * ((xhat.colwise() * r).colwise() + d)).rowwise().sum();
    if (gr.requires_grad(bi)) gr.grad_of(bi).array() += da.rowwise().sum();
    if (gr.requires_grad(xi)) {
      const Arr dxhat = da.colwise() * (gv * r);
      const Col mean_dxhat = dxhat.rowwise().mean();
      const Col mean_dxhat_xhat = (dxhat * xhat).rowwise().mean();
      Eigen::Map<Arr> dx(gr.grad_of(xi).data(), C, rows);
      dx += ((dxhat.colwise() - mean_dxhat) - xhat.colwise() * mean_dxhat_xhat).colwise() * inv_sigma;
    }
  });
}

/// Per-sample standardization over every non-batch axis, then a per-channel affine map.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, LayerNormParams<Scalar>& params) {
  using Mat = detail::RowMatrix<Scalar>;
  Graph<Scalar>& g = *x.graph;
  const Shape s = x.shape();
  const Index N = s[0], C = s[s.rank() - 1];
  if (C != params.gamma.size()) throw DimensionError("layer_norm", "channels", static_cast<long>(params.gamma.size()), static_cast<long>(C));
  const Index per_sample = s.numel() / N, rows = per_sample / C;
  const Var<Scalar> gamma = g.parameter(params.gamma), beta = g.parameter(params.beta);
  const Scalar eps = static_cast<Scalar>(params.epsilon);

  Tensor<Scalar> xhat(s), out(s);
  std::vector<Scalar> inv_sigma(static_cast<std::size_t>(N));
  const auto gv = params.gamma.array().transpose().eval();
  const auto bv = params.beta.array().transpose().eval();
  for (Index n = 0; n < N; ++n) {
    Eigen::Map<const Mat> xm(x.value().data() + n * per_sample, rows, C);
    Eigen::Map<Mat> xh(xhat.data() + n * per_sample, rows, C);
    // Constant samples standardize to exactly zero.
    const Scalar mean = xm.maxCoeff() == xm.minCoeff() ? xm(0, 0) : xm.mean();
    const Scalar var = (xm.array() - mean).square().mean();
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(n)] = inv;
    xh.array() = (xm.array() - mean) * inv;
    Eigen::Map<Mat> y(out.data() + n * per_sample, rows, C);
    y.array() = (xh.array().rowwise() * gv).rowwise() + bv;
  }

  const std::size_t xi = x.id, gi = gamma.id, bi = beta.id;
  return g.record(std::move(out), {xi, gi, bi},
                  [=, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    Eigen::Map<const Mat> dall(dy.data(), N * rows, C);
    Eigen::Map<const Mat> xhall(xhat.data(), N * rows, C);
    if (gr.requires_grad(gi)) gr.grad_of(gi).array() += (dall.array() * xhall.array()).colwise().sum().transpose();
    if (gr.requires_grad(bi)) gr.grad_of(bi).array() += dall.array().colwise().sum().transpose();
    if (!gr.requires_grad(xi)) return;
    Scalar* dxd = gr.grad_of(xi).data();
    for (Index n = 0; n < N; ++n) {
      Eigen::Map<const Mat> d(dy.data() + n * per_sample, rows, C);
      Eigen::Map<const Mat> xh(xhat.data() + n * per_sample, rows, C);
      const auto dxhat = (d.array().rowwise() * gv).eval();
      const Scalar m1 = dxhat.mean();
      const Scalar m2 = (dxhat * xh.array()).mean();
      Eigen::Map<Mat> dx(dxd + n * per_sample, rows, C);
      dx.array() += (dxhat - m1 - xh.array() * m2) * inv_sigma[static_cast<std::size_t>(n)];
    }
  });
}

/// Zeroes whole (sample, channel) planes with probability `rate` and rescales
/// survivors by 1 / (1 - rate). Identity outside training.
template <typename Scalar>
Var<Scalar> spatial_dropout(Var<Scalar> x, const DropoutConfig& config, bool training, Rng& rng) {
  if (!(config.rate >= 0.0 && config.rate < 1.0)) {
    throw ConfigError("spatial_dropout: rate must lie in [0, 1), got " + std::to_string(config.rate));
  }
  if (!training || config.rate == 0.0) return x;
  const Shape s = x.shape();
  require_rank("spatial_dropout", s, 4);
  const Index N = s[0], C = s[3], plane = s[1] * s[2];
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - config.rate));
  std::vector<Scalar> mask(static_cast<std::size_t>(N * C));
  for (auto& m : mask) m = u(rng) < config.rate ? Scalar(0) : keep_scale;

  Tensor<Scalar> out(s);
  const Scalar* xd = x.value().data();
  for (Index n = 0; n < N; ++n)
    for (Index p = 0; p < plane; ++p)
      for (Index c = 0; c < C; ++c) {
        const Index i = (n * plane + p) * C + c;
        out[i] = xd[i] * mask[static_cast<std::size_t>(n * C + c)];
      }
  const std::size_t xi = x.id;
  return x.graph->record(std::move(out), {xi}, [=, mask = std::move(mask)](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    Scalar* dx = gr.grad_of(xi).data();
    for (Index n = 0; n < N; ++n)
      for (Index p = 0; p < plane; ++p)
        for (Index c = 0; c < C; ++c) {
          const Index i = (n * plane + p) * C + c;
          dx[i] += dy[i] * mask[static_cast<std::size_t>(n * C + c)];
        }
  });
}

/// Mean over the height axis; the result keeps a height of 1.
template <typename Scalar>
Var<Scalar> global_avg_pool_height(Var<Scalar> x) {
  require_rank("global_avg_pool_height", x.shape(), 4);
  return reduce_mean(x, 1);
}

/// depthwise conv (stride 1, same) -> batch (re)norm -> pointwise conv + bias -> activation.
template <typename Scalar>
Var<Scalar> separable_conv(Var<Scalar> x, SeparableConvParams<Scalar>& params, bool training) {
  Graph<Scalar>& g = *x.graph;
  if (x.shape().rank() != 4) require_rank("separable_conv", x.shape(), 4);
  if (x.shape()[3] != params.in_channels()) {
    throw DimensionError("separable_conv", "channels", static_cast<long>(params.in_channels()), static_cast<long>(x.shape()[3]));
  }
  Var<Scalar> h = depthwise_conv2d(x, g.parameter(params.depthwise_kernel));
  if (params.bn) h = batch_norm(h, *params.bn, training);
  h = pointwise_conv2d(h, g.parameter(params.pointwise_weights), g.parameter(params.pointwise_bias));
  return activate(h, params.activation);
}

}  // namespace gfcn
