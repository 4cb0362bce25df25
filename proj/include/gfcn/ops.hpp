#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gfcn/graph.hpp"
#include "gfcn/parallel.hpp"
#include "gfcn/tensor.hpp"

namespace gfcn {

enum class Padding { same, valid };

struct Conv2dOptions {
  Index stride_h = 1;
  Index stride_w = 1;
  Padding padding = Padding::same;
};

/// Output extent and leading pad along one spatial axis. Same padding is
/// symmetric; when the total pad is odd the extra pixel goes to the bottom/right.
struct ConvAxis {
  Index out = 0;
  Index pad_before = 0;
};

inline ConvAxis conv_axis(const std::string& op, const std::string& axis, Index in, Index k, Index stride,
                          Padding padding) {
  if (stride < 1) throw ContractViolation(op + ": stride must be positive");
  if (padding == Padding::same) {
    Index out = (in + stride - 1) / stride;
    Index total = std::max<Index>((out - 1) * stride + k - in, 0);
    return {out, total / 2};
  }
  if (in < k) throw DimensionError(op, axis, "input extent " + std::to_string(in) + " smaller than kernel " + std::to_string(k));
  return {(in - k) / stride + 1, 0};
}

enum class Activation { none, tanh, sigmoid, elu };

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
void check_depthwise(const Shape& x, const Shape& k) {
  require_rank("depthwise_conv2d", x, 4);
  require_rank("depthwise_conv2d kernel", k, 3);
  if (k[0] != k[1]) throw DimensionError("depthwise_conv2d", "kernel width", static_cast<long>(k[0]), static_cast<long>(k[1]));
  if (k[0] % 2 == 0) throw DimensionError("depthwise_conv2d", "kernel height", "kernel size must be odd, got " + std::to_string(k[0]));
  if (k[2] != x[3]) throw DimensionError("depthwise_conv2d", "channels", static_cast<long>(x[3]), static_cast<long>(k[2]));
}

/// Visits every valid (kernel tap, output row segment) pair of one batch item:
/// fn(out_offset, kernel_offset, in_offset, count, in_step). The segment covers
/// `count` output pixels at stride C and input pixels at stride `in_step`.
template <typename Fn>
void for_each_tap(Index H, Index W, Index C, Index K, const ConvAxis& ay, const ConvAxis& ax, const Conv2dOptions& o,
                  Fn&& fn) {
  for (Index oy = 0; oy < ay.out; ++oy) {
    for (Index ky = 0; ky < K; ++ky) {
      const Index iy = oy * o.stride_h + ky - ay.pad_before;
      if (iy < 0 || iy >= H) continue;
      for (Index kx = 0; kx < K; ++kx) {
        // ix = ox*stride + kx - pad must lie in [0, W).
        const Index shift = kx - ax.pad_before;
        const Index lo = shift >= 0 ? 0 : (-shift + o.stride_w - 1) / o.stride_w;
        const Index hi = std::min<Index>(ax.out - 1, (W - 1 - shift) >= 0 ? (W - 1 - shift) / o.stride_w : -1);
        if (hi < lo) continue;
        fn((oy * ax.out + lo) * C, (ky * K + kx) * C, (iy * W + lo * o.stride_w + shift) * C, hi - lo + 1, o.stride_w * C);
      }
    }
  }
}

/// Channel-by-pixel views of a row segment.
template <typename Scalar>
using SegmentMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>, 0, Eigen::OuterStride<>>;
template <typename Scalar>
using ConstSegmentMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>, 0, Eigen::OuterStride<>>;
template <typename Scalar>
using ConstChannelMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

/// Pixel-major [P, C] to channel-major [C, P] and back.
template <typename Scalar>
void to_planar(const Scalar* src, Scalar* dst, Index P, Index C) {
  using M = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::Map<M>(dst, P, C) = Eigen::Map<const M>(src, C, P).transpose();
}
template <typename Scalar>
void add_from_planar(const Scalar* src, Scalar* dst, Index P, Index C) {
  using M = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::Map<M>(dst, C, P) += Eigen::Map<const M>(src, P, C).transpose();
}

template <typename Scalar>
using Span = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstSpan = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

template <typename Scalar>
Var<Scalar> depthwise_planar(Graph<Scalar>& g, Var<Scalar> x, Var<Scalar> kernel, Index N, Index H, Index W, Index C, Index K,
                             ConvAxis ay, ConvAxis ax, Conv2dOptions opts) {
  const Index in_plane = H * W, out_plane = ay.out * ax.out;
  Tensor<Scalar> out(Shape{N, ay.out, ax.out, C});
  {
    const Scalar* xd = x.value().data();
    const Scalar* kd = kernel.value().data();
    Scalar* od = out.data();
    parallel_for(N, [&](Index n) {
      std::vector<Scalar> xp(static_cast<std::size_t>(in_plane * C));
      std::vector<Scalar> op(static_cast<std::size_t>(out_plane * C), Scalar(0));
      to_planar(xd + n * in_plane * C, xp.data(), in_plane, C);
      for (Index c = 0; c < C; ++c) {
        const Scalar* xc = xp.data() + c * in_plane;
        Scalar* oc = op.data() + c * out_plane;
        for_each_tap(H, W, 1, K, ay, ax, opts, [&](Index o, Index k, Index i, Index len, Index) {
          Span<Scalar>(oc + o, len) += kd[k * C + c] * ConstSpan<Scalar>(xc + i, len);
        });
      }
      add_from_planar(op.data(), od + n * out_plane * C, out_plane, C);
    });
  }

  const std::size_t xi = x.id, ki = kernel.id;
  return g.record(std::move(out), {xi, ki}, [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    const bool need_x = gr.requires_grad(xi), need_k = gr.requires_grad(ki);
    const Scalar* dyd = dy.data();
    const Scalar* xd = gr.value(xi).data();
    const Scalar* kd = gr.value(ki).data();
    Scalar* dxd = need_x ? gr.grad_of(xi).data() : nullptr;
    // Per-item partials summed in batch order keep the result independent of thread count.
    std::vector<Tensor<Scalar>> partial(need_k ? static_cast<std::size_t>(N) : 0, Tensor<Scalar>(Shape{K, K, C}));
    parallel_for(N, [&](Index n) {
      std::vector<Scalar> dyp(static_cast<std::size_t>(out_plane * C));
      to_planar(dyd + n * out_plane * C, dyp.data(), out_plane, C);
      if (need_x) {
        std::vector<Scalar> dxp(static_cast<std::size_t>(in_plane * C), Scalar(0));
        for (Index c = 0; c < C; ++c) {
          const Scalar* dyc = dyp.data() + c * out_plane;
          Scalar* dxc = dxp.data() + c * in_plane;
          for_each_tap(H, W, 1, K, ay, ax, opts, [&](Index o, Index k, Index i, Index len, Index) {
            Span<Scalar>(dxc + i, len) += kd[k * C + c] * ConstSpan<Scalar>(dyc + o, len);
          });
        }
        add_from_planar(dxp.data(), dxd + n * in_plane * C, in_plane, C);
      }
      if (need_k) {
        std::vector<Scalar> xp(static_cast<std::size_t>(in_plane * C));
        to_planar(xd + n * in_plane * C, xp.data(), in_plane, C);
        Scalar* dk = partial[static_cast<std::size_t>(n)].data();
        for (Index c = 0; c < C; ++c) {
          const Scalar* xc = xp.data() + c * in_plane;
          const Scalar* dyc = dyp.data() + c * out_plane;
          for_each_tap(H, W, 1, K, ay, ax, opts, [&](Index o, Index k, Index i, Index len, Index) {
            dk[k * C + c] += (ConstSpan<Scalar>(xc + i, len) * ConstSpan<Scalar>(dyc + o, len)).sum();
          });
        }
      }
    });
    if (need_k) {
      auto& dk = gr.grad_of(ki).array();
      for (const auto& p : partial) dk += p.array();
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolutions

/// Per-channel KxK convolution. Kernel layout is [K, K, C].
template <typename Scalar>
Var<Scalar> depthwise_conv2d(Var<Scalar> x, Var<Scalar> kernel, Conv2dOptions opts = {}) {
  Graph<Scalar>& g = *x.graph;
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  detail::check_depthwise<Scalar>(xs, ks);
  const Index N = xs[0], H = xs[1], W = xs[2], C = xs[3], K = ks[0];
  const ConvAxis ay = conv_axis("depthwise_conv2d", "height", H, K, opts.stride_h, opts.padding);
  const ConvAxis ax = conv_axis("depthwise_conv2d", "width", W, K, opts.stride_w, opts.padding);

  // With unit width stride each channel plane is convolved on its own, so every
  // kernel tap becomes one contiguous multiply-add per output row.
  if (opts.stride_w == 1) return detail::depthwise_planar(g, x, kernel, N, H, W, C, K, ay, ax, opts);

  Tensor<Scalar> out(Shape{N, ay.out, ax.out, C});
  {
    const Scalar* xd = x.value().data();
    const Scalar* kd = kernel.value().data();
    Scalar* od = out.data();
    parallel_for(N, [&](Index n) {
      const Scalar* xn = xd + n * H * W * C;
      Scalar* on = od + n * ay.out * ax.out * C;
      detail::for_each_tap(H, W, C, K, ay, ax, opts, [&](Index o, Index k, Index i, Index len, Index step) {
        detail::SegmentMap<Scalar>(on + o, C, len, Eigen::OuterStride<>(C)) +=
            detail::ConstSegmentMap<Scalar>(xn + i, C, len, Eigen::OuterStride<>(step)).colwise() *
            detail::ConstChannelMap<Scalar>(kd + k, C);
      });
    });
  }

  const std::size_t xi = x.id, ki = kernel.id;
  return g.record(std::move(out), {xi, ki}, [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    const Scalar* dyd = dy.data();
    const Index out_item = ay.out * ax.out * C;
    if (gr.requires_grad(xi)) {
      Scalar* dxd = gr.grad_of(xi).data();
      const Scalar* kd = gr.value(ki).data();
      parallel_for(N, [&](Index n) {
        Scalar* dxn = dxd + n * H * W * C;
        const Scalar* dyn = dyd + n * out_item;
        detail::for_each_tap(H, W, C, K, ay, ax, opts, [&](Index o, Index k, Index i, Index len, Index step) {
          detail::SegmentMap<Scalar>(dxn + i, C, len, Eigen::OuterStride<>(step)) +=
              detail::ConstSegmentMap<Scalar>(dyn + o, C, len, Eigen::OuterStride<>(C)).colwise() *
              detail::ConstChannelMap<Scalar>(kd + k, C);
        });
      });
    }
    if (gr.requires_grad(ki)) {
      // Per-item partials summed in batch order keep the result independent of thread count.
      std::vector<Tensor<Scalar>> partial(static_cast<std::size_t>(N), Tensor<Scalar>(Shape{K, K, C}));
      const Scalar* xd = gr.value(xi).data();
      parallel_for(N, [&](Index n) {
        Scalar* dk = partial[static_cast<std::size_t>(n)].data();
        const Scalar* xn = xd + n * H * W * C;
        const Scalar* dyn = dyd + n * out_item;
        detail::for_each_tap(H, W, C, K, ay, ax, opts, [&](Index o, Index k, Index i, Index len, Index step) {
          Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(dk + k, C) +=
              (detail::ConstSegmentMap<Scalar>(xn + i, C, len, Eigen::OuterStride<>(step)) *
               detail::ConstSegmentMap<Scalar>(dyn + o, C, len, Eigen::OuterStride<>(C)))
                  .rowwise()
                  .sum();
        });
      });
      auto& dk = gr.grad_of(ki).array();
      for (const auto& p : partial) dk += p.array();
    }
  });
}

/// 1x1 convolution: per-pixel affine map across channels. Weights are [C, C'].
template <typename Scalar>
Var<Scalar> pointwise_conv2d(Var<Scalar> x, Var<Scalar> weights, Var<Scalar> bias) {
  using Mat = detail::RowMatrix<Scalar>;
  using Map = Eigen::Map<Mat>;
  using ConstMap = Eigen::Map<const Mat>;
  Graph<Scalar>& g = *x.graph;
  const Shape xs = x.shape();
  require_rank("pointwise_conv2d", xs, 4);
  require_rank("pointwise_conv2d weights", weights.shape(), 2);
  require_rank("pointwise_conv2d bias", bias.shape(), 1);
  const Index C = xs[3], Co = weights.shape()[1];
  if (weights.shape()[0] != C) throw DimensionError("pointwise_conv2d", "channels", static_cast<long>(C), static_cast<long>(weights.shape()[0]));
  if (bias.shape()[0] != Co) throw DimensionError("pointwise_conv2d", "bias", static_cast<long>(Co), static_cast<long>(bias.shape()[0]));
  const Index rows = xs[0] * xs[1] * xs[2];

  Tensor<Scalar> out(Shape{xs[0], xs[1], xs[2], Co});
  {
    Map y(out.data(), rows, Co);
    y.noalias() = ConstMap(x.value().data(), rows, C) * ConstMap(weights.value().data(), C, Co);
    y.rowwise() += ConstMap(bias.value().data(), 1, Co).row(0);
  }
  const std::size_t xi = x.id, wi = weights.id, bi = bias.id;
  return g.record(std::move(out), {xi, wi, bi}, [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    ConstMap dym(dy.data(), rows, Co);
    if (gr.requires_grad(xi)) {
      Map dx(gr.grad_of(xi).data(), rows, C);
      dx.noalias() += dym * ConstMap(gr.value(wi).data(), C, Co).transpose();
    }
    if (gr.requires_grad(wi)) {
      Map dw(gr.grad_of(wi).data(), C, Co);
      dw.noalias() += ConstMap(gr.value(xi).data(), rows, C).transpose() * dym;
    }
    if (gr.requires_grad(bi)) {
      Map db(gr.grad_of(bi).data(), 1, Co);
      db += dym.colwise().sum();
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

template <typename Scalar, typename Fwd, typename Bwd>
Var<Scalar> unary(Var<Scalar> x, Fwd fwd, Bwd bwd) {
  Tensor<Scalar> out(x.shape(), fwd(x.value().array()));
  const std::size_t xi = x.id, self = x.graph->size();
  return x.graph->record(std::move(out), {xi}, [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    gr.grad_of(xi).array() += bwd(gr.value(xi).array(), gr.value(self).array(), dy.array());
  });
}

enum class BinaryOp { add, sub, mul };

template <typename Scalar>
Var<Scalar> binary(Var<Scalar> a, Var<Scalar> b, BinaryOp op) {
  static const char* names[] = {"add", "sub", "mul"};
  const std::string name = names[static_cast<int>(op)];
  if (a.graph != b.graph) throw ContractViolation(name + ": operands belong to different graphs");
  const bool a_scalar = a.shape().rank() == 0, b_scalar = b.shape().rank() == 0;
  if (!a_scalar && !b_scalar) require_same_shape(name, a.shape(), b.shape());
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const Index n = shape.numel();
  auto expand = [n](const Tensor<Scalar>& t) {
    return t.rank() == 0 ? Tensor<Scalar>::Array::Constant(n, t[0]).eval() : t.array();
  };
  using Array = typename Tensor<Scalar>::Array;
  const Array av = expand(a.value()), bv = expand(b.value());
  Array out;
  switch (op) {
    case BinaryOp::add: out = av + bv; break;
    case BinaryOp::sub: out = av - bv; break;
    case BinaryOp::mul: out = av * bv; break;
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->record(Tensor<Scalar>(shape, std::move(out)), {ai, bi},
                         [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    auto push = [&](std::size_t id, const Array& adj) {
      if (!gr.requires_grad(id)) return;
      Tensor<Scalar>& gt = gr.grad_of(id);
      if (gt.rank() == 0) gt[0] += adj.sum();
      else gt.array() += adj;
    };
    const Array& d = dy.array();
    switch (op) {
      case BinaryOp::add: push(ai, d); push(bi, d); break;
      case BinaryOp::sub: push(ai, d); push(bi, (-d).eval()); break;
      case BinaryOp::mul: {
        push(ai, (d * expand(gr.value(bi))).eval());
        push(bi, (d * expand(gr.value(ai))).eval());
        break;
      }
    }
  });
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return detail::binary(a, b, detail::BinaryOp::add); }
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return detail::binary(a, b, detail::BinaryOp::sub); }
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return detail::binary(a, b, detail::BinaryOp::mul); }

template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> x) {
  return detail::unary(x, [](const auto& v) { return (-v).eval(); },
                       [](const auto&, const auto&, const auto& d) { return (-d).eval(); });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> x, Scalar c) {
  return detail::unary(x, [c](const auto& v) { return (v + c).eval(); },
                       [](const auto&, const auto&, const auto& d) { return d; });
}
template <typename Scalar>
Var<Scalar> operator+(Scalar c, Var<Scalar> x) { return x + c; }

template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> x, Scalar c) {
  return detail::unary(x, [c](const auto& v) { return (v * c).eval(); },
                       [c](const auto&, const auto&, const auto& d) { return (d * c).eval(); });
}
template <typename Scalar>
Var<Scalar> operator*(Scalar c, Var<Scalar> x) { return x * c; }

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> x) {
  return detail::unary(x, [](const auto& v) { return v.tanh().eval(); },
                       [](const auto&, const auto& y, const auto& d) { return (d * (1 - y.square())).eval(); });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  return detail::unary(x, [](const auto& v) { return (1 / (1 + (-v).exp())).eval(); },
                       [](const auto&, const auto& y, const auto& d) { return (d * y * (1 - y)).eval(); });
}

/// elu(x) = x for x >= 0, exp(x) - 1 otherwise.
template <typename Scalar>
Var<Scalar> elu(Var<Scalar> x) {
  return detail::unary(
      x, [](const auto& v) { return (v >= 0).select(v, v.exp() - 1).eval(); },
      [](const auto& v, const auto& y, const auto& d) { return (v >= 0).select(d, d * (y + 1)).eval(); });
}

template <typename Scalar>
Var<Scalar> activate(Var<Scalar> x, Activation act) {
  switch (act) {
    case Activation::tanh: return tanh(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::elu: return elu(x);
    case Activation::none: break;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Channel-axis normalizers and reductions. The channel axis is the last one.

template <typename Scalar>
Var<Scalar> softmax_channels(Var<Scalar> x) {
  using Mat = detail::RowMatrix<Scalar>;
  const Shape s = x.shape();
  if (s.rank() < 1) throw DimensionError("softmax_channels", "channels", "input must have a channel axis");
  const Index C = s[s.rank() - 1], rows = s.numel() / C;
  Tensor<Scalar> out(s);
  {
    Eigen::Map<const Mat> in(x.value().data(), rows, C);
    Eigen::Map<Mat> y(out.data(), rows, C);
    y = (in.colwise() - in.rowwise().maxCoeff()).array().exp().matrix();
    y.array().colwise() /= y.rowwise().sum().array();
  }
  const std::size_t xi = x.id, self = x.graph->size();
  return x.graph->record(std::move(out), {xi}, [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    Eigen::Map<const Mat> y(gr.value(self).data(), rows, C);
    Eigen::Map<const Mat> d(dy.data(), rows, C);
    Eigen::Map<Mat> dx(gr.grad_of(xi).data(), rows, C);
    const auto dot = (d.array() * y.array()).rowwise().sum().eval();
    dx.array() += y.array() * (d.array().colwise() - dot);
  });
}

template <typename Scalar>
Var<Scalar> log_softmax_channels(Var<Scalar> x) {
  using Mat = detail::RowMatrix<Scalar>;
  const Shape s = x.shape();
  if (s.rank() < 1) throw DimensionError("log_softmax_channels", "channels", "input must have a channel axis");
  const Index C = s[s.rank() - 1], rows = s.numel() / C;
  Tensor<Scalar> out(s);
  {
    Eigen::Map<const Mat> in(x.value().data(), rows, C);
    Eigen::Map<Mat> y(out.data(), rows, C);
    y = in.colwise() - in.rowwise().maxCoeff();
    const auto lse = y.array().exp().rowwise().sum().log().eval();
    y.array().colwise() -= lse;
  }
  const std::size_t xi = x.id, self = x.graph->size();
  return x.graph->record(std::move(out), {xi}, [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    Eigen::Map<const Mat> y(gr.value(self).data(), rows, C);
    Eigen::Map<const Mat> d(dy.data(), rows, C);
    Eigen::Map<Mat> dx(gr.grad_of(xi).data(), rows, C);
    const auto total = d.rowwise().sum().eval();
    dx.array() += d.array() - y.array().exp().colwise() * total.array();
  });
}

/// Mean along `axis`. The reduced axis is kept with extent 1.
template <typename Scalar>
Var<Scalar> reduce_mean(Var<Scalar> x, Index axis) {
  const Shape s = x.shape();
  if (axis < 0 || axis >= s.rank()) {
    throw ContractViolation("reduce_mean: axis " + std::to_string(axis) + " out of range for rank " + std::to_string(s.rank()));
  }
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s[i];
  for (Index i = axis + 1; i < s.rank(); ++i) inner *= s[i];
  const Index extent = s[axis];
  std::vector<Index> dims(s.dims().begin(), s.dims().end());
  dims[static_cast<std::size_t>(axis)] = 1;
  const Shape os{std::span<const Index>(dims)};
  Tensor<Scalar> out(os);
  const Scalar* xd = x.value().data();
  const Scalar scale = Scalar(1) / static_cast<Scalar>(extent);
  for (Index o = 0; o < outer; ++o) {
    Scalar* dst = out.data() + o * inner;
    for (Index e = 0; e < extent; ++e) {
      const Scalar* src = xd + (o * extent + e) * inner;
      for (Index i = 0; i < inner; ++i) dst[i] += src[i];
    }
    for (Index i = 0; i < inner; ++i) dst[i] *= scale;
  }
  const std::size_t xi = x.id;
  return x.graph->record(std::move(out), {xi}, [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    Scalar* dx = gr.grad_of(xi).data();
    for (Index o = 0; o < outer; ++o) {
      const Scalar* src = dy.data() + o * inner;
      for (Index e = 0; e < extent; ++e) {
        Scalar* dst = dx + (o * extent + e) * inner;
        for (Index i = 0; i < inner; ++i) dst[i] += src[i] * scale;
      }
    }
  });
}

/// Sum of all elements, as a rank-0 tensor.
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  const std::size_t xi = x.id;
  return x.graph->record(Tensor<Scalar>::scalar(x.value().array().sum()), {xi},
                         [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) { gr.grad_of(xi).array() += dy[0]; });
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, const Shape& shape) {
  const std::size_t xi = x.id;
  return x.graph->record(x.value().reshaped(shape), {xi}, [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    gr.grad_of(xi).array() += dy.array();
  });
}

/// Concatenates two NHWC tensors along channels.
template <typename Scalar>
Var<Scalar> concat_channels(Var<Scalar> a, Var<Scalar> b) {
  const Shape as = a.shape(), bs = b.shape();
  require_rank("concat_channels", as, 4);
  require_rank("concat_channels", bs, 4);
  for (Index i = 0; i < 3; ++i) {
    if (as[i] != bs[i]) throw DimensionError("concat_channels", nhwc_axis_name(i), static_cast<long>(as[i]), static_cast<long>(bs[i]));
  }
  const Index Ca = as[3], Cb = bs[3], rows = as[0] * as[1] * as[2];
  Tensor<Scalar> out(Shape{as[0], as[1], as[2], Ca + Cb});
  const Scalar* ad = a.value().data();
  const Scalar* bd = b.value().data();
  for (Index r = 0; r < rows; ++r) {
    std::copy_n(ad + r * Ca, Ca, out.data() + r * (Ca + Cb));
    std::copy_n(bd + r * Cb, Cb, out.data() + r * (Ca + Cb) + Ca);
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->record(std::move(out), {ai, bi}, [=](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    if (gr.requires_grad(ai)) {
      Scalar* da = gr.grad_of(ai).data();
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < Ca; ++c) da[r * Ca + c] += dy[r * (Ca + Cb) + c];
    }
    if (gr.requires_grad(bi)) {
      Scalar* db = gr.grad_of(bi).data();
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < Cb; ++c) db[r * Cb + c] += dy[r * (Ca + Cb) + Ca + c];
    }
  });
}

}  // namespace gfcn
