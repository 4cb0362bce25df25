#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gfcn/layers.hpp"

namespace gfcn {

/// Gating function inside a GateBlock. `y'` = P1(y); every variant is wrapped
/// as P2(inner) (+ y where noted).
enum class GateVariant {
  baseline,             // (H1 - H2) * T            + y
  mul_gate_plus_one,    // (T + 1) * y'             + y
  single_h,             // H1 * T                   + y
  add_one_h1_minus_h2,  // (T + 1) * H1 - H2        + y
  h1_gate_minus_h2,     // H1 * T - H2              + y
  residual_only,        // H1                       + y
  gates_no_residual,    // (H1 - H2) * T
  plain,                // H1
};

enum class StemNonlinearity { softmax, tanh, none };

struct NormalizationFlags {
  bool layer_norm_everywhere = true;  // false removes every layer norm
  bool layer_norm_at_ends = true;     // false removes the input and output layer norms
  bool batch_norm = true;
  StemNonlinearity stem_nonlinearity = StemNonlinearity::softmax;

  bool use_end_layer_norm() const { return layer_norm_everywhere && layer_norm_at_ends; }
};

inline constexpr std::array<std::string_view, 8> kGateVariantNames = {
    "baseline", "mul_gate_plus_one", "single_h", "add_one_h1_minus_h2",
    "h1_gate_minus_h2", "residual_only", "gates_no_residual", "plain"};
inline constexpr std::array<std::string_view, 3> kStemNonlinearityNames = {"softmax", "tanh", "none"};

inline std::string to_string(GateVariant v) { return std::string(kGateVariantNames[static_cast<std::size_t>(v)]); }
inline std::string to_string(StemNonlinearity v) { return std::string(kStemNonlinearityNames[static_cast<std::size_t>(v)]); }

inline std::optional<GateVariant> parse_gate_variant(std::string_view s) {
  for (std::size_t i = 0; i < kGateVariantNames.size(); ++i)
    if (kGateVariantNames[i] == s) return static_cast<GateVariant>(i);
  return std::nullopt;
}
inline std::optional<StemNonlinearity> parse_stem_nonlinearity(std::string_view s) {
  for (std::size_t i = 0; i < kStemNonlinearityNames.size(); ++i)
    if (kStemNonlinearityNames[i] == s) return static_cast<StemNonlinearity>(i);
  return std::nullopt;
}

inline bool has_residual(GateVariant v) { return v != GateVariant::gates_no_residual && v != GateVariant::plain; }

/// Which transformation functions a variant evaluates: {H1, H2, T}.
inline std::array<bool, 3> gate_functions_used(GateVariant v) {
  switch (v) {
    case GateVariant::baseline:
    case GateVariant::add_one_h1_minus_h2:
    case GateVariant::h1_gate_minus_h2:
    case GateVariant::gates_no_residual: return {true, true, true};
    case GateVariant::mul_gate_plus_one: return {false, false, true};
    case GateVariant::single_h: return {true, false, true};
    case GateVariant::residual_only:
    case GateVariant::plain: return {true, false, false};
  }
  return {true, true, true};
}

/// Architecture description; `num_blocks(c1, c2)` is written n(c1,c2).
struct ModelConfig {
  int num_blocks = 4;
  int c1 = 128;
  int c2 = 512;
  int alphabet_size = 10;
  int input_height = 32;
  GateVariant gate_variant = GateVariant::baseline;
  NormalizationFlags normalization;
  double dropout_rate = 0.25;
  int gate_kernel = 3;
  int stem_kernel = 13;
  int stem_channels = 16;
  /// Initial gain of the output layer norm; bounds how peaked the first predictions can be.
  double output_norm_gain = 1.0;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-3;
  RenormSchedule renorm;

  static ModelConfig from_notation(int n, int c1, int c2, int alphabet_size) {
    ModelConfig c;
    c.num_blocks = n;
    c.c1 = c1;
    c.c2 = c2;
    c.alphabet_size = alphabet_size;
    return c;
  }

  /// Every violated constraint, one message each. Empty when valid.
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (num_blocks < 1) v.push_back("num_blocks must be >= 1");
    if (c1 < 2 || c1 % 2 != 0) v.push_back("c1 must be a positive even number (got " + std::to_string(c1) + ")");
    if (c2 < 2 || c2 % 2 != 0) v.push_back("c2 must be a positive even number (got " + std::to_string(c2) + ")");
    if (num_blocks < 3 && c2 != c1) {
      v.push_back("c2 sets the width of the third block; with num_blocks < 3 it must equal c1 (got " +
                  std::to_string(num_blocks) + "(" + std::to_string(c1) + "," + std::to_string(c2) + "))");
    }
    if (alphabet_size < 1) v.push_back("alphabet_size must be >= 1");
    if (input_height < 1) v.push_back("input_height must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) v.push_back("dropout_rate must lie in [0, 1)");
    if (gate_kernel < 1 || gate_kernel % 2 == 0) v.push_back("gate_kernel must be odd");
    if (stem_kernel < 1 || stem_kernel % 2 == 0) v.push_back("stem_kernel must be odd");
    if (stem_channels < 1) v.push_back("stem_channels must be >= 1");
    if (!(output_norm_gain > 0.0)) v.push_back("output_norm_gain must be > 0");
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) v.push_back("bn_momentum must lie in [0, 1)");
    if (!(bn_epsilon > 0.0)) v.push_back("bn_epsilon must be > 0");
    if (!(renorm.rmax_start >= 1.0 && renorm.rmax_end >= 1.0)) v.push_back("renorm r_max must be >= 1");
    if (!(renorm.dmax_start >= 0.0 && renorm.dmax_end >= 0.0)) v.push_back("renorm d_max must be >= 0");
    if (renorm.ramp_end <= renorm.ramp_begin) v.push_back("renorm ramp_end must exceed ramp_begin");
    return v;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::ostringstream msg;
    msg << "invalid model config:";
    for (const auto& s : v) msg << "\n  - " << s;
    throw ConfigError(msg.str());
  }

  /// Width of each block: c1 for the first two, c2 from the third on.
  std::vector<Index> block_widths() const {
    std::vector<Index> w;
    for (int i = 0; i < num_blocks; ++i) w.push_back(i < 2 ? c1 : c2);
    return w;
  }

  Index num_classes() const { return alphabet_size + 1; }
  Index stem_output_channels() const { return stem_channels + 1; }
};

template <typename Scalar>
struct GateBlockParams {
  SeparableConvParams<Scalar> p1;  // C -> C/2, elu
  std::optional<SeparableConvParams<Scalar>> h1, h2;  // C/2 -> C/2, tanh
  std::optional<SeparableConvParams<Scalar>> t;       // C/2 -> C/2, sigmoid
  SeparableConvParams<Scalar> p2;  // C/2 -> C, elu

  Index width() const { return p1.in_channels(); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    p1.visit(prefix + "p1.", fn);
    if (h1) h1->visit(prefix + "h1.", fn);
    if (h2) h2->visit(prefix + "h2.", fn);
    if (t) t->visit(prefix + "t.", fn);
    p2.visit(prefix + "p2.", fn);
  }
};

/// 1x1 projection between blocks of different widths: pointwise -> BN -> elu.
template <typename Scalar>
struct TransitionParams {
  Tensor<Scalar> weights, bias;
  std::optional<BatchNormState<Scalar>> bn;

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + "weights", weights, TensorRole::parameter);
    fn(prefix + "bias", bias, TensorRole::parameter);
    if (bn) bn->visit(prefix + "bn.", fn);
  }
};

template <typename Scalar>
struct StemParams {
  std::optional<LayerNormParams<Scalar>> input_norm;
  Tensor<Scalar> projection_weights, projection_bias;  // [1, 16], [16]
  Tensor<Scalar> preprocess_kernel;                    // [13, 13, 16]

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    if (input_norm) input_norm->visit(prefix + "input_norm.", fn);
    fn(prefix + "projection.weights", projection_weights, TensorRole::parameter);
    fn(prefix + "projection.bias", projection_bias, TensorRole::parameter);
    fn(prefix + "preprocess", preprocess_kernel, TensorRole::parameter);
  }
};

template <typename Scalar>
struct HeadParams {
  DropoutConfig dropout;
  Tensor<Scalar> weights, bias;  // [C, A+1], [A+1]
  std::optional<LayerNormParams<Scalar>> output_norm;

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + "projection.weights", weights, TensorRole::parameter);
    fn(prefix + "projection.bias", bias, TensorRole::parameter);
    if (output_norm) output_norm->visit(prefix + "output_norm.", fn);
  }
};

template <typename Scalar>
struct Model {
  ModelConfig config;
  StemParams<Scalar> stem;
  std::vector<std::optional<TransitionParams<Scalar>>> transitions;  // one slot per block
  std::vector<GateBlockParams<Scalar>> blocks;
  HeadParams<Scalar> head;

  /// Calls fn(name, tensor, role) for every tensor in a fixed order.
  template <typename Fn>
  void visit(Fn&& fn) {
    stem.visit("stem.", fn);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      if (transitions[i]) transitions[i]->visit(p + "transition.", fn);
      blocks[i].visit(p, fn);
    }
    head.visit("head.", fn);
  }

  /// Calls fn(name, state) for every batch-norm layer, in visit() order.
  template <typename Fn>
  void visit_batch_norms(Fn&& fn) {
    auto on_sep = [&](const std::string& p, SeparableConvParams<Scalar>& s) {
      if (s.bn) fn(p + "bn", *s.bn);
    };
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      if (transitions[i] && transitions[i]->bn) fn(p + "transition.bn", *transitions[i]->bn);
      auto& b = blocks[i];
      on_sep(p + "p1.", b.p1);
      if (b.h1) on_sep(p + "h1.", *b.h1);
      if (b.h2) on_sep(p + "h2.", *b.h2);
      if (b.t) on_sep(p + "t.", *b.t);
      on_sep(p + "p2.", b.p2);
    }
  }

  template <typename Other>
  Model<Other> cast() const;
};

template <typename Scalar>
Model<Scalar> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const bool bn = config.normalization.batch_norm;
  const Index K = config.gate_kernel;
  Model<Scalar> m;
  m.config = config;

  const Index S = config.stem_channels;
  if (config.normalization.use_end_layer_norm()) m.stem.input_norm = LayerNormParams<Scalar>::create(1);
  m.stem.projection_weights = fan_in_uniform<Scalar>(Shape{1, S}, 1, rng);
  m.stem.projection_bias = Tensor<Scalar>(Shape{S});
  m.stem.preprocess_kernel =
      fan_in_uniform<Scalar>(Shape{config.stem_kernel, config.stem_kernel, S}, config.stem_kernel * config.stem_kernel, rng);

  const auto uses = gate_functions_used(config.gate_variant);
  Index width = config.stem_output_channels();
  for (Index c : config.block_widths()) {
    if (c != width) {
      TransitionParams<Scalar> tr;
      tr.weights = fan_in_uniform<Scalar>(Shape{width, c}, width, rng);
      tr.bias = Tensor<Scalar>(Shape{c});
      if (bn) tr.bn = BatchNormState<Scalar>::create(c);
      m.transitions.emplace_back(std::move(tr));
    } else {
      m.transitions.emplace_back(std::nullopt);
    }
    const Index half = c / 2;
    GateBlockParams<Scalar> b{
        SeparableConvParams<Scalar>::create(c, half, K, Activation::elu, bn, rng), {}, {}, {}, {}};
    if (uses[0]) b.h1 = SeparableConvParams<Scalar>::create(half, half, K, Activation::tanh, bn, rng);
    if (uses[1]) b.h2 = SeparableConvParams<Scalar>::create(half, half, K, Activation::tanh, bn, rng);
    if (uses[2]) b.t = SeparableConvParams<Scalar>::create(half, half, K, Activation::sigmoid, bn, rng);
    b.p2 = SeparableConvParams<Scalar>::create(half, c, K, Activation::elu, bn, rng);
    m.blocks.push_back(std::move(b));
    width = c;
  }

  m.head.dropout.rate = config.dropout_rate;
  m.head.weights = fan_in_uniform<Scalar>(Shape{width, config.num_classes()}, width, rng);
  m.head.bias = Tensor<Scalar>(Shape{config.num_classes()});
  if (config.normalization.use_end_layer_norm()) {
    m.head.output_norm = LayerNormParams<Scalar>::create(config.num_classes());
    m.head.output_norm->gamma.array() = static_cast<Scalar>(config.output_norm_gain);
  }
  m.visit_batch_norms([&](const std::string&, BatchNormState<Scalar>& s) {
    s.momentum = config.bn_momentum;
    s.epsilon = config.bn_epsilon;
    s.renorm = config.renorm;
  });
  return m;
}

/// Number of trainable scalars in a model or any single layer.
template <typename Part>
std::int64_t parameter_count(Part& part) {
  std::int64_t n = 0;
  auto count = [&](const std::string&, auto& t, TensorRole role) {
    if (role == TensorRole::parameter) n += t.size();
  };
  if constexpr (requires { part.visit(count); }) {
    part.visit(count);
  } else {
    part.visit("", count);
  }
  return n;
}

template <typename Scalar>
template <typename Other>
Model<Other> Model<Scalar>::cast() const {
  Model<Scalar> src = *this;
  Model<Other> dst = build_model<Other>(config, 0);
  std::vector<Tensor<Scalar>*> from;
  src.visit([&](const std::string&, Tensor<Scalar>& t, TensorRole) { from.push_back(&t); });
  std::size_t i = 0;
  dst.visit([&](const std::string&, Tensor<Other>& t, TensorRole) { t = from[i++]->template cast<Other>(); });
  std::vector<const BatchNormState<Scalar>*> states;
  src.visit_batch_norms([&](const std::string&, BatchNormState<Scalar>& s) { states.push_back(&s); });
  i = 0;
  dst.visit_batch_norms([&](const std::string&, BatchNormState<Other>& s) {
    const auto* from_state = states[i++];
    s.momentum = from_state->momentum;
    s.epsilon = from_state->epsilon;
    s.renorm = from_state->renorm;
    s.step = from_state->step;
  });
  dst.head.dropout = src.head.dropout;
  return dst;
}

// ---------------------------------------------------------------------------

/// Intermediate stem tensors exposed for inspection.
template <typename Scalar>
struct StemTaps {
  std::optional<Var<Scalar>> normalized_projection;
};

/// layer norm -> 1x1 to 16 -> channel softmax -> 13x13 depthwise, concatenated
/// with the layer-normalized image: 17 output channels.
template <typename Scalar>
Var<Scalar> stem_forward(Var<Scalar> image, Model<Scalar>& model, bool training, StemTaps<Scalar>* taps = nullptr) {
  (void)training;
  Graph<Scalar>& g = *image.graph;
  require_rank("stem_forward", image.shape(), 4);
  if (image.shape()[3] != 1) {
    throw DimensionError("stem_forward", "channels", 1L, static_cast<long>(image.shape()[3]));
  }
  auto& stem = model.stem;
  Var<Scalar> normalized = stem.input_norm ? layer_norm(image, *stem.input_norm) : image;
  Var<Scalar> h = pointwise_conv2d(normalized, g.parameter(stem.projection_weights), g.parameter(stem.projection_bias));
  switch (model.config.normalization.stem_nonlinearity) {
    case StemNonlinearity::softmax: h = softmax_channels(h); break;
    case StemNonlinearity::tanh: h = tanh(h); break;
    case StemNonlinearity::none: break;
  }
  if (taps) taps->normalized_projection = h;
  h = depthwise_conv2d(h, g.parameter(stem.preprocess_kernel));
  return concat_channels(h, normalized);
}

template <typename Scalar>
Var<Scalar> transition_forward(Var<Scalar> x, TransitionParams<Scalar>& tr, bool training) {
  Graph<Scalar>& g = *x.graph;
  Var<Scalar> h = pointwise_conv2d(x, g.parameter(tr.weights), g.parameter(tr.bias));
  if (tr.bn) h = batch_norm(h, *tr.bn, training);
  return elu(h);
}

template <typename Scalar>
Var<Scalar> gate_block_forward(Var<Scalar> y, GateBlockParams<Scalar>& params, GateVariant variant, bool training) {
  require_rank("gate_block_forward", y.shape(), 4);
  if (y.shape()[3] != params.width()) {
    throw DimensionError("gate_block_forward", "channels", static_cast<long>(params.width()), static_cast<long>(y.shape()[3]));
  }
  const auto uses = gate_functions_used(variant);
  if ((uses[0] && !params.h1) || (uses[1] && !params.h2) || (uses[2] && !params.t)) {
    throw ContractViolation("gate_block_forward: block was built for a different gate variant");
  }
  Var<Scalar> yp = separable_conv(y, params.p1, training);
  auto H1 = [&] { return separable_conv(yp, *params.h1, training); };
  auto H2 = [&] { return separable_conv(yp, *params.h2, training); };
  auto T = [&] { return separable_conv(yp, *params.t, training); };
  const Scalar one(1);

  Var<Scalar> inner;
  switch (variant) {
    case GateVariant::baseline:
    case GateVariant::gates_no_residual: inner = (H1() - H2()) * T(); break;
    case GateVariant::mul_gate_plus_one: inner = (T() + one) * yp; break;
    case GateVariant::single_h: inner = H1() * T(); break;
    case GateVariant::add_one_h1_minus_h2: inner = (T() + one) * H1() - H2(); break;
    case GateVariant::h1_gate_minus_h2: inner = H1() * T() - H2(); break;
    case GateVariant::residual_only:
    case GateVariant::plain: inner = H1(); break;
  }
  Var<Scalar> out = separable_conv(inner, params.p2, training);
  return has_residual(variant) ? out + y : out;
}

/// dropout -> 1x1 to A+1 -> height pooling -> layer norm -> log-softmax.
/// Returns per-frame log-probabilities shaped [N, W, A+1].
template <typename Scalar>
Var<Scalar> head_forward(Var<Scalar> features, Model<Scalar>& model, bool training, Rng& rng) {
  Graph<Scalar>& g = *features.graph;
  auto& head = model.head;
  Var<Scalar> h = spatial_dropout(features, head.dropout, training, rng);
  h = pointwise_conv2d(h, g.parameter(head.weights), g.parameter(head.bias));
  h = global_avg_pool_height(h);
  if (head.output_norm) h = layer_norm(h, *head.output_norm);
  h = log_softmax_channels(h);
  const Shape s = h.shape();
  return reshape(h, Shape{s[0], s[2], s[3]});
}

template <typename Scalar>
Var<Scalar> model_forward(Var<Scalar> image, Model<Scalar>& model, bool training, Rng& rng) {
  Var<Scalar> h = stem_forward(image, model, training);
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    if (model.transitions[i]) h = transition_forward(h, *model.transitions[i], training);
    h = gate_block_forward(h, model.blocks[i], model.config.gate_variant, training);
  }
  return head_forward(h, model, training, rng);
}

/// Convenience inference pass returning [N, W, A+1] log-probabilities.
template <typename Scalar>
Tensor<Scalar> infer(Model<Scalar>& model, const Tensor<Scalar>& images) {
  Graph<Scalar> g;
  Rng rng(0);
  return model_forward(g.constant(images), model, false, rng).value();
}

}  // namespace gfcn
