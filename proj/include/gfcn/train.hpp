#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gfcn/augment.hpp"
#include "gfcn/checkpoint.hpp"
#include "gfcn/ctc.hpp"
#include "gfcn/dataset.hpp"
#include "gfcn/gatenet.hpp"
#include "gfcn/runtime.hpp"

namespace gfcn {

/// base_lr * decay_factor^(t / decay_horizon), continuous in t.
struct LrSchedule {
  double base_lr = 5e-3;
  double decay_factor = 0.1;
  double decay_horizon = 9e4;
};

inline double lr_at(const LrSchedule& s, double t) {
  if (t < 0) throw ContractViolation("lr_at: step must be non-negative");
  return s.base_lr * std::pow(s.decay_factor, t / s.decay_horizon);
}

/// Trainable tensors of a model in visit() order.
template <typename Scalar>
std::vector<Tensor<Scalar>*> trainable_parameters(Model<Scalar>& model) {
  std::vector<Tensor<Scalar>*> out;
  model.visit([&](const std::string&, Tensor<Scalar>& t, TensorRole role) {
    if (role == TensorRole::parameter) out.push_back(&t);
  });
  return out;
}

template <typename Scalar>
std::vector<std::string> trainable_names(Model<Scalar>& model) {
  std::vector<std::string> out;
  model.visit([&](const std::string& name, Tensor<Scalar>&, TensorRole role) {
    if (role == TensorRole::parameter) out.push_back(name);
  });
  return out;
}

template <typename Scalar>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor<Scalar>> m, v;

  static AdamState create(const std::vector<Tensor<Scalar>*>& params) {
    AdamState s;
    for (const auto* p : params) {
      s.m.emplace_back(p->shape());
      s.v.emplace_back(p->shape());
    }
    return s;
  }
};

/// One bias-corrected Adam update. A null gradient counts as zero.
template <typename Scalar>
void adam_step(const std::vector<Tensor<Scalar>*>& params, const std::vector<const Tensor<Scalar>*>& grads,
               AdamState<Scalar>& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw DimensionError("adam_step", "parameters", static_cast<long>(state.m.size()), static_cast<long>(params.size()));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const Scalar b1 = static_cast<Scalar>(state.beta1), b2 = static_cast<Scalar>(state.beta2);
  const Scalar step_size = static_cast<Scalar>(lr / c1);
  const Scalar inv_c2 = static_cast<Scalar>(1.0 / c2), eps = static_cast<Scalar>(state.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i].array();
    auto& v = state.v[i].array();
    require_same_shape("adam_step", params[i]->shape(), state.m[i].shape());
    if (grads[i]) {
      require_same_shape("adam_step", params[i]->shape(), grads[i]->shape());
      const auto& g = grads[i]->array();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.square();
    } else {
      m *= b1;
      v *= b2;
    }
    params[i]->array() -= step_size * m / ((v * inv_c2).sqrt() + eps);
  }
}

template <typename Scalar>
void adam_step(const std::vector<Tensor<Scalar>*>& params, const GradientMap<Scalar>& grads, AdamState<Scalar>& state,
               double lr) {
  std::vector<const Tensor<Scalar>*> g;
  for (auto* p : params) {
    const auto it = grads.find(p);
    g.push_back(it == grads.end() ? nullptr : &it->second);
  }
  adam_step(params, g, state, lr);
}

/// Exponential moving average of the parameters. With `warmup` the effective
/// decay is min(decay, (1 + n) / (10 + n)) after n updates, so early shadows
/// are not dominated by the initialization.
template <typename Scalar>
struct PolyakState {
  double decay = 0.999;
  bool warmup = false;
  std::int64_t updates = 0;
  std::vector<Tensor<Scalar>> shadow;

  static PolyakState create(const std::vector<Tensor<Scalar>*>& params, double decay, bool warmup = false) {
    PolyakState s;
    s.decay = decay;
    s.warmup = warmup;
    for (const auto* p : params) s.shadow.push_back(*p);
    return s;
  }

  double effective_decay() const {
    if (!warmup) return decay;
    const double n = static_cast<double>(updates);
    return std::min(decay, (1.0 + n) / (10.0 + n));
  }
};

template <typename Scalar>
void polyak_update(PolyakState<Scalar>& state, const std::vector<Tensor<Scalar>*>& params) {
  if (params.size() != state.shadow.size()) {
    throw DimensionError("polyak_update", "parameters", static_cast<long>(state.shadow.size()), static_cast<long>(params.size()));
  }
  const Scalar d = static_cast<Scalar>(state.effective_decay());
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape("polyak_update", state.shadow[i].shape(), params[i]->shape());
    state.shadow[i].array() = d * state.shadow[i].array() + (Scalar(1) - d) * params[i]->array();
  }
  ++state.updates;
}

/// Copy of `model` with the shadow parameters swapped in; buffers come from `model`.
template <typename Scalar>
Model<Scalar> with_shadow(const Model<Scalar>& model, const PolyakState<Scalar>& polyak) {
  Model<Scalar> out = model;
  auto params = trainable_parameters(out);
  for (std::size_t i = 0; i < params.size(); ++i) *params[i] = polyak.shadow[i];
  return out;
}

// --- metrics ---------------------------------------------------------------

/// Unit-cost edit distance between code-point sequences.
template <typename Seq>
Index levenshtein(const Seq& a, const Seq& b) {
  std::vector<Index> row(b.size() + 1);
  std::iota(row.begin(), row.end(), Index(0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    Index diag = row[0];
    row[0] = static_cast<Index>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const Index up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

/// Character-level distance of two UTF-8 strings.
inline Index levenshtein(std::string_view a, std::string_view b) { return levenshtein(utf8_decode(a), utf8_decode(b)); }

/// Edit distance over the ground-truth length. An empty ground truth scores 0
/// against an empty hypothesis and 1 otherwise.
inline double cer(std::string_view gt, std::string_view hyp) {
  const auto g = utf8_decode(gt), h = utf8_decode(hyp);
  if (g.empty()) return h.empty() ? 0.0 : 1.0;
  return static_cast<double>(levenshtein(g, h)) / static_cast<double>(g.size());
}

struct MetricsReport {
  double cer = 0;             // corpus: beam top-1 edits / ground-truth characters
  double mean_line_cer = 0;   // mean of per-line CER
  double ser = 0;             // fraction of lines with at least one error
  double greedy_cer = 0;      // corpus CER of greedy decoding
  std::vector<double> cer_at_top_n;  // [N-1] -> corpus CER choosing the best of the top N
  Index sequences = 0;
  Index characters = 0;
  Index edits = 0;

  /// key=value lines, one metric per line.
  std::string to_key_values() const {
    std::ostringstream out;
    out << "cer=" << cer << "\nmean_line_cer=" << mean_line_cer << "\nser=" << ser << "\ngreedy_cer=" << greedy_cer
        << "\nsequences=" << sequences << "\ncharacters=" << characters << "\nedits=" << edits << "\n";
    for (std::size_t n = 0; n < cer_at_top_n.size(); ++n) out << "cer_at_top" << n + 1 << "=" << cer_at_top_n[n] << "\n";
    return out.str();
  }
};

/// Aggregates decoded candidates: `candidates[i]` holds the beam outputs for line i
/// best first, `greedy[i]` the greedy output.
inline MetricsReport aggregate_metrics(const std::vector<std::string>& truths, const std::vector<std::vector<std::string>>& candidates,
                                       const std::vector<std::string>& greedy, Index top_n) {
  if (truths.empty()) throw ContractViolation("evaluate: dataset is empty");
  MetricsReport r;
  r.sequences = static_cast<Index>(truths.size());
  r.cer_at_top_n.assign(static_cast<std::size_t>(top_n), 0.0);
  std::vector<Index> best_edits(static_cast<std::size_t>(top_n), 0);
  Index greedy_edits = 0, wrong = 0;
  double line_sum = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const auto gt = utf8_decode(truths[i]);
    const std::string top1 = candidates[i].empty() ? std::string() : candidates[i][0];
    const Index e = levenshtein(gt, utf8_decode(top1));
    line_sum += cer(truths[i], top1);
    wrong += top1 != truths[i];
    if (gt.empty()) continue;  // empty lines do not enter the corpus ratio
    r.characters += static_cast<Index>(gt.size());
    r.edits += e;
    greedy_edits += levenshtein(gt, utf8_decode(greedy[i]));
    Index best = std::numeric_limits<Index>::max();
    for (Index n = 0; n < top_n; ++n) {
      if (static_cast<std::size_t>(n) < candidates[i].size()) best = std::min(best, levenshtein(gt, utf8_decode(candidates[i][static_cast<std::size_t>(n)])));
      if (best == std::numeric_limits<Index>::max()) best = static_cast<Index>(gt.size());
      best_edits[static_cast<std::size_t>(n)] += best;
    }
  }
  const double chars = static_cast<double>(std::max<Index>(r.characters, 1));
  r.cer = static_cast<double>(r.edits) / chars;
  r.greedy_cer = static_cast<double>(greedy_edits) / chars;
  r.mean_line_cer = line_sum / static_cast<double>(r.sequences);
  r.ser = static_cast<double>(wrong) / static_cast<double>(r.sequences);
  for (Index n = 0; n < top_n; ++n) r.cer_at_top_n[static_cast<std::size_t>(n)] = static_cast<double>(best_edits[static_cast<std::size_t>(n)]) / chars;
  return r;
}

template <typename Scalar>
FrameLogProbs<Scalar> frame_log_probs(const Tensor<Scalar>& lp, Index n = 0) {
  const Index T = lp.dim(1), C = lp.dim(2);
  return Eigen::Map<const FrameLogProbs<Scalar>>(lp.data() + n * T * C, T, C);
}

/// [1, H, W, 1] view of a sample image.
template <typename Scalar>
Tensor<Scalar> as_batch(const TensorF& image) {
  const Tensor<Scalar> img = image.template cast<Scalar>();
  return img.reshaped(Shape{1, image.dim(0), image.dim(1), image.dim(2)});
}

/// Decodes every sample one at a time in inference mode (beam width 0 skips the beam).
template <typename Scalar>
MetricsReport evaluate(Model<Scalar>& model, const std::vector<Sample>& samples, const AlphabetCodec& codec, Index beam_width = 10,
                       Index top_n = 6) {
  if (samples.empty()) throw ContractViolation("evaluate: dataset is empty");
  std::vector<std::string> truths, greedy;
  std::vector<std::vector<std::string>> candidates;
  for (const auto& s : samples) {
    const auto lp = frame_log_probs(infer(model, as_batch<Scalar>(s.image)));
    truths.push_back(s.transcript);
    greedy.push_back(codec.decode(greedy_decode(lp)));
    std::vector<std::string> c;
    if (beam_width > 0) {
      for (const auto& h : beam_search(lp, beam_width, std::min(top_n, beam_width))) c.push_back(codec.decode(h.labels));
    } else {
      c.push_back(greedy.back());
    }
    candidates.push_back(std::move(c));
  }
  return aggregate_metrics(truths, candidates, greedy, beam_width > 0 ? std::min(top_n, beam_width) : 1);
}

/// Corpus CER of greedy decoding.
template <typename Scalar>
double greedy_cer(Model<Scalar>& model, const std::vector<Sample>& samples, const AlphabetCodec& codec) {
  return evaluate(model, samples, codec, 0, 1).greedy_cer;
}

// --- training --------------------------------------------------------------

struct TrainConfig {
  int batch_size = 16;
  int epochs = 30;
  LrSchedule lr;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_epsilon = 1e-8;
  double polyak_decay = 0.999;
  bool polyak_warmup = true;
  bool augment = true;
  std::uint64_t seed = 1;
  int eval_beam_width = 10;
  int eval_top_n = 6;
  /// Stop once validation greedy CER is at or below this value; negative disables.
  double target_cer = -1;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (batch_size < 2) {
      v.push_back("train.batch_size must be >= 2: batch renormalization needs at least 2 samples per batch (got " +
                  std::to_string(batch_size) + ")");
    }
    if (epochs < 0) v.push_back("train.epochs must be >= 0");
    if (!(lr.base_lr > 0)) v.push_back("train.base_lr must be > 0");
    if (!(lr.decay_factor > 0 && lr.decay_factor <= 1)) v.push_back("train.decay_factor must lie in (0, 1]");
    if (!(lr.decay_horizon > 0)) v.push_back("train.decay_horizon must be > 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) v.push_back("train.adam_beta1/2 must lie in [0, 1)");
    if (!(adam_epsilon > 0)) v.push_back("train.adam_epsilon must be > 0");
    if (!(polyak_decay >= 0 && polyak_decay < 1)) v.push_back("train.polyak_decay must lie in [0, 1)");
    if (eval_beam_width < 1) v.push_back("train.eval_beam_width must be >= 1");
    if (eval_top_n < 1 || eval_top_n > eval_beam_width) v.push_back("train.eval_top_n must lie in [1, eval_beam_width]");
    return v;
  }
};

/// Everything that evolves during training.
template <typename Scalar>
struct TrainSession {
  TrainConfig config;
  AugmentConfig augment;
  AlphabetCodec codec;
  Model<Scalar> model;
  AdamState<Scalar> adam;
  PolyakState<Scalar> polyak;
  std::int64_t step = 0;
  std::int64_t epoch = 0;

  static TrainSession create(const ModelConfig& model_config, const TrainConfig& train, const AugmentConfig& augment,
                             const AlphabetCodec& codec) {
    retain_heap_memory();
    TrainSession s;
    s.config = train;
    s.augment = augment;
    s.codec = codec;
    ModelConfig mc = model_config;
    mc.alphabet_size = codec.size();
    s.model = build_model<Scalar>(mc, train.seed);
    s.reset_optimizer();
    return s;
  }

  void reset_optimizer() {
    const auto params = trainable_parameters(model);
    adam = AdamState<Scalar>::create(params);
    adam.beta1 = config.adam_beta1;
    adam.beta2 = config.adam_beta2;
    adam.epsilon = config.adam_epsilon;
    polyak = PolyakState<Scalar>::create(params, config.polyak_decay, config.polyak_warmup);
  }

  Model<Scalar> averaged_model() const { return with_shadow(model, polyak); }
};

/// Right-pads images to the widest one by repeating each image's last column.
/// Returns the [N, H, Wmax, 1] batch; `widths` receives the original widths.
template <typename Scalar>
Tensor<Scalar> pad_batch(const std::vector<const TensorF*>& images, std::vector<Index>* widths = nullptr) {
  if (images.empty()) throw ContractViolation("pad_batch: empty batch");
  const Index H = images[0]->dim(0);
  Index W = 0;
  for (const auto* img : images) {
    if (img->dim(0) != H) throw DimensionError("pad_batch", "height", static_cast<long>(H), static_cast<long>(img->dim(0)));
    W = std::max(W, img->dim(1));
  }
  const Index N = static_cast<Index>(images.size());
  Tensor<Scalar> out(Shape{N, H, W, 1});
  if (widths) widths->clear();
  for (Index n = 0; n < N; ++n) {
    const TensorF& img = *images[static_cast<std::size_t>(n)];
    const Index w = img.dim(1);
    if (widths) widths->push_back(w);
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) out(n, y, x, 0) = static_cast<Scalar>(img(y, std::min(x, w - 1), 0));
  }
  return out;
}

struct EpochStats {
  double mean_loss = 0;
  Index batches = 0;
  Index samples = 0;
  Index skipped = 0;
  double seconds = 0;
  double samples_per_second = 0;
  std::vector<Index> visited;  // dataset indices in training order
};

/// Splits a permutation into batches of `batch_size`; a trailing single sample joins
/// the previous batch so every batch has at least two samples.
inline std::vector<std::vector<Index>> make_batches(const std::vector<Index>& order, int batch_size) {
  std::vector<std::vector<Index>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + static_cast<std::size_t>(batch_size))));
  }
  if (out.size() >= 2 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

/// One optimization step on the given samples; returns the batch loss.
template <typename Scalar>
double train_batch(TrainSession<Scalar>& session, const std::vector<Sample>& data, const std::vector<Index>& batch) {
  if (batch.size() < 2) throw DegenerateBatchError("train_batch: batch renormalization needs at least 2 samples");
  std::vector<const TensorF*> images;
  std::vector<LabelSeq> targets;
  for (Index i : batch) {
    images.push_back(&data[static_cast<std::size_t>(i)].image);
    targets.push_back(data[static_cast<std::size_t>(i)].labels);
  }
  std::vector<Index> frames;
  Tensor<Scalar> x = pad_batch<Scalar>(images, &frames);
  const auto step = static_cast<std::uint64_t>(session.step);
  if (session.config.augment) {
    auto arng = batch_rng(session.augment.rng_seed ^ (session.config.seed * 0x9E3779B97F4A7C15ull), step);
    x = augment_batch(x, session.augment, arng);
  }
  Rng drop = batch_rng(session.config.seed, step);
  Graph<Scalar> g;
  Var<Scalar> loss = ctc_loss_batch(model_forward(g.constant(x), session.model, true, drop), targets, frames);
  const auto grads = g.backward(loss);
  const auto params = trainable_parameters(session.model);
  adam_step(params, grads, session.adam, lr_at(session.config.lr, static_cast<double>(session.step)));
  polyak_update(session.polyak, params);
  ++session.step;
  return static_cast<double>(loss.value().item());
}

/// Shuffled pass over `data` (sampling without replacement). Samples whose
/// transcript cannot be aligned to their width are skipped and reported via `warn`.
template <typename Scalar>
EpochStats train_epoch(TrainSession<Scalar>& session, const std::vector<Sample>& data,
                       const std::function<void(const std::string&)>& warn = {}) {
  const auto start = std::chrono::steady_clock::now();
  EpochStats stats;
  std::vector<Index> order;
  for (Index i = 0; i < static_cast<Index>(data.size()); ++i) {
    const auto& s = data[static_cast<std::size_t>(i)];
    if (min_frames(s.labels) > s.image.dim(1)) {
      ++stats.skipped;
      if (warn) warn("skipping '" + s.id + "': " + std::to_string(s.image.dim(1)) + " frames cannot emit " + std::to_string(s.labels.size()) + " labels");
      continue;
    }
    order.push_back(i);
  }
  if (order.size() < 2) throw DegenerateBatchError("train_epoch: fewer than 2 usable samples");
  auto shuffle_rng = batch_rng(session.config.seed + 0x5bd1e995ull, static_cast<std::uint64_t>(session.epoch));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  double total = 0;
  for (const auto& batch : make_batches(order, session.config.batch_size)) {
    total += train_batch(session, data, batch) * static_cast<double>(batch.size());
    stats.samples += static_cast<Index>(batch.size());
    ++stats.batches;
  }
  stats.visited = order;
  stats.mean_loss = total / static_cast<double>(stats.samples);
  ++session.epoch;
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  stats.samples_per_second = static_cast<double>(stats.samples) / std::max(stats.seconds, 1e-9);
  return stats;
}

struct ValidationEvent {
  std::int64_t epoch = 0;  // epochs completed
  std::int64_t step = 0;
  double lr = 0;
  EpochStats stats;
  double val_cer = 0;  // greedy CER of the averaged model
};

struct FitResult {
  std::vector<ValidationEvent> history;
  bool reached_target = false;
  double seconds = 0;
  double best_cer() const {
    double b = 1e300;
    for (const auto& e : history) b = std::min(b, e.val_cer);
    return b;
  }
};

/// Trains until config.epochs are done or validation CER reaches config.target_cer.
/// `on_event` runs after each validation (logging, checkpoints).
template <typename Scalar>
FitResult fit(TrainSession<Scalar>& session, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const std::function<void(const ValidationEvent&)>& on_event = {},
              const std::function<void(const std::string&)>& warn = {}) {
  const auto start = std::chrono::steady_clock::now();
  FitResult result;
  while (session.epoch < session.config.epochs) {
    ValidationEvent ev;
    ev.stats = train_epoch(session, train, session.epoch == 0 ? warn : std::function<void(const std::string&)>{});
    ev.epoch = session.epoch;
    ev.step = session.step;
    ev.lr = lr_at(session.config.lr, static_cast<double>(session.step));
    if (!val.empty()) {
      auto avg = session.averaged_model();
      ev.val_cer = greedy_cer(avg, val, session.codec);
    }
    result.history.push_back(ev);
    if (on_event) on_event(ev);
    if (!val.empty() && ev.val_cer <= session.config.target_cer) {
      result.reached_target = true;
      break;
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

/// One metrics-log record: key=value pairs on a single line.
inline std::string metrics_record(const ValidationEvent& e) {
  std::ostringstream out;
  out << "epoch=" << e.epoch << " step=" << e.step << " lr=" << e.lr << " loss=" << e.stats.mean_loss
      << " val_cer=" << e.val_cer << " samples=" << e.stats.samples << " skipped=" << e.stats.skipped
      << " seconds=" << e.stats.seconds << " samples_per_second=" << e.stats.samples_per_second;
  return out.str();
}

// --- checkpoint mapping ----------------------------------------------------

/// Stores the model (parameters and buffers), batch-norm steps, Adam and Polyak
/// state, counters, alphabet and the caller's config text.
template <typename Scalar>
Checkpoint to_checkpoint(TrainSession<Scalar>& s, const std::string& config_text) {
  Checkpoint c;
  c.put_text("config", config_text);
  c.put_text("alphabet", s.codec.symbols());
  s.model.visit([&](const std::string& name, Tensor<Scalar>& t, TensorRole) { c.put_tensor("model." + name, t); });
  s.model.visit_batch_norms([&](const std::string& name, BatchNormState<Scalar>& bn) { c.put_i64("bn_step." + name, bn.step); });
  const auto names = trainable_names(s.model);
  for (std::size_t i = 0; i < names.size(); ++i) {
    c.put_tensor("adam.m." + names[i], s.adam.m[i]);
    c.put_tensor("adam.v." + names[i], s.adam.v[i]);
    c.put_tensor("polyak." + names[i], s.polyak.shadow[i]);
  }
  c.put_i64("adam.step", s.adam.step);
  c.put_i64("polyak.updates", s.polyak.updates);
  c.put_i64("train.step", s.step);
  c.put_i64("train.epoch", s.epoch);
  c.put_i64("rng.seed", static_cast<std::int64_t>(s.config.seed));
  c.put_i64("rng.augment_seed", static_cast<std::int64_t>(s.augment.rng_seed));
  return c;
}

/// Restores state saved by to_checkpoint into a session built from the same config.
template <typename Scalar>
void restore_session(const Checkpoint& c, TrainSession<Scalar>& s) {
  if (c.text("alphabet") != s.codec.symbols()) throw CorruptionError("alphabet", "does not match the session alphabet");
  s.model.visit([&](const std::string& name, Tensor<Scalar>& t, TensorRole) {
    Tensor<Scalar> loaded = c.tensor<Scalar>("model." + name);
    if (loaded.shape() != t.shape()) throw CorruptionError("model." + name, "shape " + loaded.shape().str() + " does not match " + t.shape().str());
    t = std::move(loaded);
  });
  s.model.visit_batch_norms([&](const std::string& name, BatchNormState<Scalar>& bn) { bn.step = c.i64("bn_step." + name); });
  const auto names = trainable_names(s.model);
  for (std::size_t i = 0; i < names.size(); ++i) {
    s.adam.m[i] = c.tensor<Scalar>("adam.m." + names[i]);
    s.adam.v[i] = c.tensor<Scalar>("adam.v." + names[i]);
    s.polyak.shadow[i] = c.tensor<Scalar>("polyak." + names[i]);
  }
  s.adam.step = c.i64("adam.step");
  s.polyak.updates = c.i64("polyak.updates");
  s.step = c.i64("train.step");
  s.epoch = c.i64("train.epoch");
  s.config.seed = static_cast<std::uint64_t>(c.i64("rng.seed"));
  s.augment.rng_seed = static_cast<std::uint64_t>(c.i64("rng.augment_seed"));
}

}  // namespace gfcn
