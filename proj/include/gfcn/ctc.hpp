#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gfcn/graph.hpp"

namespace gfcn {

/// Encoded transcript: symbols in [0, A). The blank (index A) never appears.
using LabelSeq = std::vector<int>;

/// Per-frame class log-probabilities: T rows, A+1 columns, blank in the last column.
template <typename Scalar>
using FrameLogProbs = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
Scalar log_sum_exp(Scalar a, Scalar b) {
  constexpr Scalar ninf = -std::numeric_limits<Scalar>::infinity();
  if (a == ninf) return b;
  if (b == ninf) return a;
  const Scalar m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// Merges adjacent duplicates, then deletes blanks.
inline LabelSeq collapse(std::span<const int> path, int blank) {
  LabelSeq out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

/// Fewest frames that can emit `target`: one per symbol plus a blank between repeats.
inline Index min_frames(const LabelSeq& target) {
  Index n = static_cast<Index>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1];
  return n;
}

namespace detail {
inline void check_target(const std::string& op, const LabelSeq& target, Index classes) {
  for (int s : target) {
    if (s < 0 || s >= classes - 1) {
      throw ContractViolation(op + ": label " + std::to_string(s) + " outside [0, " + std::to_string(classes - 1) + ")");
    }
  }
}
}  // namespace detail

template <typename Scalar>
struct CtcResult {
  Scalar loss;               // -log P(target | frames)
  FrameLogProbs<Scalar> grad;  // d loss / d log_probs
};

/// CTC negative log-likelihood with its gradient with respect to the log-probability
/// inputs, via the forward-backward recursions over the blank-augmented target.
template <typename Scalar>
CtcResult<Scalar> ctc_loss(const FrameLogProbs<Scalar>& log_probs, const LabelSeq& target) {
  constexpr Scalar ninf = -std::numeric_limits<Scalar>::infinity();
  const Index T = log_probs.rows(), classes = log_probs.cols();
  const int blank = static_cast<int>(classes - 1);
  detail::check_target("ctc_loss", target, classes);
  if (T < min_frames(target)) {
    throw InfeasibleAlignmentError("ctc_loss: " + std::to_string(T) + " frames cannot emit a target needing " +
                                   std::to_string(min_frames(target)));
  }
  const Index S = 2 * static_cast<Index>(target.size()) + 1;
  auto label = [&](Index s) { return s % 2 == 0 ? blank : target[static_cast<std::size_t>(s / 2)]; };
  auto can_skip = [&](Index s) { return s >= 2 && label(s) != blank && label(s) != label(s - 2); };

  FrameLogProbs<Scalar> alpha = FrameLogProbs<Scalar>::Constant(T, S, ninf);
  FrameLogProbs<Scalar> beta = FrameLogProbs<Scalar>::Constant(T, S, ninf);
  alpha(0, 0) = log_probs(0, blank);
  if (S > 1) alpha(0, 1) = log_probs(0, label(1));
  for (Index t = 1; t < T; ++t) {
    for (Index s = 0; s < S; ++s) {
      Scalar a = alpha(t - 1, s);
      if (s >= 1) a = log_sum_exp(a, alpha(t - 1, s - 1));
      if (can_skip(s)) a = log_sum_exp(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == ninf ? ninf : a + log_probs(t, label(s));
    }
  }
  beta(T - 1, S - 1) = log_probs(T - 1, blank);
  if (S > 1) beta(T - 1, S - 2) = log_probs(T - 1, label(S - 2));
  for (Index t = T - 1; t-- > 0;) {
    for (Index s = 0; s < S; ++s) {
      Scalar b = beta(t + 1, s);
      if (s + 1 < S) b = log_sum_exp(b, beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) b = log_sum_exp(b, beta(t + 1, s + 2));
      beta(t, s) = b == ninf ? ninf : b + log_probs(t, label(s));
    }
  }

  Scalar log_p = alpha(T - 1, S - 1);
  if (S > 1) log_p = log_sum_exp(log_p, alpha(T - 1, S - 2));

  CtcResult<Scalar> result{-log_p, FrameLogProbs<Scalar>::Zero(T, classes)};
  if (log_p == ninf) {
    result.loss = std::numeric_limits<Scalar>::infinity();
    return result;
  }
  // Occupancy of class k at frame t: sum over states labelled k of alpha*beta / y.
  FrameLogProbs<Scalar> occupancy = FrameLogProbs<Scalar>::Constant(T, classes, ninf);
  for (Index t = 0; t < T; ++t)
    for (Index s = 0; s < S; ++s) {
      const Scalar ab = alpha(t, s) + beta(t, s);
      if (ab == ninf) continue;
      const int k = label(s);
      occupancy(t, k) = log_sum_exp(occupancy(t, k), ab - log_probs(t, k));
    }
  for (Index t = 0; t < T; ++t)
    for (Index k = 0; k < classes; ++k)
      if (occupancy(t, k) != ninf) result.grad(t, k) = -std::exp(occupancy(t, k) - log_p);
  return result;
}

/// Reference CTC loss by enumerating all (A+1)^T frame paths. Returns +inf when
/// no path collapses to the target.
template <typename Scalar>
Scalar brute_force_ctc(const FrameLogProbs<Scalar>& log_probs, const LabelSeq& target) {
  const Index T = log_probs.rows(), classes = log_probs.cols();
  detail::check_target("brute_force_ctc", target, classes);
  double total_paths = std::pow(static_cast<double>(classes), static_cast<double>(T));
  if (total_paths > 1e7) throw ContractViolation("brute_force_ctc: (A+1)^T exceeds 1e7");
  std::vector<int> path(static_cast<std::size_t>(T), 0);
  double prob = 0.0;
  for (;;) {
    if (collapse(path, static_cast<int>(classes - 1)) == target) {
      double lp = 0.0;
      for (Index t = 0; t < T; ++t) lp += static_cast<double>(log_probs(t, path[static_cast<std::size_t>(t)]));
      prob += std::exp(lp);
    }
    Index t = 0;
    while (t < T && ++path[static_cast<std::size_t>(t)] == classes) path[static_cast<std::size_t>(t++)] = 0;
    if (t == T) break;
  }
  return prob > 0.0 ? static_cast<Scalar>(-std::log(prob)) : std::numeric_limits<Scalar>::infinity();
}

/// Per-frame argmax (lowest index wins ties), then collapse.
template <typename Scalar>
LabelSeq greedy_decode(const FrameLogProbs<Scalar>& log_probs) {
  std::vector<int> path(static_cast<std::size_t>(log_probs.rows()));
  for (Index t = 0; t < log_probs.rows(); ++t) {
    Index best = 0;
    log_probs.row(t).maxCoeff(&best);
    path[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return collapse(path, static_cast<int>(log_probs.cols() - 1));
}

template <typename Scalar>
struct BeamState {
  LabelSeq prefix;
  Scalar log_p_blank = -std::numeric_limits<Scalar>::infinity();
  Scalar log_p_nonblank = -std::numeric_limits<Scalar>::infinity();

  Scalar score() const { return log_sum_exp(log_p_blank, log_p_nonblank); }
};

template <typename Scalar>
struct Hypothesis {
  LabelSeq labels;
  Scalar score;  // log probability of the collapsed sequence under the retained paths
};

/// Prefix beam search. Returns up to `top_n` distinct sequences ordered by
/// descending score, ties broken by ascending lexicographic order.
template <typename Scalar>
std::vector<Hypothesis<Scalar>> beam_search(const FrameLogProbs<Scalar>& log_probs, Index width, Index top_n) {
  if (width < 1 || top_n < 1) throw ContractViolation("beam_search: width and top_n must be positive");
  if (top_n > width) throw ContractViolation("beam_search: top_n must not exceed the beam width");
  const Index T = log_probs.rows(), classes = log_probs.cols();
  const int blank = static_cast<int>(classes - 1);

  auto ranked = [](std::map<LabelSeq, BeamState<Scalar>>& pool, Index keep) {
    std::vector<BeamState<Scalar>> v;
    v.reserve(pool.size());
    for (auto& [k, s] : pool)
      if (s.score() != -std::numeric_limits<Scalar>::infinity()) v.push_back(std::move(s));
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      const Scalar sa = a.score(), sb = b.score();
      if (sa != sb) return sa > sb;
      return a.prefix < b.prefix;
    });
    if (static_cast<Index>(v.size()) > keep) v.resize(static_cast<std::size_t>(keep));
    return v;
  };

  std::vector<BeamState<Scalar>> beams(1);
  beams[0].log_p_blank = 0;
  for (Index t = 0; t < T; ++t) {
    std::map<LabelSeq, BeamState<Scalar>> next;
    auto entry = [&](const LabelSeq& prefix) -> BeamState<Scalar>& {
      auto [it, inserted] = next.try_emplace(prefix);
      if (inserted) it->second.prefix = prefix;
      return it->second;
    };
    for (const auto& beam : beams) {
      const Scalar total = beam.score();
      auto& same = entry(beam.prefix);
      same.log_p_blank = log_sum_exp(same.log_p_blank, total + log_probs(t, blank));
      const int last = beam.prefix.empty() ? -1 : beam.prefix.back();
      for (int c = 0; c < blank; ++c) {
        const Scalar y = log_probs(t, c);
        LabelSeq extended = beam.prefix;
        extended.push_back(c);
        auto& ext = entry(extended);
        if (c == last) {
          // Repeat without an intervening blank stays on the same prefix.
          auto& stay = entry(beam.prefix);
          stay.log_p_nonblank = log_sum_exp(stay.log_p_nonblank, beam.log_p_nonblank + y);
          ext.log_p_nonblank = log_sum_exp(ext.log_p_nonblank, beam.log_p_blank + y);
        } else {
          ext.log_p_nonblank = log_sum_exp(ext.log_p_nonblank, total + y);
        }
      }
    }
    beams = ranked(next, width);
  }

  std::map<LabelSeq, BeamState<Scalar>> final_pool;
  for (auto& b : beams) final_pool.emplace(b.prefix, b);
  std::vector<Hypothesis<Scalar>> out;
  for (auto& b : ranked(final_pool, top_n)) out.push_back({b.prefix, b.score()});
  return out;
}

/// Mean CTC loss over a batch of [N, T, A+1] log-probabilities. Sequence n uses
/// its first frames[n] frames; later frames receive zero gradient.
template <typename Scalar>
Var<Scalar> ctc_loss_batch(Var<Scalar> log_probs, const std::vector<LabelSeq>& targets, const std::vector<Index>& frames) {
  const Shape s = log_probs.shape();
  require_rank("ctc_loss_batch", s, 3);
  const Index N = s[0], T = s[1], C = s[2];
  if (static_cast<Index>(targets.size()) != N) throw DimensionError("ctc_loss_batch", "batch", static_cast<long>(N), static_cast<long>(targets.size()));
  if (static_cast<Index>(frames.size()) != N) throw DimensionError("ctc_loss_batch", "batch", static_cast<long>(N), static_cast<long>(frames.size()));

  Tensor<Scalar> grad(s);
  Scalar total = 0;
  for (Index n = 0; n < N; ++n) {
    const Index valid = frames[static_cast<std::size_t>(n)];
    if (valid < 1 || valid > T) throw DimensionError("ctc_loss_batch", "time", "valid frame count " + std::to_string(valid) + " outside [1, " + std::to_string(T) + "]");
    Eigen::Map<const FrameLogProbs<Scalar>> lp(log_probs.value().data() + n * T * C, valid, C);
    CtcResult<Scalar> r = ctc_loss<Scalar>(lp, targets[static_cast<std::size_t>(n)]);
    total += r.loss;
    Eigen::Map<FrameLogProbs<Scalar>>(grad.data() + n * T * C, valid, C) = r.grad / static_cast<Scalar>(N);
  }
  const std::size_t li = log_probs.id;
  return log_probs.graph->record(Tensor<Scalar>::scalar(total / static_cast<Scalar>(N)), {li},
                                 [li, grad = std::move(grad)](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    gr.grad_of(li).array() += grad.array() * dy[0];
  });
}

}  // namespace gfcn
