// Joint network, alignment lattice, and the transducer loss.
//
// The log-probability grid holds, for every frame t and label position u, the
// distribution over the vocabulary (blank included) given the audio encoding
// at t and the label history y[0..u). log P(y|x) sums over every alignment
// through the grid; the forward recursion computes it in O(T*U).

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tt/ops.hpp"
#include "tt/rng.hpp"
#include "tt/tensor.hpp"

namespace tt {

inline constexpr std::size_t kBlank = 0;

// Output symbols; id 0 is the blank.
struct Vocab {
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }

  // "<b>", "a", "b", ... for `symbols` non-blank entries.
  static Vocab synthetic(std::size_t symbols) {
    if (symbols < 1) throw std::invalid_argument("vocabulary needs at least one non-blank symbol");
    Vocab v;
    v.names.push_back("<b>");
    for (std::size_t i = 0; i < symbols; ++i) {
      std::string name;
      std::size_t k = i;
      do {
        name.insert(name.begin(), static_cast<char>('a' + k % 26));
        k /= 26;
      } while (k-- > 0);
      v.names.push_back(name);
    }
    return v;
  }
};

// Checks that `labels` is blank-free and within a vocabulary of `vocab_size`.
inline void validate_labels(std::span<const std::size_t> labels, std::size_t vocab_size) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kBlank) {
      throw std::invalid_argument("label sequence contains blank at index " + std::to_string(i));
    }
    if (labels[i] >= vocab_size) {
      throw std::out_of_range("label " + std::to_string(labels[i]) + " at index " +
                              std::to_string(i) + " is outside a vocabulary of " +
                              std::to_string(vocab_size));
    }
  }
}

// [T x (U+1) x V] log-probabilities, stored as a [T*(U+1) x V] tensor whose
// row t*(U+1)+u is the distribution at frame t (0-based) and label position u.
struct LogProbGrid {
  std::size_t frames = 0;
  std::size_t label_len = 0;
  std::size_t vocab = 0;
  Tensor values;

  std::size_t row(std::size_t t, std::size_t u) const { return t * (label_len + 1) + u; }
  double at(std::size_t t, std::size_t u, std::size_t k) const {
    return values[row(t, u) * vocab + k];
  }

  static LogProbGrid from_tensor(std::size_t frames, std::size_t label_len, Tensor values) {
    LogProbGrid g;
    g.frames = frames;
    g.label_len = label_len;
    g.vocab = values.cols();
    if (values.rank() != 2 || values.rows() != frames * (label_len + 1)) {
      throw DimensionError("grid tensor " + to_string(values.shape()) + " does not match T=" +
                           std::to_string(frames) + ", U=" + std::to_string(label_len));
    }
    g.values = std::move(values);
    return g;
  }
};

struct JointConfig {
  std::size_t audio_dim = 32;
  std::size_t label_dim = 32;
  std::size_t joint_dim = 32;
  std::size_t vocab_size = 7;
};

struct JointParams {
  Tensor audio, audio_bias;  // [audio_dim x joint_dim]
  Tensor label;              // [label_dim x joint_dim]
  Tensor out, out_bias;      // [joint_dim x vocab]

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "audio", audio);
    f(prefix + "audio_bias", audio_bias);
    f(prefix + "label", label);
    f(prefix + "out", out);
    f(prefix + "out_bias", out_bias);
  }

  static JointParams init(const JointConfig& cfg, Rng rng) {
    auto dense = [&rng](std::size_t in, std::size_t out) {
      std::vector<double> v(in * out);
      const double sd = 1.0 / std::sqrt(static_cast<double>(in));
      for (double& x : v) x = rng.normal(0.0, sd);
      return Tensor::parameter({in, out}, std::move(v));
    };
    auto zeros = [](std::size_t n) { return Tensor::parameter({n}, std::vector<double>(n, 0.0)); };
    JointParams p;
    p.audio = dense(cfg.audio_dim, cfg.joint_dim);
    p.audio_bias = zeros(cfg.joint_dim);
    p.label = dense(cfg.label_dim, cfg.joint_dim);
    p.out = dense(cfg.joint_dim, cfg.vocab_size);
    p.out_bias = zeros(cfg.vocab_size);
    return p;
  }
};

// Linear(audio) + Linear(label) -> tanh -> Linear: unnormalized scores over
// the vocabulary for one (frame, label history) pair.
inline Tensor joint_logits(const Tensor& audio_t, const Tensor& label_u, const JointParams& p) {
  const Tensor a = audio_t.rank() == 2 ? audio_t : Tensor(Shape{1, audio_t.numel()}, std::vector<double>(audio_t.values().begin(), audio_t.values().end()));
  const Tensor l = label_u.rank() == 2 ? label_u : Tensor(Shape{1, label_u.numel()}, std::vector<double>(label_u.values().begin(), label_u.values().end()));
  if (a.rows() != 1 || l.rows() != 1) throw DimensionError("joint_logits expects single rows");
  const Tensor hidden = tanh(add(add_row(matmul(a, p.audio), p.audio_bias), matmul(l, p.label)));
  return add_row(matmul(hidden, p.out), p.out_bias);
}

// Joint distribution at every (t, u) pair, batched.
inline LogProbGrid log_prob_grid(const Tensor& audio_acts, const Tensor& label_acts,
                                 const JointParams& p) {
  if (audio_acts.rank() != 2 || label_acts.rank() != 2 || audio_acts.rows() == 0 ||
      label_acts.rows() == 0) {
    throw DimensionError("log_prob_grid: expected non-empty [T x d] and [(U+1) x d] inputs, got " +
                         to_string(audio_acts.shape()) + " and " + to_string(label_acts.shape()));
  }
  const Tensor a = add_row(matmul(audio_acts, p.audio), p.audio_bias);
  const Tensor l = matmul(label_acts, p.label);
  const Tensor hidden = tanh(outer_add(a, l));
  const Tensor logits = add_row(matmul(hidden, p.out), p.out_bias);
  return LogProbGrid::from_tensor(audio_acts.rows(), label_acts.rows() - 1, log_softmax(logits));
}

namespace testing {

// Offset added to every interior forward-variable update; nonzero values
// corrupt the recursion so self-tests can prove they detect it.
inline double& dp_fault_injection() {
  static double offset = 0.0;
  return offset;
}

}  // namespace testing

namespace detail {

inline void check_grid_and_labels(const LogProbGrid& grid, std::span<const std::size_t> y) {
  if (grid.frames == 0) {
    throw std::invalid_argument("transducer lattice needs at least one frame (U=" +
                                std::to_string(y.size()) + ", T=0)");
  }
  if (y.size() != grid.label_len) {
    throw DimensionError("label sequence length " + std::to_string(y.size()) +
                         " does not match grid U=" + std::to_string(grid.label_len));
  }
  validate_labels(y, grid.vocab);
}

}  // namespace detail

// log P(y|x) by the forward recursion, as a differentiable scalar. The
// gradient with respect to the grid comes from the matching backward
// recursion: d logP / d grid(t,u,k) is the posterior occupancy of that arc.
inline Tensor rnnt_log_prob(const LogProbGrid& grid, std::span<const std::size_t> y) {
  detail::check_grid_and_labels(grid, y);
  const std::size_t T = grid.frames, U = grid.label_len, V = grid.vocab;
  const std::size_t W = U + 1;
  const double fault = testing::dp_fault_injection();
  const auto lp = grid.values.values();
  auto blank = [&](std::size_t t, std::size_t u) { return lp[(t * W + u) * V + kBlank]; };
  auto emit = [&](std::size_t t, std::size_t u) { return lp[(t * W + u) * V + y[u]]; };
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  auto alpha = std::make_shared<std::vector<double>>(T * W, kNegInf);
  auto& a = *alpha;
  a[0] = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      double v = kNegInf;
      if (t > 0) v = a[(t - 1) * W + u] + blank(t - 1, u);
      if (u > 0) v = log_add_exp(v, a[t * W + u - 1] + emit(t, u - 1));
      a[t * W + u] = v + fault;
    }
  }
  const double log_p = a[(T - 1) * W + U] + blank(T - 1, U);

  std::vector<std::size_t> labels(y.begin(), y.end());
  return make_result(
      "rnnt_log_prob", {}, {log_p}, {grid.values},
      [alpha, labels, T, U, V, W, log_p](detail::Node& self) {
        auto* gg = detail::parent_grad(self, 0);
        if (!gg) return;
        const auto& lp = detail::parent_value(self, 0);
        const auto& a = *alpha;
        auto blank = [&](std::size_t t, std::size_t u) { return lp[(t * W + u) * V + kBlank]; };
        auto emit = [&](std::size_t t, std::size_t u) { return lp[(t * W + u) * V + labels[u]]; };
        std::vector<double> beta(T * W, -std::numeric_limits<double>::infinity());
        beta[(T - 1) * W + U] = blank(T - 1, U);
        for (std::size_t t = T; t-- > 0;) {
          for (std::size_t u = W; u-- > 0;) {
            if (t == T - 1 && u == U) continue;
            double v = -std::numeric_limits<double>::infinity();
            if (t + 1 < T) v = beta[(t + 1) * W + u] + blank(t, u);
            if (u < U) v = log_add_exp(v, beta[t * W + u + 1] + emit(t, u));
            beta[t * W + u] = v;
          }
        }
        const double g = self.grad[0];
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t u = 0; u <= U; ++u) {
            const double at = a[t * W + u];
            if (t + 1 < T) {
              (*gg)[(t * W + u) * V + kBlank] +=
                  g * std::exp(at + blank(t, u) + beta[(t + 1) * W + u] - log_p);
            } else if (u == U) {
              (*gg)[(t * W + u) * V + kBlank] += g * std::exp(at + blank(t, u) - log_p);
            }
            if (u < U) {
              (*gg)[(t * W + u) * V + labels[u]] +=
                  g * std::exp(at + emit(t, u) + beta[t * W + u + 1] - log_p);
            }
          }
        }
      });
}

// One step of an alignment: `label` is kBlank or a symbol, emitted while
// reading frame `frame` (0-based).
struct AlignmentStep {
  std::size_t label;
  std::size_t frame;
  bool operator==(const AlignmentStep&) const = default;
};
using Alignment = std::vector<AlignmentStep>;

inline constexpr std::size_t kMaxEnumeratedSteps = 16;

// Every alignment of `y` against `frames` frames: T blanks interleaved with
// the U labels, ending with the blank that consumes the final frame.
inline std::vector<Alignment> enumerate_alignments(std::size_t frames,
                                                   std::span<const std::size_t> y) {
  if (frames == 0) throw std::invalid_argument("enumerate_alignments: no frames");
  if (frames + y.size() > kMaxEnumeratedSteps) {
    throw std::invalid_argument("enumerate_alignments: T+U=" + std::to_string(frames + y.size()) +
                                " exceeds the enumeration bound of " +
                                std::to_string(kMaxEnumeratedSteps));
  }
  std::vector<Alignment> out;
  Alignment path;
  // Depth-first over (t, u); labels before blanks keeps the order stable.
  auto rec = [&](auto&& self, std::size_t t, std::size_t u) -> void {
    if (u < y.size()) {
      path.push_back({y[u], t});
      self(self, t, u + 1);
      path.pop_back();
    }
    if (t + 1 < frames || u == y.size()) {
      path.push_back({kBlank, t});
      if (t + 1 == frames) {
        if (u == y.size()) out.push_back(path);
      } else {
        self(self, t + 1, u);
      }
      path.pop_back();
    }
  };
  rec(rec, 0, 0);
  return out;
}

// Labels(z): the alignment with blanks removed.
inline std::vector<std::size_t> alignment_labels(const Alignment& z) {
  std::vector<std::size_t> out;
  for (const auto& s : z)
    if (s.label != kBlank) out.push_back(s.label);
  return out;
}

// Sum of the local log-probabilities along one alignment.
inline double alignment_log_prob(const LogProbGrid& grid, const Alignment& z) {
  double s = 0.0;
  std::size_t u = 0;
  for (const auto& step : z) {
    s += grid.at(step.frame, u, step.label);
    if (step.label != kBlank) ++u;
  }
  return s;
}

struct EnumeratedLogProb {
  double log_prob;
  std::size_t paths;
};

// log P(y|x) by explicit summation over every alignment. Exponential; kept as
// the small-instance reference for the forward recursion.
inline EnumeratedLogProb brute_force_log_prob(const LogProbGrid& grid,
                                              std::span<const std::size_t> y) {
  detail::check_grid_and_labels(grid, y);
  const auto paths = enumerate_alignments(grid.frames, y);
  double total = -std::numeric_limits<double>::infinity();
  for (const auto& z : paths) total = log_add_exp(total, alignment_log_prob(grid, z));
  return {total, paths.size()};
}

struct LossTerm {
  LogProbGrid grid;
  std::vector<std::size_t> labels;
};

// -sum_i log P(y_i|x_i), reduced in index order.
inline Tensor batch_loss(std::span<const LossTerm> terms) {
  if (terms.empty()) throw std::invalid_argument("batch_loss of an empty batch");
  std::vector<Tensor> parts;
  parts.reserve(terms.size());
  for (const auto& term : terms) parts.push_back(rnnt_log_prob(term.grid, term.labels));
  return scale(sum_scalars(parts), -1.0);
}

}  // namespace tt
