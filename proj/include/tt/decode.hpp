// Frame-synchronous decoding: greedy, beam search with optional shallow
// fusion, and streaming inference over cached encoder state.
//
// The searches are templates over a Scorer, which supplies the joint
// distribution for a (frame, label state) pair:
//
//   typename Scorer::State;
//   State start();
//   void extend(State&, std::size_t label);
//   std::vector<double> log_probs(std::size_t t, const State&);
//   std::size_t frames() const;
//   const std::vector<std::size_t>& labels(const State&) const;

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tt/attention.hpp"
#include "tt/model.hpp"
#include "tt/ops.hpp"
#include "tt/transducer.hpp"

namespace tt {

struct DecodeOptions {
  std::size_t max_symbols_per_frame = 10;
  // Beam search only: combine closed hypotheses with equal labels. When
  // false every alignment competes on its own (best-path search).
  bool merge_hypotheses = true;
};

// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Language models for shallow fusion.

// Next-symbol scorer over non-blank labels. Implementations must be pure and
// return finite values.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual double log_prob(std::span<const std::size_t> history, std::size_t next) const = 0;
};

// Add-k smoothed bigram model; the empty history conditions on a start
// context stored in row 0.
class BigramLM final : public LanguageModel {
 public:
  BigramLM(std::size_t vocab_size, std::vector<double> log_probs)
      : vocab_(vocab_size), table_(std::move(log_probs)) {
    if (table_.size() != vocab_ * vocab_) throw DimensionError("BigramLM: table size mismatch");
  }

  static BigramLM train(std::span<const std::vector<std::size_t>> sequences,
                        std::size_t vocab_size, double add_k = 1.0) {
    std::vector<double> counts(vocab_size * vocab_size, 0.0);
    for (const auto& seq : sequences) {
      validate_labels(seq, vocab_size);
      std::size_t prev = kBlank;
      for (std::size_t s : seq) {
        counts[prev * vocab_size + s] += 1.0;
        prev = s;
      }
    }
    std::vector<double> table(vocab_size * vocab_size, 0.0);
    for (std::size_t prev = 0; prev < vocab_size; ++prev) {
      double total = 0.0;
      for (std::size_t s = 1; s < vocab_size; ++s) total += counts[prev * vocab_size + s] + add_k;
      for (std::size_t s = 1; s < vocab_size; ++s)
        table[prev * vocab_size + s] = std::log((counts[prev * vocab_size + s] + add_k) / total);
      table[prev * vocab_size + kBlank] = -std::numeric_limits<double>::infinity();
    }
    return BigramLM(vocab_size, std::move(table));
  }

  double log_prob(std::span<const std::size_t> history, std::size_t next) const override {
    const std::size_t prev = history.empty() ? kBlank : history.back();
    if (next == kBlank || next >= vocab_ || prev >= vocab_) {
      throw std::out_of_range("BigramLM: symbol outside vocabulary");
    }
    return table_[prev * vocab_ + next];
  }

  std::size_t vocab_size() const { return vocab_; }

 private:
  std::size_t vocab_;
  std::vector<double> table_;
};

// score = log P_transducer + lm_weight * log P_LM + length_bonus * |labels|,
// with both LM and bonus terms added per emitted non-blank symbol.
struct FusionConfig {
  double lm_weight = 0.0;
  double length_bonus = 0.0;
  const LanguageModel* lm = nullptr;

  bool enabled() const { return lm_weight != 0.0 || length_bonus != 0.0; }
  double emission_bonus(std::span<const std::size_t> history, std::size_t next) const {
    double b = length_bonus;
    if (lm_weight != 0.0) {
      if (!lm) throw std::invalid_argument("fusion: lm_weight set without a language model");
      b += lm_weight * lm->log_prob(history, next);
    }
    return b;
  }
};

// ---------------------------------------------------------------------------
// Model-backed scoring.

// Label-encoder state for one label history.
struct LabelState {
  std::vector<std::size_t> labels;
  IncrementalEncoder encoder;
  Tensor projection;  // [1 x joint_dim], Linear(label encoding) of the newest position
};

// Joint-network evaluation from cached projections. Shared by batch and
// streaming decoders so both compute identical distributions.
class JointEvaluator {
 public:
  explicit JointEvaluator(const Model& model) : model_(&model) {}

  LabelState start() const {
    LabelState s{{}, IncrementalEncoder(model_->config.label, model_->label), Tensor()};
    push(s, kBlank);
    return s;
  }

  void extend(LabelState& s, std::size_t label) const {
    s.labels.push_back(label);
    push(s, label);
  }

  // Linear(audio encoding) for a batch of frames, [T x joint_dim].
  Tensor audio_projection(const Tensor& audio_acts) const {
    return add_row(matmul(audio_acts, model_->joint.audio), model_->joint.audio_bias);
  }

  std::vector<double> log_probs(const Tensor& audio_proj_row, const LabelState& s) {
    ++evaluations_;
    const Tensor hidden = tanh(outer_add(audio_proj_row, s.projection));
    const Tensor lp = log_softmax(add_row(matmul(hidden, model_->joint.out), model_->joint.out_bias));
    return {lp.values().begin(), lp.values().end()};
  }

  std::uint64_t evaluations() const { return evaluations_; }
  const Model& model() const { return *model_; }

 private:
  void push(LabelState& s, std::size_t label) const {
    s.encoder.push(one_hot(label, model_->config.vocab_size));
    auto rows = s.encoder.take_outputs();
    if (rows.size() != 1) throw std::logic_error("label encoder must emit one row per label");
    const std::size_t width = rows[0].size();
    const Tensor act(Shape{1, width}, std::move(rows[0]));
    s.projection = matmul(act, model_->joint.label);
  }

  const Model* model_;
  std::uint64_t evaluations_ = 0;
};

// Whole-utterance audio encoding without dropout or graph recording.
inline Tensor encode_audio(const Model& model, const Tensor& features,
                           AttentionStats* stats = nullptr) {
  NoGradGuard no_grad;
  return encode(features, model.config.audio, model.audio, nullptr, false, stats);
}

// Scorer over a model and one utterance, with the audio encoder run in batch.
class ModelScorer {
 public:
  using State = LabelState;

  ModelScorer(const Model& model, const Tensor& features) : joint_(model) {
    NoGradGuard no_grad;
    audio_ = encode_audio(model, features);
    audio_proj_ = joint_.audio_projection(audio_);
  }

  State start() const {
    NoGradGuard no_grad;
    return joint_.start();
  }
  void extend(State& s, std::size_t label) const {
    NoGradGuard no_grad;
    joint_.extend(s, label);
  }
  std::vector<double> log_probs(std::size_t t, const State& s) {
    NoGradGuard no_grad;
    return joint_.log_probs(slice_rows(audio_proj_, t, t + 1), s);
  }
  std::size_t frames() const { return audio_.rows(); }
  const std::vector<std::size_t>& labels(const State& s) const { return s.labels; }

  const Tensor& audio_activations() const { return audio_; }
  std::uint64_t joint_evaluations() const { return joint_.evaluations(); }

 private:
  JointEvaluator joint_;
  Tensor audio_;
  Tensor audio_proj_;
};

// ---------------------------------------------------------------------------
// Greedy search.

struct DecodeResult {
  std::vector<std::size_t> labels;
  double score = 0.0;  // sum of on-path log-probabilities (plus fusion terms)
};

// At each frame, emit the argmax symbol until blank wins or the per-frame
// cap is hit; a capped frame is closed with its blank probability.
template <class Scorer>
DecodeResult greedy_search(Scorer& scorer, const DecodeOptions& opts = {}) {
  DecodeResult r;
  auto state = scorer.start();
  for (std::size_t t = 0; t < scorer.frames(); ++t) {
    std::size_t emitted = 0;
    while (true) {
      const auto lp = scorer.log_probs(t, state);
      const std::size_t k = emitted < opts.max_symbols_per_frame ? argmax(lp) : kBlank;
      r.score += lp[k];
      if (k == kBlank) break;
      scorer.extend(state, k);
      ++emitted;
    }
  }
  r.labels = scorer.labels(state);
  return r;
}

inline DecodeResult greedy_decode(const Model& model, const Tensor& features,
                                  const DecodeOptions& opts = {}) {
  ModelScorer scorer(model, features);
  return greedy_search(scorer, opts);
}

// ---------------------------------------------------------------------------
// Beam search.

template <class State>
struct Hypothesis {
  std::vector<std::size_t> labels;
  double score = 0.0;
  State state;
  std::size_t non_blank_count = 0;
};

namespace detail {

// Best first; equal scores fall back to the lexicographically smaller labels.
template <class H>
bool better(const H& a, const H& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.labels < b.labels;
}

}  // namespace detail

// Frame-synchronous beam search. Within a frame, hypotheses are expanded in
// rounds: every live hypothesis proposes its blank extension (which closes
// the frame for it) and each non-blank extension; closed hypotheses with the
// same labels merge by log-add; the best beam_width of closed and open
// candidates survive into the next round. With beam_width 1 and fusion off
// this follows exactly the greedy path.
template <class Scorer>
std::vector<Hypothesis<typename Scorer::State>> beam_search(Scorer& scorer, std::size_t beam_width,
                                                            const FusionConfig& fusion = {},
                                                            const DecodeOptions& opts = {}) {
  using State = typename Scorer::State;
  using Hyp = Hypothesis<State>;
  if (beam_width == 0) throw std::invalid_argument("beam_width must be at least 1");

  std::vector<Hyp> beam;
  beam.push_back(Hyp{{}, 0.0, scorer.start(), 0});
  for (std::size_t t = 0; t < scorer.frames(); ++t) {
    std::vector<Hyp> closed;
    std::vector<Hyp> open = std::move(beam);
    for (std::size_t round = 0; !open.empty(); ++round) {
      struct Candidate {
        std::vector<std::size_t> labels;
        double score;
        std::size_t parent;        // index into `open`
        std::size_t symbol;        // kBlank closes the frame
        std::size_t closed_index;  // for entries already in `closed`
      };
      constexpr std::size_t kNone = static_cast<std::size_t>(-1);
      std::vector<Candidate> pool;
      for (std::size_t i = 0; i < closed.size(); ++i)
        pool.push_back({closed[i].labels, closed[i].score, kNone, kBlank, i});
      std::vector<std::vector<double>> dists(open.size());
      for (std::size_t i = 0; i < open.size(); ++i) {
        dists[i] = scorer.log_probs(t, open[i].state);
        pool.push_back({open[i].labels, open[i].score + dists[i][kBlank], i, kBlank, kNone});
        if (round >= opts.max_symbols_per_frame) continue;
        for (std::size_t k = 1; k < dists[i].size(); ++k) {
          auto labels = open[i].labels;
          const double bonus = fusion.enabled() ? fusion.emission_bonus(open[i].labels, k) : 0.0;
          labels.push_back(k);
          pool.push_back({std::move(labels), open[i].score + dists[i][k] + bonus, i, k, kNone});
        }
      }
      // Merge closed candidates that share a label sequence.
      std::vector<Candidate> merged;
      std::map<std::vector<std::size_t>, std::size_t> closed_at;
      for (auto& c : pool) {
        if (c.symbol != kBlank || !opts.merge_hypotheses) {
          merged.push_back(std::move(c));
          continue;
        }
        auto [it, fresh] = closed_at.try_emplace(c.labels, merged.size());
        if (fresh) {
          merged.push_back(std::move(c));
        } else {
          Candidate& m = merged[it->second];
          m.score = log_add_exp(m.score, c.score);
          // Keep a concrete source for the state: prefer an existing closed entry.
          if (m.closed_index == kNone && c.closed_index != kNone) {
            m.closed_index = c.closed_index;
            m.parent = kNone;
          }
        }
      }
      std::sort(merged.begin(), merged.end(), [](const Candidate& a, const Candidate& b) {
        return detail::better(a, b);
      });
      if (merged.size() > beam_width) merged.resize(beam_width);

      std::vector<Hyp> next_closed, next_open;
      for (auto& c : merged) {
        if (c.symbol == kBlank) {
          Hyp h = c.closed_index != kNone ? closed[c.closed_index] : open[c.parent];
          h.score = c.score;
          next_closed.push_back(std::move(h));
        } else {
          Hyp h = open[c.parent];
          scorer.extend(h.state, c.symbol);
          h.labels = std::move(c.labels);
          h.score = c.score;
          ++h.non_blank_count;
          next_open.push_back(std::move(h));
        }
      }
      closed = std::move(next_closed);
      open = std::move(next_open);
    }
    beam = std::move(closed);
  }
  std::sort(beam.begin(), beam.end(), [](const Hyp& a, const Hyp& b) { return detail::better(a, b); });
  return beam;
}

inline std::vector<Hypothesis<LabelState>> beam_decode(const Model& model, const Tensor& features,
                                                       std::size_t beam_width,
                                                       const FusionConfig& fusion = {},
                                                       const DecodeOptions& opts = {}) {
  ModelScorer scorer(model, features);
  return beam_search(scorer, beam_width, fusion, opts);
}

// ---------------------------------------------------------------------------
// Streaming.

// Work done while handling one audio frame's encoder output.
struct FrameTrace {
  std::size_t frame = 0;
  std::uint64_t joint_evaluations = 0;
  std::uint64_t audio_score_entries = 0;  // attention scores computed for this output position
  std::size_t emitted = 0;
};

// Single-owner streaming decoder. Frames go in one at a time; each audio
// encoder output position is produced as soon as the look-ahead of every
// layer is satisfied, from cached per-layer windows only, and is decoded
// greedily at once.
class StreamState {
 public:
  explicit StreamState(const Model& model, DecodeOptions opts = {})
      : model_(&model), opts_(opts), joint_(model), label_(start_label(joint_)) {
    const auto& mask = model.config.audio.mask;
    if (!mask.left || !mask.right) {
      throw std::invalid_argument("streaming needs finite left and right audio context");
    }
    NoGradGuard no_grad;
    audio_.emplace(model.config.audio, model.audio);
  }

  // Consumes one feature frame; returns the labels emitted as a result.
  std::vector<std::size_t> step(std::span<const double> frame) {
    if (flushed_) throw std::logic_error("stream_step after flush");
    NoGradGuard no_grad;
    audio_->push(frame);
    return drain();
  }

  // Ends the stream; positions still waiting on look-ahead are decoded with
  // the right context truncated at the last frame.
  std::vector<std::size_t> flush() {
    if (flushed_) throw std::logic_error("flush called twice");
    flushed_ = true;
    NoGradGuard no_grad;
    audio_->finish();
    return drain();
  }

  std::size_t frames_consumed() const { return audio_->inputs_consumed(); }
  std::size_t frames_decoded() const { return decoded_; }
  const std::vector<std::size_t>& labels() const { return label_.labels; }
  const std::vector<std::vector<double>>& audio_activations() const { return activations_; }
  const std::vector<FrameTrace>& trace() const { return trace_; }
  std::size_t max_buffered_rows() const { return audio_->max_buffered_rows(); }

 private:
  static LabelState start_label(const JointEvaluator& joint) {
    NoGradGuard no_grad;
    return joint.start();
  }

  std::vector<std::size_t> drain() {
    std::vector<std::size_t> emitted;
    const std::uint64_t scores_before = last_score_entries_;
    auto rows = audio_->take_outputs();
    const std::uint64_t scores_now = audio_->stats().score_entries;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      FrameTrace tr;
      tr.frame = decoded_;
      // Attention work is attributed per output position; with several
      // positions released at once (flush) it is split evenly.
      tr.audio_score_entries = (scores_now - scores_before) / rows.size();
      const std::uint64_t evals_before = joint_.evaluations();
      const Tensor act(Shape{1, rows[r].size()}, rows[r]);
      activations_.push_back(std::move(rows[r]));
      const Tensor proj = joint_.audio_projection(act);
      std::size_t count = 0;
      while (true) {
        const auto lp = joint_.log_probs(proj, label_);
        const std::size_t k = count < opts_.max_symbols_per_frame ? argmax(lp) : kBlank;
        if (k == kBlank) break;
        joint_.extend(label_, k);
        emitted.push_back(k);
        ++count;
      }
      tr.joint_evaluations = joint_.evaluations() - evals_before;
      tr.emitted = count;
      trace_.push_back(tr);
      ++decoded_;
    }
    last_score_entries_ = scores_now;
    return emitted;
  }

  const Model* model_;
  DecodeOptions opts_;
  JointEvaluator joint_;
  std::optional<IncrementalEncoder> audio_;
  LabelState label_;
  std::vector<std::vector<double>> activations_;
  std::vector<FrameTrace> trace_;
  std::uint64_t last_score_entries_ = 0;
  std::size_t decoded_ = 0;
  bool flushed_ = false;
};

// Streams every row of `features` through a StreamState and flushes.
inline DecodeResult stream_decode(const Model& model, const Tensor& features,
                                  const DecodeOptions& opts = {}) {
  StreamState s(model, opts);
  for (std::size_t t = 0; t < features.rows(); ++t) {
    s.step(features.values().subspan(t * features.cols(), features.cols()));
  }
  s.flush();
  return {s.labels(), 0.0};
}

}  // namespace tt
