// Transformer encoder stacks with windowed self-attention and relative
// positional encoding. Used for both the audio encoder and the label encoder.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tt/ops.hpp"
#include "tt/rng.hpp"
#include "tt/tensor.hpp"

namespace tt {

// Per-layer context window. Position i may attend to j iff
// i - left <= j <= i + right; an empty side is unbounded.
struct AttentionMask {
  std::optional<std::size_t> left;
  std::optional<std::size_t> right;

  static AttentionMask full() { return {}; }
  static AttentionMask window(std::size_t l, std::size_t r) { return {l, r}; }

  bool allows(std::size_t i, std::size_t j) const {
    if (j <= i) return !left || i - j <= *left;
    return !right || j - i <= *right;
  }
  bool finite() const { return left.has_value() && right.has_value(); }
  bool operator==(const AttentionMask&) const = default;
};

// Row-major [seq_len x seq_len]; entry (i, j) is 1 iff i may attend to j.
inline std::vector<std::uint8_t> build_mask(std::size_t seq_len, const AttentionMask& mask) {
  if (seq_len == 0) throw std::invalid_argument("build_mask: seq_len must be positive");
  std::vector<std::uint8_t> m(seq_len * seq_len);
  for (std::size_t i = 0; i < seq_len; ++i)
    for (std::size_t j = 0; j < seq_len; ++j) m[i * seq_len + j] = mask.allows(i, j) ? 1 : 0;
  return m;
}

// Where each sub-layer's residual branch starts. kNormalized adds the
// sub-layer output to LayerNorm(x); kInput adds it to x.
enum class ResidualSource { kNormalized, kInput };

inline constexpr std::size_t kDefaultRelativeOffset = 32;

struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t input_dim = 8;
  std::size_t model_dim = 32;
  std::size_t ff_dim1 = 64;
  std::size_t ff_dim2 = 32;
  std::size_t num_heads = 2;
  std::size_t head_dim = 16;
  double dropout_ratio = 0.1;
  AttentionMask mask;
  // Largest distinguishable |i - j|; unset means left + right of the mask.
  std::optional<std::size_t> max_relative_offset;
  double layer_norm_eps = 1e-5;
  bool final_norm = true;
  ResidualSource residual = ResidualSource::kNormalized;

  std::size_t relative_offset() const {
    if (max_relative_offset) return *max_relative_offset;
    if (mask.finite()) return *mask.left + *mask.right;
    return kDefaultRelativeOffset;
  }
  std::size_t attention_dim() const { return num_heads * head_dim; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw std::invalid_argument(std::string("encoder ") + name + " must be positive");
    };
    positive(input_dim, "input_dim");
    positive(model_dim, "model_dim");
    positive(ff_dim1, "ff_dim1");
    positive(ff_dim2, "ff_dim2");
    positive(num_heads, "num_heads");
    positive(head_dim, "head_dim");
    if (!(dropout_ratio >= 0.0 && dropout_ratio < 1.0)) {
      throw std::invalid_argument("encoder dropout_ratio must lie in [0, 1)");
    }
    if (!(layer_norm_eps > 0.0)) throw std::invalid_argument("encoder layer_norm_eps must be > 0");
  }
};

struct EncoderLayerParams {
  Tensor attn_norm_gain, attn_norm_bias;
  Tensor query, key, value;           // [model_dim x heads*head_dim]
  Tensor rel_embedding;               // [(2M+1) x heads*head_dim], row o is offset o - M
  Tensor content_bias, position_bias; // [heads*head_dim]
  Tensor out, out_bias;               // [heads*head_dim x model_dim]
  Tensor ff_norm_gain, ff_norm_bias;
  Tensor ff1, ff1_bias;               // [model_dim x ff_dim1]
  Tensor ff2, ff2_bias;               // [ff_dim1 x ff_dim2]
  Tensor ff_proj;                     // [ff_dim2 x model_dim], only when ff_dim2 != model_dim

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "attn_norm.gain", attn_norm_gain);
    f(prefix + "attn_norm.bias", attn_norm_bias);
    f(prefix + "attn.query", query);
    f(prefix + "attn.key", key);
    f(prefix + "attn.value", value);
    f(prefix + "attn.rel_embedding", rel_embedding);
    f(prefix + "attn.content_bias", content_bias);
    f(prefix + "attn.position_bias", position_bias);
    f(prefix + "attn.out", out);
    f(prefix + "attn.out_bias", out_bias);
    f(prefix + "ff_norm.gain", ff_norm_gain);
    f(prefix + "ff_norm.bias", ff_norm_bias);
    f(prefix + "ff.dense1", ff1);
    f(prefix + "ff.dense1_bias", ff1_bias);
    f(prefix + "ff.dense2", ff2);
    f(prefix + "ff.dense2_bias", ff2_bias);
    if (ff_proj.numel() > 0) f(prefix + "ff.proj", ff_proj);
  }
};

struct EncoderParams {
  Tensor input, input_bias;  // [input_dim x model_dim]
  std::vector<EncoderLayerParams> layers;
  Tensor final_norm_gain, final_norm_bias;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "input", input);
    f(prefix + "input_bias", input_bias);
    for (std::size_t l = 0; l < layers.size(); ++l)
      layers[l].visit(prefix + "layer" + std::to_string(l) + ".", f);
    f(prefix + "final_norm.gain", final_norm_gain);
    f(prefix + "final_norm.bias", final_norm_bias);
  }

  // Scaled-normal weights, zero biases, unit norm gains.
  static EncoderParams init(const EncoderConfig& cfg, Rng rng) {
    cfg.validate();
    auto dense = [&rng](std::size_t in, std::size_t out) {
      std::vector<double> v(in * out);
      const double sd = 1.0 / std::sqrt(static_cast<double>(in));
      for (double& x : v) x = rng.normal(0.0, sd);
      return Tensor::parameter({in, out}, std::move(v));
    };
    auto small = [&rng](std::size_t rows, std::size_t cols) {
      std::vector<double> v(rows * cols);
      for (double& x : v) x = rng.normal(0.0, 0.02);
      return Tensor::parameter({rows, cols}, std::move(v));
    };
    auto vec = [](std::size_t n, double fill) {
      return Tensor::parameter({n}, std::vector<double>(n, fill));
    };
    const std::size_t d = cfg.model_dim, a = cfg.attention_dim();
    const std::size_t offsets = 2 * cfg.relative_offset() + 1;
    EncoderParams p;
    p.input = dense(cfg.input_dim, d);
    p.input_bias = vec(d, 0.0);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      EncoderLayerParams L;
      L.attn_norm_gain = vec(d, 1.0);
      L.attn_norm_bias = vec(d, 0.0);
      L.query = dense(d, a);
      L.key = dense(d, a);
      L.value = dense(d, a);
      L.rel_embedding = small(offsets, a);
      L.content_bias = vec(a, 0.0);
      L.position_bias = vec(a, 0.0);
      L.out = dense(a, d);
      L.out_bias = vec(d, 0.0);
      L.ff_norm_gain = vec(d, 1.0);
      L.ff_norm_bias = vec(d, 0.0);
      L.ff1 = dense(d, cfg.ff_dim1);
      L.ff1_bias = vec(cfg.ff_dim1, 0.0);
      L.ff2 = dense(cfg.ff_dim1, cfg.ff_dim2);
      L.ff2_bias = vec(cfg.ff_dim2, 0.0);
      if (cfg.ff_dim2 != d) L.ff_proj = dense(cfg.ff_dim2, d);
      p.layers.push_back(std::move(L));
    }
    p.final_norm_gain = vec(d, 1.0);
    p.final_norm_bias = vec(d, 0.0);
    return p;
  }
};

// Work counters for the attention kernels.
struct AttentionStats {
  std::uint64_t score_entries = 0;  // (query, key, head) scores evaluated
  std::uint64_t positions = 0;      // query positions processed, summed over layers
};

namespace detail {

inline void check_layer_shapes(const EncoderLayerParams& p, const EncoderConfig& cfg) {
  const std::size_t d = cfg.model_dim, a = cfg.attention_dim();
  auto expect = [](const Tensor& t, Shape s, const char* name) {
    if (t.shape() != s) {
      throw DimensionError(std::string("encoder parameter ") + name + " has shape " +
                           to_string(t.shape()) + ", expected " + to_string(s));
    }
  };
  expect(p.query, {d, a}, "query");
  expect(p.key, {d, a}, "key");
  expect(p.value, {d, a}, "value");
  expect(p.rel_embedding, {2 * cfg.relative_offset() + 1, a}, "rel_embedding");
  expect(p.out, {a, d}, "out");
  expect(p.ff1, {d, cfg.ff_dim1}, "ff1");
  expect(p.ff2, {cfg.ff_dim1, cfg.ff_dim2}, "ff2");
}

}  // namespace detail

// Offset-table row and mask bit for every (query, key) pair when queries are
// positions [q_begin, q_begin + Lq) of a sequence of S keys.
struct RelativeLayout {
  std::vector<std::size_t> offset_index;  // clip(i - j, -M, M) + M, row-major [Lq x S]
  std::vector<std::uint8_t> allowed;
};

inline RelativeLayout relative_layout(std::size_t q_begin, std::size_t Lq, std::size_t S,
                                      const AttentionMask& mask, std::size_t M) {
  RelativeLayout r;
  r.offset_index.resize(Lq * S);
  r.allowed.resize(Lq * S);
  const auto m = static_cast<std::ptrdiff_t>(M);
  for (std::size_t i = 0; i < Lq; ++i) {
    const auto qi = static_cast<std::ptrdiff_t>(q_begin + i);
    for (std::size_t j = 0; j < S; ++j) {
      const std::ptrdiff_t off = std::clamp<std::ptrdiff_t>(qi - static_cast<std::ptrdiff_t>(j), -m, m);
      r.offset_index[i * S + j] = static_cast<std::size_t>(off + m);
      r.allowed[i * S + j] = mask.allows(q_begin + i, j) ? 1 : 0;
    }
  }
  return r;
}

// Scaled pre-softmax scores of one head:
//   ((q + u) k^T + gather((q + v) R^T)) / sqrt(head_dim)
// with u, v the content and position biases and R the offset table. Masking
// is left to masked_softmax.
inline Tensor attention_scores(const Tensor& q, const Tensor& k, const Tensor& rel,
                               const Tensor& content_bias, const Tensor& position_bias,
                               std::span<const std::size_t> offset_index) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const Tensor content = matmul(add_row(q, content_bias), transpose(k));
  const Tensor by_offset = matmul(add_row(q, position_bias), transpose(rel));
  const Tensor position = gather_cols(by_offset, offset_index, k.rows());
  return scale(add(content, position), inv_sqrt);
}

// One encoder layer evaluated for query rows [q_begin, q_end) of `x`, with
// every row of `x` available as a key. Rows are consecutive positions; only
// their differences matter. With q_begin = 0 and q_end = rows this is the
// whole-sequence layer.
//
//   attention sub-layer:    r + Dropout(Dense(MultiHead(LN(x))))
//   feed-forward sub-layer: r + Dropout(Dense2(Dropout(ReLU(Dense1(LN(h))))))
//
// where r is LN(.) or the raw input depending on cfg.residual.
inline Tensor encoder_layer(const Tensor& x, std::size_t q_begin, std::size_t q_end,
                            const EncoderLayerParams& p, const EncoderConfig& cfg, Rng* rng,
                            bool training, AttentionStats* stats = nullptr) {
  if (x.rank() != 2 || x.shape()[1] != cfg.model_dim) {
    throw DimensionError("encoder_layer: input " + to_string(x.shape()) + " does not have width " +
                         std::to_string(cfg.model_dim));
  }
  detail::check_layer_shapes(p, cfg);
  const std::size_t S = x.shape()[0];
  if (q_begin >= q_end || q_end > S) throw DimensionError("encoder_layer: bad query range");
  const std::size_t Lq = q_end - q_begin;
  const std::size_t H = cfg.num_heads, dh = cfg.head_dim;
  const std::size_t M = cfg.relative_offset();
  if (training && cfg.dropout_ratio > 0.0 && rng == nullptr) {
    throw std::invalid_argument("encoder_layer: training with dropout needs an Rng");
  }
  Rng fallback(0);
  Rng& r = rng ? *rng : fallback;
  Rng attn_rng = r.substream("attention");
  Rng ff1_rng = r.substream("ff1");
  Rng ff2_rng = r.substream("ff2");

  const bool all_rows = q_begin == 0 && q_end == S;
  const Tensor xn = layer_norm(x, p.attn_norm_gain, p.attn_norm_bias, cfg.layer_norm_eps);
  const Tensor xq = all_rows ? xn : slice_rows(xn, q_begin, q_end);
  const Tensor q = matmul(xq, p.query);
  const Tensor k = matmul(xn, p.key);
  const Tensor v = matmul(xn, p.value);

  const RelativeLayout layout = relative_layout(q_begin, Lq, S, cfg.mask, M);
  if (stats) {
    stats->score_entries += Lq * S * H;
    stats->positions += Lq;
  }

  std::vector<Tensor> heads;
  heads.reserve(H);
  for (std::size_t h = 0; h < H; ++h) {
    const std::size_t c0 = h * dh, c1 = (h + 1) * dh;
    const Tensor vh = slice_cols(v, c0, c1);
    const Tensor scores = attention_scores(
        slice_cols(q, c0, c1), slice_cols(k, c0, c1), slice_cols(p.rel_embedding, c0, c1),
        slice_cols(p.content_bias, c0, c1), slice_cols(p.position_bias, c0, c1), layout.offset_index);
    const Tensor weights = masked_softmax(scores, layout.allowed);
    heads.push_back(matmul(weights, vh));
  }
  const Tensor context = H == 1 ? heads[0] : concat_cols(heads);
  const Tensor attn_out = dropout(add_row(matmul(context, p.out), p.out_bias), cfg.dropout_ratio,
                                  attn_rng, training);
  const Tensor attn_res =
      cfg.residual == ResidualSource::kNormalized ? xq : (all_rows ? x : slice_rows(x, q_begin, q_end));
  const Tensor h1 = add(attn_res, attn_out);

  const Tensor hn = layer_norm(h1, p.ff_norm_gain, p.ff_norm_bias, cfg.layer_norm_eps);
  const Tensor f1 =
      dropout(relu(add_row(matmul(hn, p.ff1), p.ff1_bias)), cfg.dropout_ratio, ff1_rng, training);
  Tensor f2 = add_row(matmul(f1, p.ff2), p.ff2_bias);
  if (p.ff_proj.numel() > 0) f2 = matmul(f2, p.ff_proj);
  f2 = dropout(f2, cfg.dropout_ratio, ff2_rng, training);
  const Tensor ff_res = cfg.residual == ResidualSource::kNormalized ? hn : h1;
  return add(ff_res, f2);
}

inline Tensor encoder_layer(const Tensor& x, const EncoderLayerParams& p, const EncoderConfig& cfg,
                            Rng* rng, bool training, AttentionStats* stats = nullptr) {
  return encoder_layer(x, 0, x.rows(), p, cfg, rng, training, stats);
}

// Input projection, num_layers encoder layers sharing cfg.mask, and the
// optional final LayerNorm (skipped for an empty stack).
inline Tensor encode(const Tensor& x, const EncoderConfig& cfg, const EncoderParams& params,
                     Rng* rng, bool training, AttentionStats* stats = nullptr) {
  if (x.rank() != 2 || x.shape()[1] != cfg.input_dim) {
    throw DimensionError("encode: input " + to_string(x.shape()) + " does not have width " +
                         std::to_string(cfg.input_dim));
  }
  if (params.layers.size() != cfg.num_layers) {
    throw DimensionError("encode: parameters hold " + std::to_string(params.layers.size()) +
                         " layers, config expects " + std::to_string(cfg.num_layers));
  }
  Tensor h = add_row(matmul(x, params.input), params.input_bias);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    Rng layer_rng = rng ? rng->substream(l) : Rng(0);
    h = encoder_layer(h, params.layers[l], cfg, rng ? &layer_rng : nullptr, training, stats);
  }
  if (cfg.final_norm && cfg.num_layers > 0) {
    h = layer_norm(h, params.final_norm_gain, params.final_norm_bias, cfg.layer_norm_eps);
  }
  return h;
}

// How far a stacked windowed encoder sees, and the look-ahead delay that the
// right context adds up to across layers. Empty fields mean unbounded.
struct ReceptiveField {
  std::optional<std::size_t> past_frames;
  std::optional<std::size_t> future_frames;
  std::optional<double> future_latency_ms;
};

inline ReceptiveField receptive_field(std::size_t num_layers, const AttentionMask& mask,
                                      double frame_ms) {
  ReceptiveField rf;
  if (mask.left) rf.past_frames = num_layers * *mask.left;
  if (mask.right) {
    rf.future_frames = num_layers * *mask.right;
    rf.future_latency_ms = static_cast<double>(*rf.future_frames) * frame_ms;
  }
  return rf;
}

// Encodes a sequence one input row at a time, producing each output position
// as soon as the right context of every layer allows, and touching only a
// window of cached per-layer activations per position. Outputs match encode()
// on the same rows.
class IncrementalEncoder {
 public:
  IncrementalEncoder(const EncoderConfig& cfg, const EncoderParams& params)
      : cfg_(&cfg), params_(&params), levels_(cfg.num_layers + 1) {
    cfg.validate();
  }

  void push(std::span<const double> row) {
    if (finished_) throw std::logic_error("IncrementalEncoder: push after finish");
    if (row.size() != cfg_->input_dim) {
      throw DimensionError("IncrementalEncoder: input row has " + std::to_string(row.size()) +
                           " values, expected " + std::to_string(cfg_->input_dim));
    }
    const Tensor x(Shape{1, cfg_->input_dim}, std::vector<double>(row.begin(), row.end()));
    const Tensor projected = add_row(matmul(x, params_->input), params_->input_bias);
    append(0, std::vector<double>(projected.values().begin(), projected.values().end()));
    advance();
  }

  // End of input: positions that were waiting on right context are computed
  // with the context truncated at the last row.
  void finish() {
    if (finished_) throw std::logic_error("IncrementalEncoder: finish called twice");
    finished_ = true;
    advance();
  }

  bool finished() const { return finished_; }
  std::size_t inputs_consumed() const { return levels_[0].count; }
  std::size_t outputs_produced() const { return produced_; }
  const AttentionStats& stats() const { return stats_; }

  // Largest number of cached rows held by any level.
  std::size_t max_buffered_rows() const {
    std::size_t m = 0;
    for (const auto& l : levels_) m = std::max(m, l.rows.size());
    return m;
  }

  // Output rows that became available since the previous call, in order.
  std::vector<std::vector<double>> take_outputs() {
    std::vector<std::vector<double>> out(std::make_move_iterator(ready_.begin()),
                                         std::make_move_iterator(ready_.end()));
    ready_.clear();
    return out;
  }

 private:
  struct Level {
    std::deque<std::vector<double>> rows;  // cached rows, first one at position `first`
    std::size_t first = 0;
    std::size_t count = 0;  // positions produced so far at this level
  };

  void append(std::size_t level, std::vector<double> row) {
    if (level == cfg_->num_layers) {
      emit(std::move(row));
      levels_[level].count++;
      return;
    }
    levels_[level].rows.push_back(std::move(row));
    levels_[level].count++;
  }

  void emit(std::vector<double> row) {
    if (cfg_->final_norm && cfg_->num_layers > 0) {
      const std::size_t n = row.size();
      const Tensor t = layer_norm(Tensor(Shape{1, n}, std::move(row)),
                                  params_->final_norm_gain, params_->final_norm_bias,
                                  cfg_->layer_norm_eps);
      row.assign(t.values().begin(), t.values().end());
    }
    ready_.push_back(std::move(row));
    ++produced_;
  }

  void advance() {
    const auto& mask = cfg_->mask;
    for (std::size_t n = 1; n <= cfg_->num_layers; ++n) {
      Level& below = levels_[n - 1];
      const bool below_complete = finished_ && below.count == levels_[0].count;
      while (true) {
        const std::size_t p = levels_[n].count;
        if (p >= below.count) break;
        const bool ready = below_complete || (mask.right && p + *mask.right < below.count);
        if (!ready) break;
        const std::size_t lo = mask.left && p > *mask.left ? p - *mask.left : 0;
        std::size_t hi = below.count - 1;
        if (mask.right) hi = std::min(hi, p + *mask.right);
        const std::size_t width = cfg_->model_dim;
        std::vector<double> window;
        window.reserve((hi - lo + 1) * width);
        for (std::size_t pos = lo; pos <= hi; ++pos) {
          const auto& row = below.rows[pos - below.first];
          window.insert(window.end(), row.begin(), row.end());
        }
        const Tensor x(Shape{hi - lo + 1, width}, std::move(window));
        const Tensor y =
            encoder_layer(x, p - lo, p - lo + 1, params_->layers[n - 1], *cfg_, nullptr, false,
                          &stats_);
        append(n, std::vector<double>(y.values().begin(), y.values().end()));
        // Rows below the next position's left edge are never read again.
        if (mask.left) {
          const std::size_t next = p + 1;
          const std::size_t keep_from = next > *mask.left ? next - *mask.left : 0;
          while (below.first < keep_from && !below.rows.empty()) {
            below.rows.pop_front();
            ++below.first;
          }
        }
      }
    }
  }

  const EncoderConfig* cfg_;
  const EncoderParams* params_;
  std::vector<Level> levels_;
  std::deque<std::vector<double>> ready_;
  std::size_t produced_ = 0;
  bool finished_ = false;
  AttentionStats stats_;
};

}  // namespace tt
