// The transducer model: audio encoder, label encoder, and joint network.

#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tt/attention.hpp"
#include "tt/ops.hpp"
#include "tt/rng.hpp"
#include "tt/transducer.hpp"

namespace tt {

struct ModelConfig {
  EncoderConfig audio;
  EncoderConfig label;  // input_dim must equal vocab_size; mask right side must be 0
  std::size_t joint_dim = 32;
  std::size_t vocab_size = 7;

  JointConfig joint() const { return {audio.model_dim, label.model_dim, joint_dim, vocab_size}; }

  void validate() const {
    audio.validate();
    label.validate();
    if (vocab_size < 2) throw std::invalid_argument("vocab_size must be at least 2");
    if (joint_dim == 0) throw std::invalid_argument("joint_dim must be positive");
    if (label.input_dim != vocab_size) {
      throw std::invalid_argument("label encoder input_dim must equal vocab_size");
    }
    if (!label.mask.right || *label.mask.right != 0) {
      throw std::invalid_argument("label encoder must not look ahead (right context 0)");
    }
  }

  // Small defaults that train on one core in minutes.
  static ModelConfig desk(std::size_t input_dim, std::size_t vocab_size) {
    ModelConfig c;
    c.vocab_size = vocab_size;
    c.audio.num_layers = 2;
    c.audio.input_dim = input_dim;
    c.label.num_layers = 1;
    c.label.input_dim = vocab_size;
    c.label.mask = AttentionMask{std::nullopt, 0};
    return c;
  }
};

struct Model {
  ModelConfig config;
  EncoderParams audio;
  EncoderParams label;
  JointParams joint;

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const Rng root(seed);
    return Model{cfg, EncoderParams::init(cfg.audio, root.substream("audio")),
                 EncoderParams::init(cfg.label, root.substream("label")),
                 JointParams::init(cfg.joint(), root.substream("joint"))};
  }

  // Visits every parameter in a fixed order with a stable dotted name.
  template <class F>
  void visit(F&& f) {
    audio.visit("audio.", f);
    label.visit("label.", f);
    joint.visit("joint.", f);
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<Model*>(this)->visit([&f](const std::string& name, Tensor& t) {
      f(name, static_cast<const Tensor&>(t));
    });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&n](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
  }

  // Copy with freshly allocated parameter tensors.
  Model clone() const {
    Model m = *this;
    m.visit([](const std::string&, Tensor& t) {
      t = Tensor(t.shape(), std::vector<double>(t.values().begin(), t.values().end()),
                 t.requires_grad());
    });
    return m;
  }
};

// One-hot label-encoder inputs: row 0 is the start symbol (blank), row u is
// y[u-1].
inline Tensor label_encoder_inputs(std::span<const std::size_t> y, std::size_t vocab_size) {
  validate_labels(y, vocab_size);
  std::vector<double> v((y.size() + 1) * vocab_size, 0.0);
  v[kBlank] = 1.0;
  for (std::size_t u = 0; u < y.size(); ++u) v[(u + 1) * vocab_size + y[u]] = 1.0;
  return Tensor(Shape{y.size() + 1, vocab_size}, std::move(v));
}

inline std::vector<double> one_hot(std::size_t id, std::size_t size) {
  std::vector<double> v(size, 0.0);
  v.at(id) = 1.0;
  return v;
}

// Full forward pass to the log-probability grid. `rng` drives dropout when
// training and may be null otherwise.
inline LogProbGrid model_grid(const Model& m, const Tensor& features,
                              std::span<const std::size_t> y, Rng* rng, bool training,
                              AttentionStats* stats = nullptr) {
  Rng audio_rng = rng ? rng->substream("audio") : Rng(0);
  Rng label_rng = rng ? rng->substream("label") : Rng(0);
  const Tensor audio =
      encode(features, m.config.audio, m.audio, rng ? &audio_rng : nullptr, training, stats);
  const Tensor label = encode(label_encoder_inputs(y, m.config.vocab_size), m.config.label,
                              m.label, rng ? &label_rng : nullptr, training, stats);
  return log_prob_grid(audio, label, m.joint);
}

}  // namespace tt
