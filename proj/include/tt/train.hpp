// Training: learning-rate schedule, weight noise, gradient clipping, Adam
// updates, and the per-batch step.

#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tt/decode.hpp"
#include "tt/frontend.hpp"
#include "tt/model.hpp"
#include "tt/tasks.hpp"
#include "tt/transducer.hpp"

namespace tt {

// Linear warm-up from 0 to peak_lr, constant until hold_until, geometric decay
// to final_lr at decay_until, constant afterwards.
struct ScheduleConfig {
  double peak_lr = 2.5e-4;
  std::size_t warmup_steps = 4000;
  std::size_t hold_until = 30000;
  std::size_t decay_until = 200000;
  double final_lr = 2.5e-6;

  void validate() const {
    if (warmup_steps == 0 || warmup_steps > hold_until || hold_until >= decay_until) {
      throw std::invalid_argument("schedule needs 0 < warmup_steps <= hold_until < decay_until");
    }
    if (!(final_lr > 0.0) || !(final_lr <= peak_lr)) {
      throw std::invalid_argument("schedule needs 0 < final_lr <= peak_lr");
    }
  }
};

inline double lr_at(std::size_t step, const ScheduleConfig& s) {
  if (step < s.warmup_steps) {
    return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  if (step <= s.hold_until) return s.peak_lr;
  if (step >= s.decay_until) return s.final_lr;
  const double frac = static_cast<double>(step - s.hold_until) /
                      static_cast<double>(s.decay_until - s.hold_until);
  return s.peak_lr * std::pow(s.final_lr / s.peak_lr, frac);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t total_steps = 2000;
  std::uint64_t seed = 1;
  double weight_noise_sigma = 0.0;
  std::size_t weight_noise_start = 10000;
  AdamConfig adam;
  double clip_norm = 5.0;
  std::size_t checkpoint_interval = 0;  // 0: only the final checkpoint

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("train.batch_size must be positive");
    if (total_steps == 0) throw std::invalid_argument("train.total_steps must be positive");
    if (!(weight_noise_sigma >= 0.0)) throw std::invalid_argument("train.weight_noise_sigma must be >= 0");
    if (!(clip_norm > 0.0)) throw std::invalid_argument("train.clip_norm must be positive");
  }
};

class TrainingError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Weights used by the forward pass at `step`: the stored weights, or a copy
// perturbed by N(0, sigma^2) once step >= start_step. The stored model is
// never modified.
inline Model apply_weight_noise(const Model& stored, double sigma, std::size_t step,
                                std::size_t start_step, Rng rng) {
  if (sigma < 0.0) throw std::invalid_argument("weight noise sigma must be >= 0");
  if (sigma == 0.0 || step < start_step) return stored;
  Model noisy = stored.clone();
  noisy.visit([&](const std::string& name, Tensor& t) {
    Rng r = rng.substream(name);
    for (double& v : t.mutable_values()) v += r.normal(0.0, sigma);
  });
  return noisy;
}

// Scales `grads` in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_global_norm(std::span<std::vector<double>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g) v *= s;
  }
  return norm;
}

// Adaptive-moment optimizer with bias correction over a fixed list of
// parameter tensors.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void update(std::span<const std::vector<double>> grads, double lr) {
    if (grads.size() != params_.size()) throw DimensionError("Adam: gradient count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto values = params_[i].mutable_values();
      for (std::size_t j = 0; j < values.size(); ++j) {
        const double g = grads[i][j];
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[i][j] / c1;
        const double vhat = v_[i][j] / c2;
        values[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

inline std::vector<Tensor> parameter_list(Model& m) {
  std::vector<Tensor> out;
  m.visit([&out](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

// Features as the model sees them: stacked and subsampled, then augmented
// when `augment_rng` is given.
inline Tensor prepare_features(const Tensor& raw, const FrontendConfig& fe, Rng* augment_rng) {
  Tensor f = (fe.stack == 1 && fe.subsample == 1) ? raw : stack_subsample(raw, fe.stack, fe.subsample);
  if (augment_rng && fe.augment_enabled) f = spec_augment(f, fe, *augment_rng);
  return f;
}

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

// Owns the optimizer state for one model. Each step runs the forward pass
// (augmentation, weight noise, dropout), the summed transducer loss, the
// backward pass, global-norm clipping, and an Adam update at lr_at(step).
class Trainer {
 public:
  Trainer(Model& model, TrainConfig train, ScheduleConfig schedule, FrontendConfig frontend)
      : model_(&model),
        train_(train),
        schedule_(schedule),
        frontend_(frontend),
        adam_(parameter_list(model), train.adam) {
    train_.validate();
    schedule_.validate();
    frontend_.validate();
  }

  StepResult step(std::span<const Utterance* const> batch, std::size_t step) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const Rng step_rng = Rng(train_.seed).substream("step").substream(step);
    Model forward = apply_weight_noise(*model_, train_.weight_noise_sigma, step,
                                       train_.weight_noise_start, step_rng.substream("noise"));
    std::vector<LossTerm> terms;
    terms.reserve(batch.size());
    Tensor loss;
    try {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng ex = step_rng.substream("example").substream(i);
        Rng aug = ex.substream("augment");
        Rng drop = ex.substream("dropout");
        const Tensor feats = prepare_features(batch[i]->features, frontend_, &aug);
        terms.push_back({model_grid(forward, feats, batch[i]->labels, &drop, true), batch[i]->labels});
      }
      loss = batch_loss(terms);
      backward(loss);
    } catch (const NumericalError& e) {
      std::string ids;
      for (const auto* u : batch) ids += (ids.empty() ? "" : ",") + u->id;
      throw TrainingError("non-finite value at step " + std::to_string(step) + " (examples " + ids +
                          "): " + e.what());
    }

    std::vector<Tensor> fwd_params = parameter_list(forward);
    std::vector<std::vector<double>> grads;
    grads.reserve(fwd_params.size());
    for (auto& p : fwd_params) {
      grads.push_back(p.grad());
      p.zero_grad();
    }
    StepResult r;
    r.loss = loss.item();
    r.grad_norm = clip_global_norm(grads, train_.clip_norm);
    r.lr = lr_at(step, schedule_);
    adam_.update(grads, r.lr);
    return r;
  }

  const TrainConfig& train_config() const { return train_; }

 private:
  Model* model_;
  TrainConfig train_;
  ScheduleConfig schedule_;
  FrontendConfig frontend_;
  Adam adam_;
};

// Deterministic batch order: a seeded permutation per epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
      : n_(dataset_size), batch_(batch_size), rng_(Rng(seed).substream("batches")) {
    if (n_ == 0) throw std::invalid_argument("cannot sample batches from an empty dataset");
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    Rng r = rng_.substream(epoch_++);
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[r.uniform_int(0, i - 1)]);
    pos_ = 0;
  }

  std::size_t n_, batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace tt
