// In-process checks shared by `tt selftest`, the unit tests, and the
// acceptance binary: reference comparisons for the transducer recursion,
// finite-difference gradient checks, streaming/batch agreement, and the
// learning-rate schedule.

#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "tt/decode.hpp"
#include "tt/model.hpp"
#include "tt/train.hpp"
#include "tt/transducer.hpp"

namespace tt {

// Random logits normalized per row.
inline LogProbGrid random_log_prob_grid(std::size_t T, std::size_t U, std::size_t V, Rng& rng,
                                        double spread = 2.0, bool requires_grad = false) {
  std::vector<double> logits(T * (U + 1) * V);
  for (double& v : logits) v = rng.normal(0.0, spread);
  Tensor lp;
  {
    NoGradGuard no_grad;
    lp = log_softmax(Tensor(Shape{T * (U + 1), V}, std::move(logits)));
  }
  const auto vals = lp.values();
  return LogProbGrid::from_tensor(
      T, U, Tensor(lp.shape(), std::vector<double>(vals.begin(), vals.end()), requires_grad));
}

inline std::vector<std::size_t> random_labels(std::size_t U, std::size_t V, Rng& rng) {
  std::vector<std::size_t> y(U);
  for (auto& k : y) k = rng.uniform_int(1, V - 1);
  return y;
}

// Largest |forward recursion - enumeration| over `instances` random
// problems with T <= max_t, U <= max_u, V <= max_v.
struct OracleSweep {
  std::size_t instances = 0;
  double max_abs_error = 0.0;
};

inline OracleSweep oracle_sweep(std::size_t instances, std::size_t max_t, std::size_t max_u,
                                std::size_t max_v, std::uint64_t seed) {
  OracleSweep r;
  const Rng root(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng = root.substream(i);
    const std::size_t T = rng.uniform_int(1, max_t);
    const std::size_t U = rng.uniform_int(0, max_u);
    const std::size_t V = rng.uniform_int(2, max_v);
    const auto grid = random_log_prob_grid(T, U, V, rng);
    const auto y = random_labels(U, V, rng);
    const double dp = rnnt_log_prob(grid, y).item();
    const double bf = brute_force_log_prob(grid, y).log_prob;
    r.max_abs_error = std::max(r.max_abs_error, std::abs(dp - bf));
    if (!std::isfinite(dp)) r.max_abs_error = std::numeric_limits<double>::infinity();
    ++r.instances;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Finite differences.

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares the gradient of `loss` with central differences for every entry
// of every named tensor. `loss` must rebuild its graph from the current
// tensor values on each call.
inline GradCheckReport check_gradients(const std::vector<std::pair<std::string, Tensor>>& params,
                                       const std::function<Tensor()>& loss, double h = 1e-5,
                                       double floor = 1e-6) {
  for (const auto& [name, p] : params) {
    auto t = p;
    t.zero_grad();
  }
  backward(loss());
  GradCheckReport rep;
  for (const auto& [name, p] : params) {
    Tensor t = p;
    const std::vector<double> analytic = t.grad();
    auto vals = t.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard no_grad;
        vals[i] = saved + h;
        plus = loss().item();
        vals[i] = saved - h;
        minus = loss().item();
      }
      vals[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric, floor);
      if (err > rep.max_rel_error || rep.checked == 0) {
        rep.max_rel_error = err;
        rep.worst = name + "[" + std::to_string(i) + "]";
        rep.worst_analytic = analytic[i];
        rep.worst_numeric = numeric;
      }
      ++rep.checked;
    }
    t.zero_grad();
  }
  return rep;
}

inline std::vector<std::pair<std::string, Tensor>> named_parameters(Model& m) {
  std::vector<std::pair<std::string, Tensor>> out;
  m.visit([&out](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

// A model small enough for exhaustive finite differences.
inline ModelConfig tiny_model_config(std::size_t input_dim, std::size_t vocab) {
  ModelConfig c = ModelConfig::desk(input_dim, vocab);
  for (EncoderConfig* e : {&c.audio, &c.label}) {
    e->num_layers = 1;
    e->model_dim = 8;
    e->ff_dim1 = 12;
    e->ff_dim2 = 8;
    e->num_heads = 2;
    e->head_dim = 4;
    e->dropout_ratio = 0.0;
  }
  c.label.input_dim = vocab;
  c.joint_dim = 8;
  return c;
}

inline Tensor random_features(std::size_t T, std::size_t d, Rng& rng) {
  std::vector<double> v(T * d);
  for (double& x : v) x = rng.normal();
  return Tensor(Shape{T, d}, std::move(v));
}

// Gradient of -log P(y|x) for a whole model against finite differences.
inline GradCheckReport model_gradient_check(std::uint64_t seed, std::size_t T, std::size_t U) {
  const std::size_t d = 3, V = 4;
  Model m = Model::init(tiny_model_config(d, V), seed);
  Rng rng = Rng(seed).substream("data");
  const Tensor x = random_features(T, d, rng);
  const auto y = random_labels(U, V, rng);
  const auto params = named_parameters(m);
  return check_gradients(params, [&] {
    const auto grid = model_grid(m, x, y, nullptr, false);
    return scale(rnnt_log_prob(grid, y), -1.0);
  });
}

// ---------------------------------------------------------------------------
// Streaming agreement.

struct StreamingReport {
  bool transcripts_equal = true;
  double max_activation_diff = 0.0;
  bool constant_work = true;  // per-frame attention work and joint calls independent of t
};

inline StreamingReport streaming_check(const Model& m, const Tensor& features,
                                       const DecodeOptions& opts = {}) {
  StreamingReport r;
  const DecodeResult batch = greedy_decode(m, features, opts);
  const Tensor acts = encode_audio(m, features);

  StreamState s(m, opts);
  for (std::size_t t = 0; t < features.rows(); ++t) {
    s.step(features.values().subspan(t * features.cols(), features.cols()));
  }
  s.flush();
  r.transcripts_equal = s.labels() == batch.labels;
  const auto& rows = s.audio_activations();
  if (rows.size() != acts.rows()) {
    r.max_activation_diff = std::numeric_limits<double>::infinity();
  } else {
    for (std::size_t t = 0; t < rows.size(); ++t)
      for (std::size_t j = 0; j < rows[t].size(); ++j)
        r.max_activation_diff = std::max(r.max_activation_diff, std::abs(rows[t][j] - acts.at(t, j)));
  }
  // Every frame costs one joint call per emitted label plus the closing one,
  // and, once the window is full, the same attention work as any other frame.
  const auto& mask = m.config.audio.mask;
  const std::size_t L = m.config.audio.num_layers;
  const std::size_t warm = L * (*mask.left + *mask.right);
  const std::size_t tail = L * *mask.right;
  std::uint64_t steady = 0;
  bool have_steady = false;
  for (const auto& tr : s.trace()) {
    if (tr.joint_evaluations != tr.emitted + 1) r.constant_work = false;
    if (tr.frame >= warm && tr.frame + tail < features.rows() && tr.frame + 1 < features.rows()) {
      if (!have_steady) {
        steady = tr.audio_score_entries;
        have_steady = true;
      } else if (tr.audio_score_entries != steady) {
        r.constant_work = false;
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Suite runner.

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

inline SuiteResult run_suite(const std::string& name, const std::function<std::string(bool&)>& body) {
  SuiteResult r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    bool ok = false;
    r.detail = body(ok);
    r.passed = ok;
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::vector<SuiteResult> run_selftest() {
  std::vector<SuiteResult> out;

  out.push_back(run_suite("oracle", [](bool& ok) {
    const auto sweep = oracle_sweep(500, 4, 3, 4, 7);
    Rng rng(3);
    LogProbGrid uniform = LogProbGrid::from_tensor(2, 1, Tensor::full({4, 2}, std::log(0.5)));
    const std::vector<std::size_t> y{1};
    const double closed = rnnt_log_prob(uniform, y).item();
    const auto bf = brute_force_log_prob(uniform, y);
    ok = sweep.max_abs_error < 1e-9 && std::abs(closed - std::log(0.25)) < 1e-12 && bf.paths == 2;
    std::ostringstream os;
    os << sweep.instances << " instances, max |dp-enum| " << sweep.max_abs_error
       << "; uniform 2x1 grid " << closed;
    return os.str();
  }));

  out.push_back(run_suite("gradient", [](bool& ok) {
    Rng rng(11);
    auto grid = random_log_prob_grid(4, 3, 5, rng, 1.0, true);
    const auto y = random_labels(3, 5, rng);
    const auto loss_rep = check_gradients({{"grid", grid.values}},
                                          [&] { return rnnt_log_prob(grid, y); });
    const auto model_rep = model_gradient_check(5, 3, 2);
    ok = loss_rep.max_rel_error < 1e-6 && model_rep.max_rel_error < 1e-4;
    std::ostringstream os;
    os << "loss grid max rel " << loss_rep.max_rel_error << "; model " << model_rep.checked
       << " entries max rel " << model_rep.max_rel_error << " at " << model_rep.worst;
    return os.str();
  }));

  out.push_back(run_suite("streaming", [](bool& ok) {
    ok = true;
    std::ostringstream os;
    const std::pair<std::size_t, std::size_t> masks[] = {{2, 0}, {3, 1}};
    for (auto [left, right] : masks) {
      ModelConfig cfg = tiny_model_config(3, 4);
      cfg.audio.num_layers = 2;
      cfg.audio.mask = AttentionMask::window(left, right);
      cfg.label.mask = AttentionMask{2, 0};
      const Model m = Model::init(cfg, 17 + left);
      Rng rng = Rng(23).substream(left);
      const auto rep = streaming_check(m, random_features(14, 3, rng));
      ok = ok && rep.transcripts_equal && rep.max_activation_diff < 1e-9 && rep.constant_work;
      os << "(" << left << "," << right << "): equal=" << rep.transcripts_equal
         << " diff=" << rep.max_activation_diff << " constant=" << rep.constant_work << "; ";
    }
    return os.str();
  }));

  out.push_back(run_suite("schedule", [](bool& ok) {
    const ScheduleConfig s;  // defaults are the reference schedule
    const std::pair<std::size_t, double> pts[] = {
        {0, 0.0}, {4000, 2.5e-4}, {30000, 2.5e-4}, {200000, 2.5e-6}, {115000, 2.5e-5}};
    ok = true;
    std::ostringstream os;
    for (auto [step, want] : pts) {
      const double got = lr_at(step, s);
      const bool good = want == 0.0 ? got == 0.0 : std::abs(got - want) <= 1e-12 * want;
      ok = ok && good;
      os << step << "->" << got << (good ? "" : " (bad)") << " ";
    }
    return os.str();
  }));

  return out;
}

}  // namespace tt
