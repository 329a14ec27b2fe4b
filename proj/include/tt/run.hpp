// Dataset-level drivers behind the command-line tool: training runs with
// metrics and checkpoints, decoding a whole dataset, and error reports.

#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "tt/checkpoint.hpp"
#include "tt/config.hpp"
#include "tt/decode.hpp"
#include "tt/tasks.hpp"
#include "tt/train.hpp"

namespace tt {

// ---------------------------------------------------------------------------
// Bigram LM files: {"vocab_size": V, "log_probs": [[...], ...]} with null in
// the blank column.

inline Json to_json(const BigramLM& lm) {
  const std::size_t V = lm.vocab_size();
  Json rows = Json::array();
  for (std::size_t prev = 0; prev < V; ++prev) {
    Json row = Json::array();
    const std::vector<std::size_t> hist{prev};
    for (std::size_t next = 0; next < V; ++next) {
      if (next == kBlank) {
        row.push_back(nullptr);
      } else {
        row.push_back(prev == kBlank ? lm.log_prob({}, next) : lm.log_prob(hist, next));
      }
    }
    rows.push_back(row);
  }
  return {{"vocab_size", V}, {"log_probs", rows}};
}

inline BigramLM bigram_from_json(const Json& j) {
  detail::Section s(j, "lm");
  std::size_t V = 0;
  s.read("vocab_size", V);
  if (!s.has("log_probs")) throw ConfigError("lm.log_probs: missing");
  const Json& rows = s.raw("log_probs");
  s.finish();
  if (V < 2) throw ConfigError("lm.vocab_size: must be at least 2");
  if (!rows.is_array() || rows.size() != V) {
    throw ConfigError("lm.log_probs: expected " + std::to_string(V) + " rows");
  }
  std::vector<double> table(V * V, -std::numeric_limits<double>::infinity());
  for (std::size_t prev = 0; prev < V; ++prev) {
    const Json& row = rows[prev];
    if (!row.is_array() || row.size() != V) {
      throw ConfigError("lm.log_probs[" + std::to_string(prev) + "]: expected " + std::to_string(V) + " values");
    }
    for (std::size_t next = 1; next < V; ++next) {
      if (!row[next].is_number()) throw ConfigError("lm.log_probs: expected numbers");
      table[prev * V + next] = row[next].get<double>();
    }
  }
  return BigramLM(V, std::move(table));
}

inline void save_bigram(const std::string& path, const BigramLM& lm) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << to_json(lm).dump() << "\n";
}

inline BigramLM load_bigram(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open language model " + path);
  try {
    return bigram_from_json(Json::parse(is));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training.

inline void check_dataset_fits(const Dataset& ds, const ModelConfig& model, const FrontendConfig& fe,
                               const std::string& key) {
  if (ds.vocab_size != model.vocab_size) {
    throw ConfigError(key + ": dataset vocabulary " + std::to_string(ds.vocab_size) +
                      " does not match model.vocab_size " + std::to_string(model.vocab_size));
  }
  for (const auto& u : ds.utterances) {
    if (u.features.cols() * fe.stack != model.audio.input_dim) {
      throw ConfigError(key + ": utterance " + u.id + " has " + std::to_string(u.features.cols()) +
                        " features per frame; the model expects " +
                        std::to_string(model.audio.input_dim / fe.stack));
    }
  }
}

struct TrainLogEntry {
  std::size_t step = 0;
  StepResult result;
  double wall_clock = 0.0;  // seconds since the run started
};

// Trains a freshly initialized model for rc.train.total_steps steps.
// `on_step` sees every step; `on_checkpoint` is called every
// checkpoint_interval steps (if nonzero) with the step count so far.
inline Model train_model(const RunConfig& rc, const Dataset& train,
                         const std::function<void(const TrainLogEntry&)>& on_step = {},
                         const std::function<void(std::size_t, const Model&)>& on_checkpoint = {}) {
  check_dataset_fits(train, rc.model, rc.frontend, "data.train");
  if (train.utterances.empty()) throw ConfigError("data.train: dataset is empty");
  Model model = Model::init(rc.model, rc.seed);
  Trainer trainer(model, rc.train, rc.schedule, rc.frontend);
  BatchSampler sampler(train.utterances.size(), rc.train.batch_size, rc.seed);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t step = 0; step < rc.train.total_steps; ++step) {
    std::vector<const Utterance*> batch;
    for (std::size_t i : sampler.next()) batch.push_back(&train.utterances[i]);
    TrainLogEntry e;
    e.step = step;
    e.result = trainer.step(batch, step);
    e.result.loss /= static_cast<double>(batch.size());
    e.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_step) on_step(e);
    const std::size_t done = step + 1;
    if (on_checkpoint && rc.train.checkpoint_interval && done % rc.train.checkpoint_interval == 0 &&
        done != rc.train.total_steps) {
      on_checkpoint(done, model);
    }
  }
  return model;
}

inline Json to_json(const TrainLogEntry& e) {
  return {{"step", e.step},
          {"loss", e.result.loss},
          {"lr", e.result.lr},
          {"grad_norm", e.result.grad_norm},
          {"wall_clock", e.wall_clock}};
}

// ---------------------------------------------------------------------------
// Decoding a dataset.

enum class DecodeMode { kGreedy, kBeam, kStream };

inline DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "greedy") return DecodeMode::kGreedy;
  if (s == "beam") return DecodeMode::kBeam;
  if (s == "stream") return DecodeMode::kStream;
  throw ConfigError("mode: expected greedy, beam or stream, got '" + s + "'");
}

struct DecodeRequest {
  DecodeMode mode = DecodeMode::kGreedy;
  std::size_t beam_width = 4;
  FusionConfig fusion;
  DecodeOptions options;
  std::size_t threads = 1;
};

struct Transcript {
  std::string id;
  std::vector<std::size_t> labels;
};

inline std::vector<std::size_t> decode_utterance(const Checkpoint& ck, const Tensor& raw,
                                                 const DecodeRequest& req) {
  const Tensor f = prepare_features(raw, ck.frontend, nullptr);
  switch (req.mode) {
    case DecodeMode::kGreedy:
      return greedy_decode(ck.model, f, req.options).labels;
    case DecodeMode::kBeam:
      return beam_decode(ck.model, f, req.beam_width, req.fusion, req.options).front().labels;
    case DecodeMode::kStream:
      return stream_decode(ck.model, f, req.options).labels;
  }
  throw std::logic_error("unknown decode mode");
}

// Runs `fn(i)` for i in [0, n) on up to `threads` workers. Each index is
// handled by exactly one worker, so results written by index are
// independent of the thread count.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Transcripts ordered by utterance id.
inline std::vector<Transcript> decode_dataset(const Checkpoint& ck, const Dataset& ds,
                                              const DecodeRequest& req) {
  if (req.mode == DecodeMode::kStream) {
    const auto& m = ck.model.config.audio.mask;
    if (!m.left || !m.right) {
      throw ConfigError("model.audio.mask: stream mode needs finite left and right audio context");
    }
  }
  if (req.mode == DecodeMode::kBeam && req.beam_width == 0) {
    throw ConfigError("decode.beam_width: must be at least 1");
  }
  check_dataset_fits(ds, ck.model.config, ck.frontend, "data");
  std::vector<Transcript> out(ds.utterances.size());
  parallel_for(ds.utterances.size(), req.threads, [&](std::size_t i) {
    out[i] = {ds.utterances[i].id, decode_utterance(ck, ds.utterances[i].features, req)};
  });
  std::stable_sort(out.begin(), out.end(),
                   [](const Transcript& a, const Transcript& b) { return a.id < b.id; });
  return out;
}

inline std::string format_labels(const std::vector<std::size_t>& labels) {
  std::string s;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(labels[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Error reports.

struct UtteranceErrors {
  std::string id;
  ErrorCount errors;
  std::vector<std::size_t> hypothesis;
};

struct EvalReport {
  ErrorCount total;
  std::vector<UtteranceErrors> utterances;  // ordered by id
};

inline EvalReport score_transcripts(const Dataset& ds, const std::vector<Transcript>& hyps) {
  std::map<std::string, const Utterance*> refs;
  for (const auto& u : ds.utterances) {
    if (!refs.emplace(u.id, &u).second) throw FormatError("duplicate utterance id " + u.id);
  }
  EvalReport r;
  for (const auto& h : hyps) {
    auto it = refs.find(h.id);
    if (it == refs.end()) throw FormatError("no reference for utterance " + h.id);
    UtteranceErrors e{h.id, count_errors(it->second->labels, h.labels), h.labels};
    r.total += e.errors;
    r.utterances.push_back(std::move(e));
  }
  return r;
}

inline Json to_json(const EvalReport& r) {
  Json utts = Json::array();
  for (const auto& u : r.utterances) {
    utts.push_back({{"id", u.id},
                    {"errors", u.errors.edits},
                    {"ref_length", u.errors.ref_words},
                    {"hypothesis", format_labels(u.hypothesis)}});
  }
  return {{"wer", r.total.rate()},
          {"errors", r.total.edits},
          {"ref_words", r.total.ref_words},
          {"utterances", utts}};
}

inline EvalReport evaluate(const Checkpoint& ck, const Dataset& ds, const DecodeRequest& req) {
  return score_transcripts(ds, decode_dataset(ck, ds, req));
}

// ---------------------------------------------------------------------------
// Fusion weight tuning.

struct FusionTuning {
  double lm_weight = 0.0;
  double length_bonus = 0.0;
  double dev_error = 0.0;
};

// Grid search over (lm_weight, length_bonus) on a dev set; ties keep the
// earlier grid point, and (0, 0) is always tried first.
inline FusionTuning tune_fusion(const Checkpoint& ck, const Dataset& dev, const LanguageModel& lm,
                                std::size_t beam_width, std::span<const double> lm_weights,
                                std::span<const double> bonuses, std::size_t threads = 1) {
  FusionTuning best;
  bool have = false;
  auto consider = [&](double w, double b) {
    DecodeRequest req;
    req.mode = DecodeMode::kBeam;
    req.beam_width = beam_width;
    req.fusion = {w, b, &lm};
    req.threads = threads;
    const double err = evaluate(ck, dev, req).total.rate();
    if (!have || err < best.dev_error) {
      best = {w, b, err};
      have = true;
    }
  };
  consider(0.0, 0.0);
  for (double w : lm_weights)
    for (double b : bonuses)
      if (w != 0.0 || b != 0.0) consider(w, b);
  return best;
}

}  // namespace tt
