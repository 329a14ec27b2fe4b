// Run configuration: a JSON document with nested sections. Unknown keys and
// ill-typed values are rejected with the offending key path.

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "tt/attention.hpp"
#include "tt/decode.hpp"
#include "tt/frontend.hpp"
#include "tt/model.hpp"
#include "tt/tasks.hpp"
#include "tt/train.hpp"

namespace tt {

using Json = nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

// Reads fields of one JSON object, remembering which keys were consumed so
// leftovers can be reported.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_->contains(key); }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!j_->contains(key)) return;
    used_.insert(key);
    const Json& v = (*j_)[key];
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("expected a boolean");
        out = v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("expected an integer");
        if (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0) throw ConfigError("expected a non-negative integer");
        out = v.get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("expected a number");
        out = v.get<T>();
      } else {
        if (!v.is_string()) throw ConfigError("expected a string");
        out = v.get<T>();
      }
    } catch (const ConfigError& e) {
      throw ConfigError(child(key) + ": " + e.what());
    }
  }

  // A context width: a non-negative integer or "unlimited".
  void read_width(const std::string& key, std::optional<std::size_t>& out) {
    if (!j_->contains(key)) return;
    used_.insert(key);
    const Json& v = (*j_)[key];
    if (v.is_string() && v.get<std::string>() == "unlimited") {
      out.reset();
    } else if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
      out = v.get<std::size_t>();
    } else {
      throw ConfigError(child(key) + ": expected a non-negative integer or \"unlimited\"");
    }
  }

  // The value under `key`, taken as is.
  const Json& raw(const std::string& key) {
    used_.insert(key);
    return j_->at(key);
  }

  Section section(const std::string& key) {
    used_.insert(key);
    return Section((*j_)[key], child(key));
  }

  void finish() const {
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(child(it.key()) + ": unknown key");
    }
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "<root>" : path_; }

 private:
  const Json* j_;
  std::string path_;
  std::set<std::string> used_;
};

inline Json width_json(const std::optional<std::size_t>& w) {
  return w ? Json(*w) : Json("unlimited");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model configuration (also embedded in checkpoints).

inline Json to_json(const EncoderConfig& c) {
  Json j;
  j["num_layers"] = c.num_layers;
  j["input_dim"] = c.input_dim;
  j["model_dim"] = c.model_dim;
  j["ff_dim1"] = c.ff_dim1;
  j["ff_dim2"] = c.ff_dim2;
  j["num_heads"] = c.num_heads;
  j["head_dim"] = c.head_dim;
  j["dropout_ratio"] = c.dropout_ratio;
  j["mask"] = {{"left", detail::width_json(c.mask.left)}, {"right", detail::width_json(c.mask.right)}};
  if (c.max_relative_offset) j["max_relative_offset"] = *c.max_relative_offset;
  j["layer_norm_eps"] = c.layer_norm_eps;
  j["final_norm"] = c.final_norm;
  j["residual"] = c.residual == ResidualSource::kNormalized ? "normalized" : "input";
  return j;
}

// Reads the architecture fields shared by the run config and checkpoints;
// the mask is read only when `with_mask`.
inline void read_encoder(detail::Section& s, EncoderConfig& c, bool with_mask, bool with_input_dim) {
  s.read("num_layers", c.num_layers);
  if (with_input_dim) s.read("input_dim", c.input_dim);
  s.read("model_dim", c.model_dim);
  s.read("ff_dim1", c.ff_dim1);
  s.read("ff_dim2", c.ff_dim2);
  s.read("num_heads", c.num_heads);
  s.read("head_dim", c.head_dim);
  s.read("dropout_ratio", c.dropout_ratio);
  if (with_mask && s.has("mask")) {
    auto m = s.section("mask");
    m.read_width("left", c.mask.left);
    m.read_width("right", c.mask.right);
    m.finish();
  }
  if (s.has("max_relative_offset")) {
    std::size_t v = 0;
    s.read("max_relative_offset", v);
    c.max_relative_offset = v;
  }
  s.read("layer_norm_eps", c.layer_norm_eps);
  s.read("final_norm", c.final_norm);
  std::string residual = c.residual == ResidualSource::kNormalized ? "normalized" : "input";
  s.read("residual", residual);
  if (residual == "normalized") {
    c.residual = ResidualSource::kNormalized;
  } else if (residual == "input") {
    c.residual = ResidualSource::kInput;
  } else {
    throw ConfigError(s.child("residual") + ": expected \"normalized\" or \"input\"");
  }
}

inline Json to_json(const ModelConfig& c) {
  return {{"audio", to_json(c.audio)},
          {"label", to_json(c.label)},
          {"joint_dim", c.joint_dim},
          {"vocab_size", c.vocab_size}};
}

inline ModelConfig model_config_from_json(const Json& j, const std::string& path = "model") {
  detail::Section s(j, path);
  ModelConfig c;
  auto audio = s.section("audio");
  read_encoder(audio, c.audio, true, true);
  audio.finish();
  auto label = s.section("label");
  read_encoder(label, c.label, true, true);
  label.finish();
  s.read("joint_dim", c.joint_dim);
  s.read("vocab_size", c.vocab_size);
  s.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Full run configuration.

struct MaskConfig {
  std::optional<std::size_t> audio_left;
  std::optional<std::size_t> audio_right;
  std::optional<std::size_t> label_left;
};

struct DecodeConfig {
  std::size_t beam_width = 4;
  double lm_weight = 0.0;
  double length_bonus = 0.0;
  std::size_t max_symbols_per_frame = 10;
};

struct DataConfig {
  std::string train, dev, test;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t feature_dim = 8;  // raw features per frame, before stacking
  ModelConfig model;            // masks and input dims derived from the sections below
  MaskConfig mask;
  FrontendConfig frontend;
  ScheduleConfig schedule;
  TrainConfig train;
  DecodeConfig decode;
  DataConfig data;
  SyntheticTaskConfig task;

  // Applies the mask triple and derived input widths to the model section.
  void resolve() {
    model.audio.mask = AttentionMask{mask.audio_left, mask.audio_right};
    model.label.mask = AttentionMask{mask.label_left, 0};
    model.audio.input_dim = feature_dim * frontend.stack;
    model.label.input_dim = model.vocab_size;
    train.seed = seed;
  }
};

inline RunConfig default_run_config() {
  RunConfig r;
  r.model = ModelConfig::desk(r.feature_dim, r.task.vocab_size());
  r.task.size = 2000;
  r.task.noise = 0.8;
  r.schedule = {2e-3, 150, 750, 1500, 1e-4};
  r.train.total_steps = 1500;
  r.train.weight_noise_sigma = 0.0;
  r.train.weight_noise_start = 1000;
  r.resolve();
  return r;
}

inline Json to_json(const RunConfig& r) {
  Json model = {{"vocab_size", r.model.vocab_size}, {"joint_dim", r.model.joint_dim}};
  for (const auto* which : {"audio", "label"}) {
    Json e = to_json(std::string(which) == "audio" ? r.model.audio : r.model.label);
    e.erase("mask");
    e.erase("input_dim");
    model[which] = e;
  }
  const auto& t = r.train;
  return {
      {"seed", r.seed},
      {"feature_dim", r.feature_dim},
      {"model", model},
      {"mask",
       {{"audio_left", detail::width_json(r.mask.audio_left)},
        {"audio_right", detail::width_json(r.mask.audio_right)},
        {"label_left", detail::width_json(r.mask.label_left)}}},
      {"frontend",
       {{"stack", r.frontend.stack},
        {"subsample", r.frontend.subsample},
        {"freq_mask_width", r.frontend.freq_mask_width},
        {"freq_mask_count", r.frontend.freq_mask_count},
        {"time_mask_width", r.frontend.time_mask_width},
        {"time_mask_count", r.frontend.time_mask_count},
        {"augment_enabled", r.frontend.augment_enabled}}},
      {"schedule",
       {{"peak_lr", r.schedule.peak_lr},
        {"warmup_steps", r.schedule.warmup_steps},
        {"hold_until", r.schedule.hold_until},
        {"decay_until", r.schedule.decay_until},
        {"final_lr", r.schedule.final_lr}}},
      {"train",
       {{"batch_size", t.batch_size},
        {"total_steps", t.total_steps},
        {"weight_noise_sigma", t.weight_noise_sigma},
        {"weight_noise_start", t.weight_noise_start},
        {"adam_beta1", t.adam.beta1},
        {"adam_beta2", t.adam.beta2},
        {"adam_eps", t.adam.eps},
        {"clip_norm", t.clip_norm},
        {"checkpoint_interval", t.checkpoint_interval}}},
      {"decode",
       {{"beam_width", r.decode.beam_width},
        {"lm_weight", r.decode.lm_weight},
        {"length_bonus", r.decode.length_bonus},
        {"max_symbols_per_frame", r.decode.max_symbols_per_frame}}},
      {"data", {{"train", r.data.train}, {"dev", r.data.dev}, {"test", r.data.test}}},
      {"task",
       {{"symbols", r.task.symbols},
        {"min_labels", r.task.min_labels},
        {"max_labels", r.task.max_labels},
        {"min_frames_per_label", r.task.min_frames_per_label},
        {"max_frames_per_label", r.task.max_frames_per_label},
        {"feature_dim", r.task.feature_dim},
        {"noise", r.task.noise},
        {"size", r.task.size},
        {"seed", r.task.seed},
        {"transition_concentration", r.task.transition_concentration}}},
  };
}

// Overlays `j` on the defaults and validates the result.
inline RunConfig run_config_from_json(const Json& j) {
  RunConfig r = default_run_config();
  detail::Section root(j, "");
  root.read("seed", r.seed);
  root.read("feature_dim", r.feature_dim);
  if (root.has("model")) {
    auto m = root.section("model");
    m.read("vocab_size", r.model.vocab_size);
    m.read("joint_dim", r.model.joint_dim);
    for (const auto* which : {"audio", "label"}) {
      if (!m.has(which)) continue;
      auto e = m.section(which);
      read_encoder(e, std::string(which) == "audio" ? r.model.audio : r.model.label, false, false);
      e.finish();
    }
    m.finish();
  }
  if (root.has("mask")) {
    auto m = root.section("mask");
    m.read_width("audio_left", r.mask.audio_left);
    m.read_width("audio_right", r.mask.audio_right);
    m.read_width("label_left", r.mask.label_left);
    m.finish();
  }
  if (root.has("frontend")) {
    auto f = root.section("frontend");
    f.read("stack", r.frontend.stack);
    f.read("subsample", r.frontend.subsample);
    f.read("freq_mask_width", r.frontend.freq_mask_width);
    f.read("freq_mask_count", r.frontend.freq_mask_count);
    f.read("time_mask_width", r.frontend.time_mask_width);
    f.read("time_mask_count", r.frontend.time_mask_count);
    f.read("augment_enabled", r.frontend.augment_enabled);
    f.finish();
  }
  if (root.has("schedule")) {
    auto s = root.section("schedule");
    s.read("peak_lr", r.schedule.peak_lr);
    s.read("warmup_steps", r.schedule.warmup_steps);
    s.read("hold_until", r.schedule.hold_until);
    s.read("decay_until", r.schedule.decay_until);
    s.read("final_lr", r.schedule.final_lr);
    s.finish();
  }
  if (root.has("train")) {
    auto t = root.section("train");
    t.read("batch_size", r.train.batch_size);
    t.read("total_steps", r.train.total_steps);
    t.read("weight_noise_sigma", r.train.weight_noise_sigma);
    t.read("weight_noise_start", r.train.weight_noise_start);
    t.read("adam_beta1", r.train.adam.beta1);
    t.read("adam_beta2", r.train.adam.beta2);
    t.read("adam_eps", r.train.adam.eps);
    t.read("clip_norm", r.train.clip_norm);
    t.read("checkpoint_interval", r.train.checkpoint_interval);
    t.finish();
  }
  if (root.has("decode")) {
    auto d = root.section("decode");
    d.read("beam_width", r.decode.beam_width);
    d.read("lm_weight", r.decode.lm_weight);
    d.read("length_bonus", r.decode.length_bonus);
    d.read("max_symbols_per_frame", r.decode.max_symbols_per_frame);
    d.finish();
  }
  if (root.has("data")) {
    auto d = root.section("data");
    d.read("train", r.data.train);
    d.read("dev", r.data.dev);
    d.read("test", r.data.test);
    d.finish();
  }
  if (root.has("task")) {
    auto t = root.section("task");
    t.read("symbols", r.task.symbols);
    t.read("min_labels", r.task.min_labels);
    t.read("max_labels", r.task.max_labels);
    t.read("min_frames_per_label", r.task.min_frames_per_label);
    t.read("max_frames_per_label", r.task.max_frames_per_label);
    t.read("feature_dim", r.task.feature_dim);
    t.read("noise", r.task.noise);
    t.read("size", r.task.size);
    t.read("seed", r.task.seed);
    t.read("transition_concentration", r.task.transition_concentration);
    t.finish();
  }
  root.finish();
  r.resolve();

  auto check = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  check("model", [&] { r.model.validate(); });
  check("frontend", [&] { r.frontend.validate(); });
  check("schedule", [&] { r.schedule.validate(); });
  check("train", [&] { r.train.validate(); });
  check("task", [&] { r.task.validate(); });
  if (r.decode.beam_width == 0) throw ConfigError("decode.beam_width: must be at least 1");
  return r;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  Json j;
  try {
    j = Json::parse(is);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace tt
