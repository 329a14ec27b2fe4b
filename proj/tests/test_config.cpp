#include <gtest/gtest.h>

#include "tt/config.hpp"

using namespace tt;

namespace {

std::string error_of(const std::string& doc) {
  try {
    run_config_from_json(Json::parse(doc));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RunConfig, DefaultsAreValid) {
  const RunConfig rc = run_config_from_json(Json::object());
  EXPECT_EQ(rc.model.vocab_size, 6u);
  EXPECT_EQ(rc.model.audio.input_dim, 8u);
  EXPECT_EQ(rc.model.label.input_dim, 6u);
  EXPECT_EQ(rc.model.label.mask.right, std::optional<std::size_t>(0));
  EXPECT_FALSE(rc.model.audio.mask.left);
  EXPECT_EQ(rc.train.seed, rc.seed);
}

TEST(RunConfig, UnknownKeysNameTheirPath) {
  EXPECT_EQ(error_of(R"({"mask": {"audio_lft": 3}})"), "mask.audio_lft: unknown key");
  EXPECT_EQ(error_of(R"({"model": {"audio": {"layers": 3}}})"), "model.audio.layers: unknown key");
  EXPECT_EQ(error_of(R"({"sede": 3})"), "sede: unknown key");
}

TEST(RunConfig, TypeErrorsNameTheirPath) {
  EXPECT_NE(error_of(R"({"train": {"batch_size": "many"}})").find("train.batch_size"), std::string::npos);
  EXPECT_NE(error_of(R"({"train": {"batch_size": -1}})").find("train.batch_size"), std::string::npos);
  EXPECT_NE(error_of(R"({"mask": {"audio_left": "some"}})").find("mask.audio_left"), std::string::npos);
  EXPECT_NE(error_of(R"({"model": 3})").find("model"), std::string::npos);
  EXPECT_NE(error_of(R"({"schedule": {"warmup_steps": 0}})").find("schedule"), std::string::npos);
  EXPECT_NE(error_of(R"({"decode": {"beam_width": 0}})").find("decode.beam_width"), std::string::npos);
}

TEST(RunConfig, MaskTriplesFromTheExperimentTables) {
  // (audio left, audio right, label left) combinations, "unlimited" included.
  struct Case {
    const char* doc;
    std::optional<std::size_t> al, ar, ll;
  };
  const Case cases[] = {
      {R"({"mask": {"audio_left": "unlimited", "audio_right": "unlimited", "label_left": "unlimited"}})",
       std::nullopt, std::nullopt, std::nullopt},
      {R"({"mask": {"audio_left": "unlimited", "audio_right": 0, "label_left": 20}})", std::nullopt, 0, 20},
      {R"({"mask": {"audio_left": 10, "audio_right": 0, "label_left": 2}})", 10, 0, 2},
      {R"({"mask": {"audio_left": 10, "audio_right": 2, "label_left": 20}})", 10, 2, 20},
      {R"({"mask": {"audio_left": 10, "audio_right": 6, "label_left": 2}})", 10, 6, 2},
      {R"({"mask": {"audio_left": "unlimited", "audio_right": "unlimited", "label_left": 1}})",
       std::nullopt, std::nullopt, 1},
  };
  for (const auto& c : cases) {
    const RunConfig rc = run_config_from_json(Json::parse(c.doc));
    EXPECT_EQ(rc.model.audio.mask.left, c.al) << c.doc;
    EXPECT_EQ(rc.model.audio.mask.right, c.ar) << c.doc;
    EXPECT_EQ(rc.model.label.mask.left, c.ll) << c.doc;
    EXPECT_EQ(rc.model.label.mask.right, std::optional<std::size_t>(0));
  }
}

TEST(RunConfig, LargeArchitectureIsExpressible) {
  const auto rc = run_config_from_json(Json::parse(R"({
    "feature_dim": 128,
    "frontend": {"stack": 4, "subsample": 3, "freq_mask_width": 50, "freq_mask_count": 2,
                 "time_mask_width": 30, "time_mask_count": 10, "augment_enabled": true},
    "model": {"vocab_size": 30, "joint_dim": 512,
      "audio": {"num_layers": 18, "model_dim": 512, "ff_dim1": 2048, "ff_dim2": 1024,
                "num_heads": 8, "head_dim": 64, "dropout_ratio": 0.1},
      "label": {"num_layers": 2, "model_dim": 512, "ff_dim1": 2048, "ff_dim2": 1024,
                "num_heads": 8, "head_dim": 64, "dropout_ratio": 0.1}},
    "schedule": {"peak_lr": 2.5e-4, "warmup_steps": 4000, "hold_until": 30000,
                 "decay_until": 200000, "final_lr": 2.5e-6},
    "train": {"weight_noise_sigma": 0.01, "weight_noise_start": 10000, "total_steps": 200000},
    "task": {"symbols": 29}
  })"));
  EXPECT_EQ(rc.model.audio.input_dim, 512u);
  EXPECT_EQ(rc.model.audio.num_layers, 18u);
  EXPECT_EQ(rc.model.label.num_layers, 2u);
  EXPECT_EQ(rc.model.label.input_dim, 30u);
  EXPECT_EQ(rc.frontend.time_mask_count, 10u);
  EXPECT_DOUBLE_EQ(rc.train.weight_noise_sigma, 0.01);
}

TEST(RunConfig, SerializedFormParsesBackToItself) {
  RunConfig rc = run_config_from_json(Json::parse(R"({"seed": 9, "mask": {"audio_left": 10, "audio_right": 2}})"));
  const Json j = to_json(rc);
  EXPECT_EQ(to_json(run_config_from_json(j)), j);
}

TEST(ModelConfigJson, RoundTripAndStrictness) {
  ModelConfig c = ModelConfig::desk(8, 6);
  c.audio.mask = AttentionMask::window(3, 1);
  c.audio.max_relative_offset = 7;
  c.audio.residual = ResidualSource::kInput;
  const ModelConfig back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.audio.residual, ResidualSource::kInput);
  EXPECT_EQ(back.audio.relative_offset(), 7u);
  Json j = to_json(c);
  j["audio"]["extra"] = 1;
  EXPECT_THROW(model_config_from_json(j), ConfigError);
}

TEST(RunConfig, MissingFileIsAConfigError) {
  EXPECT_THROW(load_run_config("/nonexistent/run.json"), ConfigError);
}
