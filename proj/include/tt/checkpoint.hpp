// TTCK checkpoint files: magic, u32 version, length-prefixed JSON config,
// u64 tensor count, then per tensor {name, u64 rank, u64 extents, f64 values}.
// All integers and floats little-endian.

#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "tt/config.hpp"
#include "tt/model.hpp"
#include "tt/tasks.hpp"

namespace tt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// What a checkpoint carries besides parameters: the architecture and the
// frame stacking the model was trained with.
struct Checkpoint {
  Model model;
  FrontendConfig frontend;
};

inline std::string checkpoint_config_json(const Model& m, const FrontendConfig& fe) {
  Json j = {{"model", to_json(m.config)},
            {"frontend", {{"stack", fe.stack}, {"subsample", fe.subsample}}}};
  return j.dump();
}

inline void save_checkpoint(std::ostream& os, const Model& m, const FrontendConfig& fe = {}) {
  os.write("TTCK", 4);
  io::put_u32(os, kCheckpointVersion);
  io::put_string(os, checkpoint_config_json(m, fe));
  std::uint64_t count = 0;
  m.visit([&count](const std::string&, const Tensor&) { ++count; });
  io::put_u64(os, count);
  m.visit([&os](const std::string& name, const Tensor& t) {
    io::put_string(os, name);
    io::put_u64(os, t.rank());
    for (std::size_t e : t.shape()) io::put_u64(os, e);
    for (double v : t.values()) io::put_f64(os, v);
  });
  if (!os) throw std::runtime_error("checkpoint write failed");
}

inline Checkpoint load_checkpoint(std::istream& is) {
  io::expect_magic(is, "TTCK");
  const std::uint32_t version = io::get_u32(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::string doc = io::get_string(is, "config");
  Json j;
  try {
    j = Json::parse(doc);
  } catch (const Json::parse_error& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  Checkpoint ck;
  {
    detail::Section root(j, "checkpoint");
    if (!root.has("model")) throw FormatError("checkpoint config has no model section");
    root.section("model");
    ck.model.config = model_config_from_json(j["model"], "checkpoint.model");
    if (root.has("frontend")) {
      auto f = root.section("frontend");
      f.read("stack", ck.frontend.stack);
      f.read("subsample", ck.frontend.subsample);
      f.finish();
    }
    root.finish();
  }
  // Initializing fixes the expected names and shapes; values are overwritten.
  ck.model = Model::init(ck.model.config, 0);

  const std::uint64_t count = io::get_u64(is, "tensor count");
  std::uint64_t expected = 0;
  ck.model.visit([&expected](const std::string&, Tensor&) { ++expected; });
  if (count != expected) {
    throw DimensionError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                         std::to_string(expected));
  }
  ck.model.visit([&is](const std::string& name, Tensor& t) {
    const std::string got = io::get_string(is, "tensor name", 1u << 16);
    if (got != name) throw FormatError("expected tensor '" + name + "', found '" + got + "'");
    const std::uint64_t rank = io::get_u64(is, "tensor rank");
    if (rank > 8) throw FormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = io::get_u64(is, "tensor extent");
    if (shape != t.shape()) {
      throw DimensionError("tensor '" + name + "' has shape " + to_string(shape) +
                           " but the config implies " + to_string(t.shape()));
    }
    for (double& v : t.mutable_values()) v = io::get_f64(is, "tensor values");
  });
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Model& m, const FrontendConfig& fe = {}) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  save_checkpoint(os, m, fe);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  return load_checkpoint(is);
}

}  // namespace tt
