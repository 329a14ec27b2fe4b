// tt: train, decode, evaluate and self-test transducer models.
//
// Exit codes: 0 success, 1 self-test failure, 2 usage/config/input error,
// 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "tt/checkpoint.hpp"
#include "tt/config.hpp"
#include "tt/run.hpp"
#include "tt/selftest.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitTestFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

void print_resolved(const tt::Json& config, std::uint64_t seed) {
  std::cerr << "resolved config: " << config.dump() << "\n";
  std::cerr << "seed: " << seed << "\n";
}

tt::RunConfig load_config_or_default(const std::string& path) {
  return path.empty() ? tt::default_run_config() : tt::load_run_config(path);
}

tt::Dataset load_dataset_for(const std::string& key, const std::string& path) {
  if (path.empty()) throw tt::ConfigError(key + ": no dataset path given");
  try {
    return tt::read_dataset(path);
  } catch (const tt::FormatError& e) {
    throw tt::ConfigError(key + ": " + e.what());
  }
}

struct DecodeFlags {
  std::string checkpoint;
  std::string data;
  std::string mode = "greedy";
  std::size_t beam_width = 4;
  std::string lm;
  double lm_weight = 0.0;
  double length_bonus = 0.0;
  std::size_t max_symbols = 10;
  std::string output;
};

void add_decode_flags(CLI::App* cmd, DecodeFlags& f) {
  cmd->add_option("--checkpoint", f.checkpoint, "model checkpoint (.ttck)")->required();
  cmd->add_option("--data", f.data, "dataset (.ttds)")->required();
  cmd->add_option("--mode", f.mode, "greedy, beam or stream")
      ->check(CLI::IsMember({"greedy", "beam", "stream"}));
  cmd->add_option("--beam-width", f.beam_width, "beam width for --mode beam");
  cmd->add_option("--lm", f.lm, "bigram language model (JSON) for shallow fusion");
  cmd->add_option("--lm-weight", f.lm_weight, "language model weight");
  cmd->add_option("--length-bonus", f.length_bonus, "per-label score bonus");
  cmd->add_option("--max-symbols", f.max_symbols, "labels emitted per frame at most");
  cmd->add_option("--output", f.output, "write to this file instead of standard output");
}

struct LoadedDecode {
  tt::Checkpoint checkpoint;
  tt::Dataset data;
  std::optional<tt::BigramLM> lm;
  tt::DecodeRequest request;
};

LoadedDecode load_decode(const DecodeFlags& f, std::size_t threads) {
  LoadedDecode d;
  try {
    d.checkpoint = tt::load_checkpoint(f.checkpoint);
  } catch (const std::exception& e) {
    throw tt::ConfigError(std::string("--checkpoint: ") + e.what());
  }
  d.data = load_dataset_for("--data", f.data);
  if (!f.lm.empty()) d.lm = tt::load_bigram(f.lm);
  if (f.lm_weight != 0.0 && !d.lm) throw tt::ConfigError("--lm-weight: needs --lm");
  if (d.lm && d.lm->vocab_size() != d.checkpoint.model.config.vocab_size) {
    throw tt::ConfigError("--lm: vocabulary does not match the checkpoint");
  }
  auto& r = d.request;
  r.mode = tt::parse_decode_mode(f.mode);
  r.beam_width = f.beam_width;
  r.fusion = {f.lm_weight, f.length_bonus, d.lm ? &*d.lm : nullptr};
  r.options.max_symbols_per_frame = f.max_symbols;
  r.threads = threads;
  if ((f.lm_weight != 0.0 || f.length_bonus != 0.0) && r.mode != tt::DecodeMode::kBeam) {
    throw tt::ConfigError("--lm-weight/--length-bonus: fusion needs --mode beam");
  }

  tt::Json resolved = tt::Json::parse(tt::checkpoint_config_json(d.checkpoint.model, d.checkpoint.frontend));
  resolved["decode"] = {{"mode", f.mode},
                        {"beam_width", f.beam_width},
                        {"lm", f.lm},
                        {"lm_weight", f.lm_weight},
                        {"length_bonus", f.length_bonus},
                        {"max_symbols_per_frame", f.max_symbols},
                        {"threads", threads}};
  print_resolved(resolved, 0);
  return d;
}

// Writes to --output when given, else standard output.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::trunc);
      if (!file_) throw tt::ConfigError("--output: cannot open " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed) {
  tt::RunConfig rc = tt::load_run_config(config_path);
  if (seed) {
    rc.seed = *seed;
    rc.resolve();
  }
  print_resolved(tt::to_json(rc), rc.seed);
  const tt::Dataset train = load_dataset_for("data.train", rc.data.train);
  tt::check_dataset_fits(train, rc.model, rc.frontend, "data.train");

  fs::create_directories(out_dir);
  {
    std::ofstream cfg(fs::path(out_dir) / "config.json", std::ios::trunc);
    cfg << tt::to_json(rc).dump(2) << "\n";
  }
  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw tt::ConfigError("output directory " + out_dir + " is not writable");

  const tt::Model model = tt::train_model(
      rc, train,
      [&](const tt::TrainLogEntry& e) {
        metrics << tt::to_json(e).dump() << "\n" << std::flush;
        if ((e.step + 1) % 100 == 0 || e.step + 1 == rc.train.total_steps) {
          std::cerr << "step " << e.step + 1 << " loss " << e.result.loss << " lr " << e.result.lr << "\n";
        }
      },
      [&](std::size_t done, const tt::Model& m) {
        tt::save_checkpoint((fs::path(out_dir) / ("step-" + std::to_string(done) + ".ttck")).string(), m,
                            rc.frontend);
      });
  tt::save_checkpoint((fs::path(out_dir) / "model.ttck").string(), model, rc.frontend);
  const auto seqs = tt::label_sequences(train);
  tt::save_bigram((fs::path(out_dir) / "lm.json").string(),
                  tt::BigramLM::train(seqs, rc.model.vocab_size));
  std::cerr << "wrote " << (fs::path(out_dir) / "model.ttck").string() << "\n";
  return kExitOk;
}

int cmd_decode(const DecodeFlags& f, std::size_t threads) {
  LoadedDecode d = load_decode(f, threads);
  const auto transcripts = tt::decode_dataset(d.checkpoint, d.data, d.request);
  Output out(f.output);
  for (const auto& t : transcripts) out.stream() << t.id << '\t' << tt::format_labels(t.labels) << '\n';
  return kExitOk;
}

int cmd_eval(const DecodeFlags& f, std::size_t threads) {
  LoadedDecode d = load_decode(f, threads);
  const auto report = tt::evaluate(d.checkpoint, d.data, d.request);
  Output out(f.output);
  out.stream() << tt::to_json(report).dump(2) << '\n';
  std::cerr << "WER " << std::fixed << std::setprecision(3) << report.total.rate() << " ("
            << report.total.edits << "/" << report.total.ref_words << ")\n";
  return kExitOk;
}

int cmd_selftest(bool inject_fault) {
  print_resolved({{"inject_dp_fault", inject_fault}}, 0);
  if (inject_fault) tt::testing::dp_fault_injection() = 1e-3;
  const auto results = tt::run_selftest();
  bool ok = true;
  std::cout << std::left << std::setw(10) << "suite" << std::setw(8) << "result" << std::setw(9)
            << "seconds"
            << "detail\n";
  for (const auto& r : results) {
    ok = ok && r.passed;
    std::cout << std::left << std::setw(10) << r.name << std::setw(8) << (r.passed ? "PASS" : "FAIL")
              << std::setw(9) << std::fixed << std::setprecision(2) << r.seconds << r.detail << "\n";
  }
  for (const auto& r : results)
    if (!r.passed) std::cout << "failed suite: " << r.name << "\n";
  return ok ? kExitOk : kExitTestFailure;
}

int cmd_gen_data(const std::string& config_path, const std::string& split,
                 std::optional<std::size_t> size, const std::string& out) {
  tt::RunConfig rc = load_config_or_default(config_path);
  if (size) rc.task.size = *size;
  rc.task.validate();
  print_resolved(tt::to_json(rc)["task"], rc.task.seed);
  const tt::Dataset ds = tt::gen_synthetic(rc.task, split);
  tt::write_dataset(out, ds);
  std::cerr << "wrote " << ds.utterances.size() << " utterances to " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer transducer toolkit"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "worker threads (decoding parallelizes across utterances)")
      ->check(CLI::PositiveNumber);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", config_path, "run config (JSON)")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--seed", seed, "override the config seed");

  DecodeFlags decode_flags, eval_flags;
  auto* decode = app.add_subcommand("decode", "print one transcript per utterance");
  add_decode_flags(decode, decode_flags);
  auto* eval = app.add_subcommand("eval", "decode and report error rates as JSON");
  add_decode_flags(eval, eval_flags);

  bool inject_fault = false;
  auto* selftest = app.add_subcommand("selftest", "run the built-in checks");
  selftest->add_flag("--inject-dp-fault", inject_fault, "corrupt the loss recursion (checks the checks)");

  std::string gen_config, split = "train", gen_out;
  std::optional<std::size_t> gen_size;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen->add_option("--config", gen_config, "run config (JSON); the task section is used");
  gen->add_option("--split", split, "split name, mixed into the generator seed");
  gen->add_option("--size", gen_size, "number of utterances");
  gen->add_option("--out", gen_out, "output dataset (.ttds)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(config_path, out_dir, seed);
    if (*decode) return cmd_decode(decode_flags, threads);
    if (*eval) return cmd_eval(eval_flags, threads);
    if (*selftest) return cmd_selftest(inject_fault);
    if (*gen) return cmd_gen_data(gen_config, split, gen_size, gen_out);
  } catch (const tt::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
