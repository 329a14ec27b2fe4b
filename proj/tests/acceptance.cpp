// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tt/checkpoint.hpp"
#include "tt/config.hpp"
#include "tt/run.hpp"
#include "tt/selftest.hpp"

using namespace tt;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Deep copy with row r shifted by `delta` in every column.
Tensor nudged(const Tensor& x, std::size_t r, const std::function<double()>& delta) {
  std::vector<double> v(x.values().begin(), x.values().end());
  for (std::size_t c = 0; c < x.cols(); ++c) v[r * x.cols() + c] += delta();
  return Tensor(x.shape(), std::move(v));
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// 1-3: the loss against its oracles.

Outcome oracle() {
  const auto t0 = Clock::now();
  const auto sweep = oracle_sweep(1000, 4, 3, 4, 20240611);
  const double secs = seconds_since(t0);
  return {sweep.instances >= 1000 && sweep.max_abs_error < 1e-9 && secs < 30.0,
          std::to_string(sweep.instances) + " instances, max |dp - enumeration| " +
              fmt("%.3g", sweep.max_abs_error) + ", " + fmt("%.1f s", secs)};
}

Outcome uniform_grid() {
  const auto grid = LogProbGrid::from_tensor(2, 1, Tensor::full({4, 2}, std::log(0.5)));
  const std::vector<std::size_t> y{1};
  const double lp = rnnt_log_prob(grid, y).item();
  const auto bf = brute_force_log_prob(grid, y);
  const double err = std::abs(lp - std::log(0.25));
  return {err < 1e-12 && bf.paths == 2,
          "log P " + fmt("%.15f", lp) + ", |err| " + fmt("%.2g", err) + ", " + std::to_string(bf.paths) +
              " alignments"};
}

Outcome model_gradient() {
  const auto t0 = Clock::now();
  const auto r = model_gradient_check(5, 3, 2);
  const double secs = seconds_since(t0);
  return {r.max_rel_error < 1e-4 && r.checked > 0 && secs < 120.0,
          std::to_string(r.checked) + " parameters checked, max relative error " +
              fmt("%.2e", r.max_rel_error) + ", " + fmt("%.1f s", secs)};
}

// ---------------------------------------------------------------------------
// 4-5: attention masks.

EncoderConfig desk_audio(AttentionMask mask) {
  EncoderConfig c = ModelConfig::desk(8, 6).audio;
  c.mask = mask;
  return c;
}

Outcome causality() {
  Rng rng(404);
  std::size_t trials = 0, violations = 0;
  for (const AttentionMask mask : {AttentionMask{std::nullopt, 0}, AttentionMask{10, 0}, AttentionMask{2, 0}}) {
    const EncoderConfig cfg = desk_audio(mask);
    const EncoderParams params = EncoderParams::init(cfg, rng.substream(trials));
    for (int i = 0; i < 34; ++i, ++trials) {
      const std::size_t T = rng.uniform_int(2, 40);
      const std::size_t j = rng.uniform_int(1, T - 1);  // perturbed frame
      Tensor x = random_features(T, cfg.input_dim, rng);
      NoGradGuard ng;
      const Tensor before = encode(x, cfg, params, nullptr, false, nullptr);
      const Tensor y = nudged(x, j, [&] { return rng.normal() * 10.0; });
      const Tensor after = encode(y, cfg, params, nullptr, false, nullptr);
      for (std::size_t t = 0; t < j; ++t)
        for (std::size_t c = 0; c < cfg.model_dim; ++c)
          if (before.at(t, c) != after.at(t, c)) ++violations;
    }
  }
  return {violations == 0 && trials >= 100,
          std::to_string(trials) + " trials, " + std::to_string(violations) + " earlier activations changed"};
}

Outcome receptive() {
  EncoderConfig cfg = desk_audio(AttentionMask{2, 1});
  cfg.num_layers = 3;
  const EncoderParams params = EncoderParams::init(cfg, Rng(9));
  Rng rng(10);
  const Tensor x = random_features(16, cfg.input_dim, rng);
  NoGradGuard ng;
  const Tensor base = encode(x, cfg, params, nullptr, false, nullptr);
  auto moved = [&](std::size_t input) {
    const Tensor y = nudged(x, input, [] { return 1.0; });
    const Tensor out = encode(y, cfg, params, nullptr, false, nullptr);
    for (std::size_t c = 0; c < cfg.model_dim; ++c)
      if (out.at(7, c) != base.at(7, c)) return true;
    return false;
  };
  const bool sees10 = moved(10), sees11 = moved(11);
  const auto rf2 = receptive_field(18, AttentionMask{std::nullopt, 2}, 30.0);
  const auto rf6 = receptive_field(18, AttentionMask{std::nullopt, 6}, 30.0);
  const bool ok = sees10 && !sees11 && rf2.future_latency_ms && *rf2.future_latency_ms == 1080.0 &&
                  rf6.future_latency_ms && *rf6.future_latency_ms == 3240.0;
  std::ostringstream os;
  os << "output 7 " << (sees10 ? "sees" : "misses") << " input 10, " << (sees11 ? "sees" : "misses")
     << " input 11; look-ahead " << rf2.future_latency_ms.value_or(-1) << " ms and "
     << rf6.future_latency_ms.value_or(-1) << " ms";
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 6: streaming.

Outcome streaming() {
  const auto t0 = Clock::now();
  RunConfig rc = default_run_config();
  rc.task.size = 24;
  const Dataset ds = gen_synthetic(rc.task, "stream");
  // Concatenate utterances so the window fills and the steady state is long.
  std::vector<Tensor> inputs;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> v;
    for (std::size_t i = 0; i < 8; ++i) {
      const auto f = ds.utterances[k * 8 + i].features.values();
      v.insert(v.end(), f.begin(), f.end());
    }
    const std::size_t rows = v.size() / rc.feature_dim;
    inputs.emplace_back(Shape{rows, rc.feature_dim}, std::move(v));
  }
  std::size_t cases = 0, failures = 0;
  double worst = 0.0;
  std::ostringstream bad;
  for (const auto& [left, right] : std::vector<std::pair<std::size_t, std::size_t>>{{10, 0}, {10, 2}, {2, 0}}) {
    for (std::size_t label_left : {2, 20}) {
      rc.mask = {left, right, label_left};
      rc.resolve();
      const Model m = Model::init(rc.model, 100 + cases);
      for (const Tensor& x : inputs) {
        const auto r = streaming_check(m, x);
        worst = std::max(worst, r.max_activation_diff);
        if (!r.transcripts_equal || !(r.max_activation_diff <= 1e-9) || !r.constant_work) {
          ++failures;
          bad << " (" << left << "," << right << "," << label_left << ")";
        }
      }
      ++cases;
    }
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 60.0,
          std::to_string(cases) + " mask settings x " + std::to_string(inputs.size()) + " inputs, " +
              std::to_string(failures) + " mismatches" + bad.str() + ", max activation diff " +
              fmt("%.2g", worst) + ", " + fmt("%.1f s", secs)};
}

// ---------------------------------------------------------------------------
// 7: schedule.

Outcome schedule() {
  const ScheduleConfig s;
  const std::vector<std::pair<std::size_t, double>> want{{0, 0.0}, {4000, 2.5e-4}, {30000, 2.5e-4}, {200000, 2.5e-6}};
  bool ok = true;
  std::ostringstream os;
  for (const auto& [step, lr] : want) {
    const double got = lr_at(step, s);
    const double rel = lr == 0.0 ? std::abs(got) : std::abs(got - lr) / lr;
    ok = ok && rel <= 1e-12;
    os << step << "->" << got << " ";
  }
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 8-10: trained models on the synthetic task.

struct Variant {
  const char* name;
  MaskConfig mask;
};

const Variant kFull{"full", {std::nullopt, std::nullopt, std::nullopt}};
const Variant kCausal{"(10,0,2)", {10, 0, 2}};
const Variant kLookahead{"(10,2,2)", {10, 2, 2}};
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

struct Trained {
  Checkpoint checkpoint;
  double train_seconds = 0.0;
  double test_error = 0.0;
};

class Lab {
 public:
  Lab() {
    base_ = default_run_config();
    train_ = gen_synthetic(base_.task, "train");
    SyntheticTaskConfig t = base_.task;
    t.size = 300;
    dev_ = gen_synthetic(t, "dev");
    t.size = 1000;
    test_ = gen_synthetic(t, "test");
  }

  const Trained& get(const Variant& v, std::uint64_t seed) {
    const std::string key = std::string(v.name) + "/" + std::to_string(seed);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    RunConfig rc = base_;
    rc.seed = seed;
    rc.mask = v.mask;
    rc.resolve();
    Trained t;
    const auto t0 = Clock::now();
    t.checkpoint = {train_model(rc, train_), rc.frontend};
    t.train_seconds = seconds_since(t0);
    t.test_error = evaluate(t.checkpoint, test_, DecodeRequest{}).total.rate();
    std::cerr << "  trained " << key << " in " << fmt("%.1f s", t.train_seconds) << ", test error "
              << fmt("%.4f", t.test_error) << "\n";
    return cache_.emplace(key, std::move(t)).first->second;
  }

  const Dataset& train() const { return train_; }
  const Dataset& dev() const { return dev_; }
  const Dataset& test() const { return test_; }
  std::size_t vocab() const { return base_.model.vocab_size; }

 private:
  RunConfig base_;
  Dataset train_, dev_, test_;
  std::map<std::string, Trained> cache_;
};

Outcome convergence(Lab& lab) {
  const Trained& full = lab.get(kFull, kSeeds[0]);
  const Trained& causal = lab.get(kCausal, kSeeds[0]);
  const bool ok = full.train_seconds < 900.0 && causal.train_seconds < 900.0 && full.test_error < 0.05 &&
                  causal.test_error < 0.10 && full.test_error <= causal.test_error;
  return {ok, "seed " + std::to_string(kSeeds[0]) + ": full " + fmt("%.2f%%", 100 * full.test_error) + " (" +
                  fmt("%.0f s", full.train_seconds) + "), (10,0,2) " + fmt("%.2f%%", 100 * causal.test_error) +
                  " (" + fmt("%.0f s", causal.train_seconds) + ")"};
}

Outcome lookahead(Lab& lab) {
  double full = 0.0, causal = 0.0, ahead = 0.0;
  bool every_seed = true;
  std::ostringstream os;
  for (auto seed : kSeeds) {
    const double f = lab.get(kFull, seed).test_error;
    const double c = lab.get(kCausal, seed).test_error;
    const double a = lab.get(kLookahead, seed).test_error;
    every_seed = every_seed && f <= a && a <= c;
    full += f;
    causal += c;
    ahead += a;
    os << "seed " << seed << " full/(10,2,2)/(10,0,2): " << fmt("%.2f", 100 * f) << " / " << fmt("%.2f", 100 * a) << " / "
       << fmt("%.2f", 100 * c) << "; ";
  }
  const double n = static_cast<double>(kSeeds.size());
  full /= n;
  causal /= n;
  ahead /= n;
  os << "mean full " << fmt("%.2f%%", 100 * full) << " <= (10,2,2) " << fmt("%.2f%%", 100 * ahead)
     << " <= (10,0,2) " << fmt("%.2f%%", 100 * causal);
  return {every_seed && full <= ahead && ahead <= causal, os.str()};
}

Outcome fusion(Lab& lab) {
  const auto seqs = label_sequences(lab.train());
  const BigramLM lm = BigramLM::train(seqs, lab.vocab());
  const std::vector<double> weights{0.1, 0.2, 0.3, 0.5, 0.8};
  const std::vector<double> bonuses{0.0, 0.5, 1.0};
  std::size_t wins = 0;
  std::ostringstream os;
  for (auto seed : kSeeds) {
    const Checkpoint& ck = lab.get(kFull, seed).checkpoint;
    const auto tuned = tune_fusion(ck, lab.dev(), lm, 4, weights, bonuses);
    DecodeRequest plain;
    plain.mode = DecodeMode::kBeam;
    plain.beam_width = 4;
    DecodeRequest fused = plain;
    fused.fusion = {tuned.lm_weight, tuned.length_bonus, &lm};
    const double off = evaluate(ck, lab.test(), plain).total.rate();
    const double on = evaluate(ck, lab.test(), fused).total.rate();
    if (on <= off) ++wins;
    os << "seed " << seed << ": lambda " << tuned.lm_weight << " beta " << tuned.length_bonus << ", "
       << fmt("%.2f%%", 100 * off) << " -> " << fmt("%.2f%%", 100 * on) << "; ";
  }
  os << wins << "/" << kSeeds.size() << " not worse";
  return {wins >= 2, os.str()};
}

// ---------------------------------------------------------------------------
// 11: determinism and round trips.

std::string checkpoint_bytes(const Model& m, const FrontendConfig& fe) {
  std::ostringstream os;
  save_checkpoint(os, m, fe);
  return os.str();
}

Outcome determinism() {
  RunConfig rc = default_run_config();
  rc.task.size = 64;
  rc.train.total_steps = 30;
  rc.schedule = {2e-3, 5, 10, 30, 1e-4};
  rc.model.audio.dropout_ratio = 0.1;
  rc.train.weight_noise_sigma = 0.01;
  rc.train.weight_noise_start = 10;
  rc.frontend.augment_enabled = true;
  rc.frontend.time_mask_width = 2;
  rc.frontend.time_mask_count = 1;
  rc.frontend.freq_mask_width = 2;
  rc.frontend.freq_mask_count = 1;
  rc.resolve();
  const Dataset ds = gen_synthetic(rc.task, "train");
  const std::string a = checkpoint_bytes(train_model(rc, ds), rc.frontend);
  const std::string b = checkpoint_bytes(train_model(rc, ds), rc.frontend);

  std::istringstream is(a);
  const Checkpoint back = load_checkpoint(is);
  const std::string c = checkpoint_bytes(back.model, back.frontend);

  std::ostringstream ds_out;
  write_dataset(ds_out, ds);
  std::istringstream ds_in(ds_out.str());
  const Dataset ds2 = read_dataset(ds_in);
  bool exact = ds2.vocab_size == ds.vocab_size && ds2.utterances.size() == ds.utterances.size();
  for (std::size_t i = 0; exact && i < ds.utterances.size(); ++i) {
    const auto& u = ds.utterances[i];
    const auto& v = ds2.utterances[i];
    exact = u.id == v.id && u.labels == v.labels && u.features.shape() == v.features.shape();
    for (std::size_t k = 0; exact && k < u.features.numel(); ++k) exact = u.features[k] == v.features[k];
  }
  std::ostringstream ds_again;
  write_dataset(ds_again, ds2);
  exact = exact && ds_again.str() == ds_out.str();

  std::ostringstream os;
  os << "same-seed checkpoints " << (a == b ? "identical" : "differ") << " (" << a.size() << " bytes), save/load/save "
     << (a == c ? "identical" : "differs") << ", dataset round trip " << (exact ? "exact" : "inexact");
  return {a == b && a == c && exact, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));

  // Built on first use so the quick criteria can run alone.
  auto need_lab = []() -> Lab& {
    static Lab lab;
    return lab;
  };

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle},
      {"uniform-grid closed form", uniform_grid},
      {"end-to-end gradient", model_gradient},
      {"causality", causality},
      {"receptive field and latency", receptive},
      {"streaming equivalence", streaming},
      {"learning-rate schedule", schedule},
      {"toy-task convergence", [&] { return convergence(need_lab()); }},
      {"look-ahead ordering", [&] { return lookahead(need_lab()); }},
      {"shallow fusion", [&] { return fusion(need_lab()); }},
      {"determinism and round trips", determinism},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << criteria[i].first << ": " << o.detail
              << " [" << fmt("%.1f s", seconds_since(t0)) << "]" << std::endl;
  }
  std::cout << (failed ? "acceptance: " + std::to_string(failed) + " failed" : std::string("acceptance: all passed"))
            << std::endl;
  return failed ? 1 : 0;
}
