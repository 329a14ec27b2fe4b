// Synthetic alignment tasks, the on-disk dataset container, and error rates.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tt/rng.hpp"
#include "tt/tensor.hpp"
#include "tt/transducer.hpp"

namespace tt {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Utterance {
  std::string id;
  Tensor features;  // [T x d]
  std::vector<std::size_t> labels;
};

struct Dataset {
  std::size_t vocab_size = 0;  // including blank
  std::vector<Utterance> utterances;
};

// Labels follow a seeded first-order Markov chain over the non-blank symbols
// (no symbol repeats itself); each label is rendered as a run of frames of
// its fixed template vector plus Gaussian noise.
struct SyntheticTaskConfig {
  std::size_t symbols = 5;  // non-blank vocabulary
  std::size_t min_labels = 3, max_labels = 6;
  std::size_t min_frames_per_label = 2, max_frames_per_label = 4;
  std::size_t feature_dim = 8;
  double noise = 0.5;
  std::size_t size = 100;
  std::uint64_t seed = 1;
  // Concentration of the label transition rows; small values make the
  // chain predictable, large values approach uniform.
  double transition_concentration = 0.3;

  void validate() const {
    if (symbols < 2) throw std::invalid_argument("synthetic task needs at least 2 symbols");
    if (min_labels == 0 || min_labels > max_labels) throw std::invalid_argument("bad label length range");
    if (min_frames_per_label == 0 || min_frames_per_label > max_frames_per_label) {
      throw std::invalid_argument("bad frames-per-label range");
    }
    if (feature_dim == 0) throw std::invalid_argument("feature_dim must be positive");
    if (!(noise >= 0.0)) throw std::invalid_argument("noise must be >= 0");
    if (!(transition_concentration > 0.0)) throw std::invalid_argument("transition_concentration must be > 0");
  }
  std::size_t vocab_size() const { return symbols + 1; }
};

// Per-symbol template vectors (row s-1 for symbol s), drawn once from a unit
// Gaussian stream tied to the task seed.
inline std::vector<std::vector<double>> symbol_templates(const SyntheticTaskConfig& cfg) {
  Rng rng = Rng(cfg.seed).substream("templates");
  std::vector<std::vector<double>> t(cfg.symbols, std::vector<double>(cfg.feature_dim));
  for (auto& row : t)
    for (double& x : row) x = rng.normal();
  return t;
}

// Row-stochastic transition matrix over [start, symbols...] -> symbols.
// Row 0 is the start context; the diagonal is excluded.
inline std::vector<std::vector<double>> label_transitions(const SyntheticTaskConfig& cfg) {
  Rng rng = Rng(cfg.seed).substream("transitions");
  const std::size_t V = cfg.vocab_size();
  std::vector<std::vector<double>> p(V, std::vector<double>(V, 0.0));
  for (std::size_t prev = 0; prev < V; ++prev) {
    double total = 0.0;
    for (std::size_t s = 1; s < V; ++s) {
      if (s == prev) continue;
      // u^(1/c): small c leaves a few dominant successors per row.
      const double w = std::pow(rng.uniform() + 1e-12, 1.0 / cfg.transition_concentration);
      p[prev][s] = w;
      total += w;
    }
    for (std::size_t s = 1; s < V; ++s) p[prev][s] /= total;
  }
  return p;
}

// `split` names an independent utterance stream over the same templates and
// transitions (e.g. "train", "dev", "test").
inline Dataset gen_synthetic(const SyntheticTaskConfig& cfg, std::string_view split = "train") {
  cfg.validate();
  const auto templates = symbol_templates(cfg);
  const auto trans = label_transitions(cfg);
  Rng rng = Rng(cfg.seed).substream("split").substream(split);
  Dataset ds;
  ds.vocab_size = cfg.vocab_size();
  ds.utterances.reserve(cfg.size);
  for (std::size_t n = 0; n < cfg.size; ++n) {
    Rng r = rng.substream(n);
    Utterance utt;
    utt.id = std::string(split) + "-" + std::to_string(n);
    const std::size_t U = r.uniform_int(cfg.min_labels, cfg.max_labels);
    std::size_t prev = kBlank;
    for (std::size_t u = 0; u < U; ++u) {
      const double x = r.uniform();
      double acc = 0.0;
      std::size_t next = 0;
      for (std::size_t s = 1; s < cfg.vocab_size(); ++s) {
        if (trans[prev][s] == 0.0) continue;
        next = s;
        acc += trans[prev][s];
        if (x < acc) break;
      }
      utt.labels.push_back(next);
      prev = next;
    }
    std::vector<double> feats;
    std::size_t T = 0;
    for (std::size_t s : utt.labels) {
      const std::size_t k = r.uniform_int(cfg.min_frames_per_label, cfg.max_frames_per_label);
      for (std::size_t f = 0; f < k; ++f, ++T)
        for (std::size_t j = 0; j < cfg.feature_dim; ++j)
          feats.push_back(templates[s - 1][j] + (cfg.noise > 0.0 ? r.normal(0.0, cfg.noise) : 0.0));
    }
    utt.features = Tensor(Shape{T, cfg.feature_dim}, std::move(feats));
    ds.utterances.push_back(std::move(utt));
  }
  return ds;
}

// Label sequences of a dataset, in order.
inline std::vector<std::vector<std::size_t>> label_sequences(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(ds.utterances.size());
  for (const auto& u : ds.utterances) out.push_back(u.labels);
  return out;
}

// ---------------------------------------------------------------------------
// Error rates.

// Minimum number of substitutions, insertions and deletions turning ref into hyp.
template <class T>
std::size_t edit_distance(std::span<const T> ref, std::span<const T> hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

template <class T>
double wer(std::span<const T> ref, std::span<const T> hyp) {
  if (ref.empty()) throw std::invalid_argument("wer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

template <class T>
double wer(const std::vector<T>& ref, const std::vector<T>& hyp) {
  return wer(std::span<const T>(ref), std::span<const T>(hyp));
}

// Corpus-level rate: total edits over total reference length.
struct ErrorCount {
  std::size_t edits = 0;
  std::size_t ref_words = 0;
  double rate() const {
    return ref_words ? static_cast<double>(edits) / static_cast<double>(ref_words) : 0.0;
  }
  ErrorCount& operator+=(const ErrorCount& o) {
    edits += o.edits;
    ref_words += o.ref_words;
    return *this;
  }
};

inline ErrorCount count_errors(const std::vector<std::size_t>& ref, const std::vector<std::size_t>& hyp) {
  return {edit_distance(std::span<const std::size_t>(ref), std::span<const std::size_t>(hyp)), ref.size()};
}

// Non-neural reference decoder for the synthetic task: nearest template per
// frame, then collapse runs.
inline std::vector<std::size_t> nearest_template_decode(const Tensor& features,
                                                        const std::vector<std::vector<double>>& templates) {
  std::vector<std::size_t> out;
  const std::size_t d = features.cols();
  for (std::size_t t = 0; t < features.rows(); ++t) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < templates.size(); ++s) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = features.at(t, j) - templates[s][j];
        dist += diff * diff;
      }
      if (dist < best_d) {
        best_d = dist;
        best = s + 1;
      }
    }
    if (out.empty() || out.back() != best) out.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary little-endian I/O shared by the dataset and checkpoint formats.

namespace io {

static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}
inline void put_string(std::ostream& os, std::string_view s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& is, char* dst, std::size_t n, const char* what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError(std::string("truncated file while reading ") + what);
  }
}
inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_exact(is, reinterpret_cast<char*>(b), 4, what);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline std::uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  read_exact(is, reinterpret_cast<char*>(b), 8, what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline double get_f64(std::istream& is, const char* what) {
  const std::uint64_t v = get_u64(is, what);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}
// Lengths are checked against `limit` before allocating.
inline std::string get_string(std::istream& is, const char* what, std::uint64_t limit = 1u << 30) {
  const std::uint64_t n = get_u64(is, what);
  if (n > limit) throw FormatError(std::string("implausible length for ") + what);
  std::string s(n, '\0');
  read_exact(is, s.data(), n, what);
  return s;
}
inline void expect_magic(std::istream& is, std::string_view magic) {
  char buf[4] = {};
  read_exact(is, buf, 4, "magic");
  if (std::string_view(buf, 4) != magic) {
    throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
  }
}

}  // namespace io

inline constexpr std::uint32_t kDatasetVersion = 1;

// TTDS container: magic, u32 version, u64 vocab size, u64 utterance count,
// then per utterance {u64 id length + UTF-8 id, u64 T, u64 d, T*d f64
// row-major features, u64 label count, u32 labels}. All little-endian.
inline void write_dataset(std::ostream& os, const Dataset& ds) {
  os.write("TTDS", 4);
  io::put_u32(os, kDatasetVersion);
  io::put_u64(os, ds.vocab_size);
  io::put_u64(os, ds.utterances.size());
  for (const auto& u : ds.utterances) {
    io::put_string(os, u.id);
    io::put_u64(os, u.features.rows());
    io::put_u64(os, u.features.cols());
    for (double v : u.features.values()) io::put_f64(os, v);
    io::put_u64(os, u.labels.size());
    for (std::size_t l : u.labels) io::put_u32(os, static_cast<std::uint32_t>(l));
  }
}

inline Dataset read_dataset(std::istream& is) {
  io::expect_magic(is, "TTDS");
  const std::uint32_t version = io::get_u32(is, "version");
  if (version != kDatasetVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  ds.vocab_size = io::get_u64(is, "vocab size");
  const std::uint64_t count = io::get_u64(is, "utterance count");
  for (std::uint64_t n = 0; n < count; ++n) {
    Utterance u;
    u.id = io::get_string(is, "utterance id");
    const std::uint64_t T = io::get_u64(is, "frame count");
    const std::uint64_t d = io::get_u64(is, "feature dim");
    if (T == 0 || d == 0 || T > (1u << 24) || d > (1u << 20)) {
      throw FormatError("implausible feature shape in utterance " + u.id);
    }
    std::vector<double> feats(T * d);
    for (double& v : feats) v = io::get_f64(is, "features");
    u.features = Tensor(Shape{T, d}, std::move(feats));
    const std::uint64_t L = io::get_u64(is, "label count");
    if (L > (1u << 24)) throw FormatError("implausible label count in utterance " + u.id);
    for (std::uint64_t i = 0; i < L; ++i) {
      const std::uint32_t l = io::get_u32(is, "labels");
      if (l == kBlank || l >= ds.vocab_size) {
        throw FormatError("label " + std::to_string(l) + " in utterance " + u.id +
                          " is outside the declared vocabulary of " + std::to_string(ds.vocab_size));
      }
      u.labels.push_back(l);
    }
    ds.utterances.push_back(std::move(u));
  }
  return ds;
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_dataset(os, ds);
  if (!os) throw std::runtime_error("write failed for " + path);
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset " + path);
  return read_dataset(is);
}

}  // namespace tt
