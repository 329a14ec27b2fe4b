#include <sstream>

#include <gtest/gtest.h>

#include "tt/tasks.hpp"

using namespace tt;

namespace {

std::string bytes_of(const Dataset& ds) {
  std::ostringstream os;
  write_dataset(os, ds);
  return os.str();
}

Dataset from_bytes(const std::string& s) {
  std::istringstream is(s);
  return read_dataset(is);
}

}  // namespace

TEST(Wer, Examples) {
  const std::vector<std::string> abc{"a", "b", "c"}, axc{"a", "x", "c"};
  EXPECT_EQ(wer(abc, abc), 0.0);
  EXPECT_DOUBLE_EQ(wer(abc, axc), 1.0 / 3.0);
  const std::vector<std::string> a{"a"}, none;
  EXPECT_EQ(wer(a, none), 1.0);
  EXPECT_THROW(wer(none, a), std::invalid_argument);
}

TEST(Wer, EditDistanceCases) {
  using V = std::vector<std::size_t>;
  auto ed = [](const V& r, const V& h) { return edit_distance(std::span<const std::size_t>(r), std::span<const std::size_t>(h)); };
  EXPECT_EQ(ed({1, 2, 3}, {1, 2, 3, 4}), 1u);
  EXPECT_EQ(ed({1, 2, 3}, {2, 3}), 1u);
  EXPECT_EQ(ed({1, 2, 3}, {3, 2, 1}), 2u);
  EXPECT_EQ(ed({}, {1, 2}), 2u);
  EXPECT_EQ(ed({1, 2, 3, 4}, {}), 4u);
}

TEST(Wer, TriangleBoundOnRandomSequences) {
  Rng rng(3);
  auto draw = [&] {
    std::vector<std::size_t> v(rng.uniform_int(1, 8));
    for (auto& x : v) x = rng.uniform_int(1, 4);
    return v;
  };
  for (int i = 0; i < 300; ++i) {
    const auto a = draw(), b = draw(), c = draw();
    auto ed = [](const auto& r, const auto& h) {
      return edit_distance(std::span<const std::size_t>(r), std::span<const std::size_t>(h));
    };
    EXPECT_LE(ed(a, c), ed(a, b) + ed(b, c));
    EXPECT_EQ(ed(a, b), ed(b, a));
    EXPECT_EQ(ed(a, a), 0u);
  }
}

TEST(ErrorCount, CorpusRateIsPooled) {
  ErrorCount total;
  total += count_errors({1, 2, 3}, {1, 2});
  total += count_errors({1}, {2});
  EXPECT_EQ(total.edits, 2u);
  EXPECT_EQ(total.ref_words, 4u);
  EXPECT_DOUBLE_EQ(total.rate(), 0.5);
}

TEST(Synthetic, NoiselessSingleFramesAreExactTemplates) {
  SyntheticTaskConfig c;
  c.noise = 0.0;
  c.min_frames_per_label = c.max_frames_per_label = 1;
  c.size = 50;
  const Dataset ds = gen_synthetic(c);
  const auto templates = symbol_templates(c);
  for (const auto& u : ds.utterances) {
    ASSERT_EQ(u.features.rows(), u.labels.size());
    for (std::size_t t = 0; t < u.labels.size(); ++t)
      for (std::size_t j = 0; j < c.feature_dim; ++j)
        EXPECT_EQ(u.features.at(t, j), templates[u.labels[t] - 1][j]);
    EXPECT_EQ(nearest_template_decode(u.features, templates), u.labels);
  }
}

TEST(Synthetic, NoiselessRunsDecodeExactly) {
  SyntheticTaskConfig c;
  c.noise = 0.0;
  c.size = 100;
  const Dataset ds = gen_synthetic(c, "dev");
  const auto templates = symbol_templates(c);
  ErrorCount e;
  for (const auto& u : ds.utterances) e += count_errors(u.labels, nearest_template_decode(u.features, templates));
  EXPECT_EQ(e.edits, 0u);
}

TEST(Synthetic, LabelLengthsAndIdsStayInRange) {
  SyntheticTaskConfig c;
  c.min_labels = 3;
  c.max_labels = 5;
  c.size = 300;
  const Dataset ds = gen_synthetic(c);
  std::set<std::size_t> lengths;
  for (const auto& u : ds.utterances) {
    lengths.insert(u.labels.size());
    for (std::size_t i = 0; i < u.labels.size(); ++i) {
      EXPECT_GE(u.labels[i], 1u);
      EXPECT_LT(u.labels[i], c.vocab_size());
      if (i) {
        EXPECT_NE(u.labels[i], u.labels[i - 1]);
      }
    }
    EXPECT_GE(u.features.rows(), u.labels.size() * c.min_frames_per_label);
    EXPECT_LE(u.features.rows(), u.labels.size() * c.max_frames_per_label);
  }
  EXPECT_EQ(lengths, (std::set<std::size_t>{3, 4, 5}));
}

TEST(Synthetic, DeterministicBytesAndIndependentSplits) {
  SyntheticTaskConfig c;
  c.size = 30;
  EXPECT_EQ(bytes_of(gen_synthetic(c)), bytes_of(gen_synthetic(c)));
  EXPECT_NE(bytes_of(gen_synthetic(c, "train")), bytes_of(gen_synthetic(c, "test")));
  SyntheticTaskConfig other = c;
  other.seed = 2;
  EXPECT_NE(bytes_of(gen_synthetic(c)), bytes_of(gen_synthetic(other)));
}

TEST(Synthetic, TransitionsExcludeRepeats) {
  SyntheticTaskConfig c;
  const auto p = label_transitions(c);
  for (std::size_t prev = 0; prev < c.vocab_size(); ++prev) {
    double z = 0.0;
    for (std::size_t s = 1; s < c.vocab_size(); ++s) z += p[prev][s];
    EXPECT_NEAR(z, 1.0, 1e-12);
    if (prev) {
      EXPECT_EQ(p[prev][prev], 0.0);
    }
  }
}

TEST(Synthetic, ConfigValidation) {
  SyntheticTaskConfig c;
  c.symbols = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.min_labels = 4;
  c.max_labels = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.noise = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(DatasetFile, RoundTripIsExact) {
  SyntheticTaskConfig c;
  c.size = 25;
  const Dataset ds = gen_synthetic(c);
  const std::string bytes = bytes_of(ds);
  const Dataset back = from_bytes(bytes);
  ASSERT_EQ(back.utterances.size(), ds.utterances.size());
  EXPECT_EQ(back.vocab_size, ds.vocab_size);
  for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
    const auto &a = ds.utterances[i], &b = back.utterances[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.labels, b.labels);
    ASSERT_EQ(a.features.shape(), b.features.shape());
    for (std::size_t k = 0; k < a.features.numel(); ++k) EXPECT_EQ(a.features[k], b.features[k]);
  }
  EXPECT_EQ(bytes_of(back), bytes);
}

TEST(DatasetFile, ByteLayout) {
  Dataset ds;
  ds.vocab_size = 3;
  ds.utterances.push_back({"u", Tensor(Shape{1, 1}, {1.0}), {2}});
  const std::string b = bytes_of(ds);
  const std::string want = std::string("TTDS") + std::string("\x01\x00\x00\x00", 4) +
                           std::string("\x03\0\0\0\0\0\0\0", 8) + std::string("\x01\0\0\0\0\0\0\0", 8) +
                           std::string("\x01\0\0\0\0\0\0\0", 8) + "u" +
                           std::string("\x01\0\0\0\0\0\0\0", 8) + std::string("\x01\0\0\0\0\0\0\0", 8) +
                           std::string("\0\0\0\0\0\0\xf0\x3f", 8) + std::string("\x01\0\0\0\0\0\0\0", 8) +
                           std::string("\x02\0\0\0", 4);
  EXPECT_EQ(b, want);
}

TEST(DatasetFile, EmptyDatasetRoundTrips) {
  Dataset ds;
  ds.vocab_size = 6;
  const Dataset back = from_bytes(bytes_of(ds));
  EXPECT_TRUE(back.utterances.empty());
  EXPECT_EQ(back.vocab_size, 6u);
}

TEST(DatasetFile, CorruptionIsReported) {
  SyntheticTaskConfig c;
  c.size = 3;
  const std::string good = bytes_of(gen_synthetic(c));
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(from_bytes(bad_magic), FormatError);
  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(from_bytes(bad_version), FormatError);
  EXPECT_THROW(from_bytes(good.substr(0, good.size() - 3)), FormatError);
  EXPECT_THROW(from_bytes(""), FormatError);
  // Declare a vocabulary too small for the stored labels.
  std::string small_vocab = good;
  small_vocab[8] = 2;
  EXPECT_THROW(from_bytes(small_vocab), FormatError);
}
