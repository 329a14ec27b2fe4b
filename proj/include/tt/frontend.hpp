// Feature pipeline: frame stacking with subsampling, and time/frequency
// masking for augmentation.

#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "tt/rng.hpp"
#include "tt/tensor.hpp"

namespace tt {

struct FrontendConfig {
  std::size_t stack = 1;
  std::size_t subsample = 1;
  std::size_t freq_mask_width = 0;  // F
  std::size_t freq_mask_count = 0;  // mF
  std::size_t time_mask_width = 0;  // T
  std::size_t time_mask_count = 0;  // mT
  bool augment_enabled = false;

  void validate() const {
    if (stack == 0) throw std::invalid_argument("frontend.stack must be at least 1");
    if (subsample == 0) throw std::invalid_argument("frontend.subsample must be at least 1");
  }
};

// Row i of the output concatenates input rows [i*subsample, i*subsample+stack),
// repeating the last input row past the end. Output has ceil(n/subsample) rows.
inline Tensor stack_subsample(const Tensor& frames, std::size_t stack, std::size_t subsample) {
  if (frames.rank() != 2 || frames.rows() == 0) {
    throw DimensionError("stack_subsample expects a non-empty [n x d] matrix, got " +
                         to_string(frames.shape()));
  }
  if (stack == 0 || subsample == 0) throw std::invalid_argument("stack and subsample must be >= 1");
  const std::size_t n = frames.rows(), d = frames.cols();
  const std::size_t m = (n + subsample - 1) / subsample;
  std::vector<double> out;
  out.reserve(m * stack * d);
  const auto v = frames.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t s = 0; s < stack; ++s) {
      const std::size_t src = std::min(i * subsample + s, n - 1);
      out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(src * d),
                 v.begin() + static_cast<std::ptrdiff_t>((src + 1) * d));
    }
  return Tensor(Shape{m, stack * d}, std::move(out));
}

// A zeroed band: channels [begin, end) for a frequency mask, rows for a time mask.
struct MaskBand {
  bool frequency;
  std::size_t begin;
  std::size_t end;
};

// The bands spec_augment would zero for a [rows x cols] input with this rng.
// Widths are uniform in [0, width] clamped to the axis; starts are uniform
// over the positions where the band fits.
inline std::vector<MaskBand> sample_mask_bands(std::size_t rows, std::size_t cols,
                                               const FrontendConfig& cfg, Rng rng) {
  std::vector<MaskBand> bands;
  auto draw = [&rng](std::size_t width, std::size_t extent, bool freq) {
    const std::size_t w = std::min<std::size_t>(rng.uniform_int(0, width), extent);
    const std::size_t start = rng.uniform_int(0, extent - w);
    return MaskBand{freq, start, start + w};
  };
  for (std::size_t i = 0; i < cfg.freq_mask_count; ++i) bands.push_back(draw(cfg.freq_mask_width, cols, true));
  for (std::size_t i = 0; i < cfg.time_mask_count; ++i) bands.push_back(draw(cfg.time_mask_width, rows, false));
  return bands;
}

inline Tensor spec_augment(const Tensor& features, const FrontendConfig& cfg, Rng rng) {
  if (!cfg.augment_enabled) return features;
  const std::size_t n = features.rows(), d = features.cols();
  std::vector<double> out(features.values().begin(), features.values().end());
  for (const auto& b : sample_mask_bands(n, d, cfg, rng)) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t pos = b.frequency ? j : i;
        if (pos >= b.begin && pos < b.end) out[i * d + j] = 0.0;
      }
  }
  return Tensor(features.shape(), std::move(out));
}

}  // namespace tt
