#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ecgdk/detail/parallel.h"
#include "ecgdk/dsp.h"
#include "ecgdk/hrv.h"

namespace ecgdk {

// A segment with its HRV features; no features means the segment is unusable (too few beats).
struct Example {
  Segment segment;
  std::optional<HrvFeatures> features;

  bool usable() const { return features.has_value(); }
};

// Segment JSONL: one object per line with keys label (name or null), domain, record, start, samples.
void save_segments(const std::filesystem::path& path, std::span<const Segment> segments);
std::vector<Segment> load_segments(const std::filesystem::path& path);

// Feature JSONL: the segment keys plus "features" (7 values in kHrvFeatureNames order, or null)
// and "usable".
void save_examples(const std::filesystem::path& path, std::span<const Example> examples);
std::vector<Example> load_examples(const std::filesystem::path& path);

// Runs features_for_segment over all segments on up to `jobs` threads; output order matches input.
std::vector<Example> extract_features(std::span<const Segment> segments, std::size_t jobs = 1);

}  // namespace ecgdk
