#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ecgdk/dsp.h"

namespace ecgdk {

struct RPeakTrain {
  std::vector<std::size_t> indices;  // strictly increasing sample positions
  double fs = 0.0;
};

inline constexpr std::size_t kHrvFeatureCount = 7;

// File and model order: mean, std, entropy, RMSSD, nRMSSD, MeanAD, MedianAD.
inline constexpr std::array<std::string_view, kHrvFeatureCount> kHrvFeatureNames{
    "mean_rr", "std_rr", "shannon_entropy", "rmssd", "nrmssd", "mean_ad", "median_ad"};

inline constexpr std::size_t kEntropyBins = 8;

struct HrvFeatures {
  double mean_rr = 0.0;          // s
  double std_rr = 0.0;           // s, population form (1/N)
  double shannon_entropy = 0.0;  // nats over an 8-bin equal-width histogram of the RR values
  double rmssd = 0.0;            // s
  double nrmssd = 0.0;           // rmssd / mean_rr
  double mean_ad = 0.0;          // s
  double median_ad = 0.0;        // s

  std::array<double, kHrvFeatureCount> to_array() const;
  static HrvFeatures from_array(std::span<const double> values);
};

// Pan-Tompkins: 5-15 Hz band-pass, five-point derivative, squaring, 150 ms moving-window
// integration, then adaptive signal/noise thresholds with a 200 ms refractory period, T-wave
// rejection and search-back. Fiducials are moved to the largest deflection of the input signal
// within +-50 ms. Returns an empty train for fs < 50 or signals shorter than 2 s.
RPeakTrain detect_r_peaks(std::span<const double> samples, double fs);

struct RrIntervals {
  std::vector<double> seconds;
  bool insufficient_beats = false;  // fewer than two peaks
};

RrIntervals rr_intervals(const RPeakTrain& train);

// Throws ContractError("insufficient RR intervals") for fewer than two intervals.
HrvFeatures hrv_features(std::span<const double> rr);

// detect -> intervals -> features on a 100 Hz segment. nullopt marks the segment unusable.
std::optional<HrvFeatures> features_for_segment(std::span<const double> samples, double fs = kTargetFs);
std::optional<HrvFeatures> features_for_segment(const Segment& segment);

}  // namespace ecgdk
