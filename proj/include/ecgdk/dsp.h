#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgdk/common.h"
#include "ecgdk/ingest.h"

namespace ecgdk {

inline constexpr double kTargetFs = 100.0;
inline constexpr std::size_t kSegmentLength = 1000;  // 10 s at kTargetFs

// One normalized model input window.
struct Segment {
  std::vector<double> samples;
  std::optional<ClassLabel> label;
  std::string domain_id;
  std::string source_record;
  std::size_t start_index = 0;  // offset in the 100 Hz resampled record

  // Length 1000, every value finite and within [-1, 1].
  void validate() const;
};

struct FilterSpec {
  double low_cut_hz = 0.5;
  double high_cut_hz = 40.0;
  int order = 2;

  // 0 < low < high < fs/2 and order == 2; throws ContractError otherwise.
  void validate(double fs) const;
};

// Second-order section with a0 normalized to 1.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

// Bilinear-transform Butterworth band-pass with prewarped edges. `order` is the low-pass prototype
// order, so the cascade has `order` sections. Unit gain at the geometric band centre.
std::vector<Biquad> design_butterworth_bandpass(double fs, double low_hz, double high_hz, int order);

// Single causal pass, transposed direct form II.
std::vector<double> sosfilt(std::span<const Biquad> sections, std::span<const double> x);

// Forward-backward filtering with odd-extension padding and steady-state initial conditions.
std::vector<double> sosfiltfilt(std::span<const Biquad> sections, std::span<const double> x);

// Magnitude response of the cascade at `freq_hz`.
double frequency_response(std::span<const Biquad> sections, double fs, double freq_hz);

// Running median of odd `window` with reflection padding at the edges. Requires window <= len.
std::vector<double> running_median(std::span<const double> x, std::size_t window);

// Nearest odd sample count to `seconds * fs` (ties round up).
std::size_t odd_window(double seconds, double fs);

struct BaselineResult {
  std::vector<double> samples;
  bool passed_through = false;  // input shorter than the long window; returned unchanged
};

// x - median_600ms(median_200ms(x)).
BaselineResult median_baseline_remove(std::span<const double> x, double fs);

// Zero-phase band-pass using the designed cascade.
std::vector<double> butterworth_bandpass(std::span<const double> x, double fs, const FilterSpec& spec);

// Linear interpolation on the uniform time grid; output length round(len * fs_out / fs_in).
// Downsampling does no anti-alias filtering of its own: callers run the band-pass first, which
// limits content to high_cut_hz < fs_out / 2.
std::vector<double> resample_to(std::span<const double> x, double fs_in, double fs_out);

struct RawWindow {
  std::vector<double> samples;
  std::size_t start_index = 0;
};

// Consecutive non-overlapping 1000-sample windows; the remainder is dropped.
std::vector<RawWindow> segment_windows(std::span<const double> x, double fs = kTargetFs);

// x -> 2 (x - min) / (max - min) - 1; a constant window maps to zeros.
std::vector<double> normalize_unit(std::span<const double> x);

// median baseline -> Butterworth -> resample to 100 Hz -> 10 s windows -> [-1, 1].
std::vector<Segment> preprocess_record(const EcgRecord& record, const FilterSpec& spec);

}  // namespace ecgdk
