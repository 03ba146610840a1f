#include "ecgdk/hrv.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ecgdk {

namespace {

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Candidate {
  std::size_t index;
  double value;
};

// Adaptive-threshold state of the integrated-signal detector.
class ThresholdTracker {
 public:
  ThresholdTracker(double signal_peak, double noise_peak) : spki_(signal_peak), npki_(noise_peak) {}

  void signal(double v) { spki_ = 0.125 * v + 0.875 * spki_; }
  void searchback_signal(double v) { spki_ = 0.25 * v + 0.75 * spki_; }
  void noise(double v) { npki_ = 0.125 * v + 0.875 * npki_; }

  double primary() const { return npki_ + 0.25 * (spki_ - npki_); }
  double secondary() const { return 0.5 * primary(); }

 private:
  double spki_;
  double npki_;
};

}  // namespace

std::array<double, kHrvFeatureCount> HrvFeatures::to_array() const {
  return {mean_rr, std_rr, shannon_entropy, rmssd, nrmssd, mean_ad, median_ad};
}

HrvFeatures HrvFeatures::from_array(std::span<const double> v) {
  if (v.size() != kHrvFeatureCount) throw ContractError("HrvFeatures: expected 7 values");
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

RPeakTrain detect_r_peaks(std::span<const double> x, double fs) {
  RPeakTrain train{{}, fs};
  const std::size_t n = x.size();
  if (!(fs >= 50.0) || static_cast<double>(n) < 2.0 * fs) return train;

  const auto sections = design_butterworth_bandpass(fs, 5.0, 15.0, 2);
  const std::vector<double> band = sosfiltfilt(sections, x);

  std::vector<double> slope(n, 0.0);
  for (std::size_t i = 2; i + 2 < n; ++i)
    slope[i] = (2.0 * band[i + 1] + band[i + 2] - band[i - 2] - 2.0 * band[i - 1]) * fs / 8.0;

  const auto width = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.150 * fs)));
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + slope[i] * slope[i];
  std::vector<double> integrated(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= width / 2 ? i - width / 2 : 0;
    const std::size_t hi = std::min(n, lo + width);
    integrated[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(width);
  }

  std::vector<Candidate> candidates;
  for (std::size_t i = 1; i + 1 < n; ++i)
    if (integrated[i] > integrated[i - 1] && integrated[i] >= integrated[i + 1] && integrated[i] > 0.0)
      candidates.push_back({i, integrated[i]});
  if (candidates.empty()) return train;

  const auto learn = std::min(n, static_cast<std::size_t>(2.0 * fs));
  const double learn_max = *std::max_element(integrated.begin(), integrated.begin() + static_cast<std::ptrdiff_t>(learn));
  const double learn_mean =
      std::accumulate(integrated.begin(), integrated.begin() + static_cast<std::ptrdiff_t>(learn), 0.0) /
      static_cast<double>(learn);
  if (!(learn_max > 0.0)) return train;
  ThresholdTracker thresholds(0.25 * learn_max, 0.5 * learn_mean);

  const auto refractory = static_cast<std::size_t>(std::lround(0.200 * fs));
  const auto t_wave_window = static_cast<std::size_t>(std::lround(0.360 * fs));

  auto max_slope = [&](std::size_t at) {
    const std::size_t lo = at >= width ? at - width : 0;
    const std::size_t hi = std::min(n - 1, at + width);
    double m = 0.0;
    for (std::size_t i = lo; i <= hi; ++i) m = std::max(m, std::abs(slope[i]));
    return m;
  };

  std::vector<std::size_t> qrs;     // candidate positions in `candidates`
  std::vector<std::size_t> rr_hist;  // recent intervals in samples
  auto rr_average = [&]() {
    const std::size_t k = std::min<std::size_t>(8, rr_hist.size());
    double s = 0.0;
    for (std::size_t i = rr_hist.size() - k; i < rr_hist.size(); ++i) s += static_cast<double>(rr_hist[i]);
    return s / static_cast<double>(k);
  };
  auto accept = [&](std::size_t c) {
    if (!qrs.empty()) rr_hist.push_back(candidates[c].index - candidates[qrs.back()].index);
    qrs.push_back(c);
  };
  // Largest noise-classified candidate strictly between the last QRS (+ refractory) and `end`.
  auto search_back = [&](std::size_t end_index) {
    if (qrs.empty() || rr_hist.empty()) return;
    const std::size_t last = candidates[qrs.back()].index;
    if (static_cast<double>(end_index - last) <= 1.66 * rr_average()) return;
    std::size_t best = candidates.size();
    for (std::size_t c = qrs.back() + 1; c < candidates.size() && candidates[c].index < end_index; ++c) {
      if (candidates[c].index < last + refractory) continue;
      if (candidates[c].value <= thresholds.secondary()) continue;
      if (best == candidates.size() || candidates[c].value > candidates[best].value) best = c;
    }
    if (best != candidates.size()) {
      thresholds.searchback_signal(candidates[best].value);
      accept(best);
    }
  };

  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const Candidate cand = candidates[c];
    search_back(cand.index);
    if (!qrs.empty() && cand.index - candidates[qrs.back()].index < refractory) {
      // Same complex seen twice by the integrator: keep the stronger maximum.
      if (cand.value > candidates[qrs.back()].value) {
        qrs.pop_back();
        if (!qrs.empty()) rr_hist.pop_back();
        accept(c);
      }
      continue;
    }
    if (cand.value > thresholds.primary()) {
      if (!qrs.empty() && cand.index - candidates[qrs.back()].index < t_wave_window &&
          max_slope(cand.index) < 0.5 * max_slope(candidates[qrs.back()].index)) {
        thresholds.noise(cand.value);
        continue;
      }
      thresholds.signal(cand.value);
      accept(c);
    } else {
      thresholds.noise(cand.value);
    }
  }
  search_back(n);

  const auto reach = static_cast<std::size_t>(std::lround(0.050 * fs));
  const auto context = static_cast<std::size_t>(std::lround(0.200 * fs));
  std::vector<std::size_t> refined;
  std::vector<double> strength;
  for (std::size_t c : qrs) {
    const std::size_t at = candidates[c].index;
    const std::size_t ctx_lo = at >= context ? at - context : 0;
    const std::size_t ctx_hi = std::min(n - 1, at + context);
    const double base = median_of({x.begin() + static_cast<std::ptrdiff_t>(ctx_lo),
                                   x.begin() + static_cast<std::ptrdiff_t>(ctx_hi + 1)});
    const std::size_t lo = at >= reach ? at - reach : 0;
    const std::size_t hi = std::min(n - 1, at + reach);
    std::size_t best = lo;
    for (std::size_t i = lo; i <= hi; ++i)
      if (std::abs(x[i] - base) > std::abs(x[best] - base)) best = i;
    const double dev = std::abs(x[best] - base);
    if (!refined.empty() && best < refined.back() + refractory) {
      if (dev > strength.back()) {
        refined.back() = best;
        strength.back() = dev;
      }
      continue;
    }
    refined.push_back(best);
    strength.push_back(dev);
  }
  train.indices = std::move(refined);
  return train;
}

RrIntervals rr_intervals(const RPeakTrain& train) {
  RrIntervals out;
  if (train.indices.size() < 2) {
    out.insufficient_beats = true;
    return out;
  }
  out.seconds.reserve(train.indices.size() - 1);
  for (std::size_t i = 1; i < train.indices.size(); ++i)
    out.seconds.push_back(static_cast<double>(train.indices[i] - train.indices[i - 1]) / train.fs);
  return out;
}

HrvFeatures hrv_features(std::span<const double> rr) {
  const std::size_t n = rr.size();
  if (n < 2) throw ContractError("insufficient RR intervals");
  const double count = static_cast<double>(n);

  HrvFeatures f;
  f.mean_rr = std::accumulate(rr.begin(), rr.end(), 0.0) / count;

  double sq = 0.0;
  double abs_dev = 0.0;
  for (double v : rr) {
    sq += (v - f.mean_rr) * (v - f.mean_rr);
    abs_dev += std::abs(v - f.mean_rr);
  }
  f.std_rr = std::sqrt(sq / count);
  f.mean_ad = abs_dev / count;

  double succ = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) succ += (rr[i + 1] - rr[i]) * (rr[i + 1] - rr[i]);
  f.rmssd = std::sqrt(succ / (count - 1.0));
  f.nrmssd = f.rmssd / f.mean_rr;

  const double med = median_of({rr.begin(), rr.end()});
  std::vector<double> deviations(n);
  for (std::size_t i = 0; i < n; ++i) deviations[i] = std::abs(rr[i] - med);
  f.median_ad = median_of(std::move(deviations));

  const auto [lo_it, hi_it] = std::minmax_element(rr.begin(), rr.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  std::array<std::size_t, kEntropyBins> bins{};
  for (double v : rr) {
    std::size_t b = 0;
    if (range > 0.0)
      b = std::min<std::size_t>(kEntropyBins - 1,
                                static_cast<std::size_t>((v - lo) / range * static_cast<double>(kEntropyBins)));
    ++bins[b];
  }
  double h = 0.0;
  for (std::size_t c : bins) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / count;
    h -= p * std::log(p);
  }
  f.shannon_entropy = h;
  return f;
}

std::optional<HrvFeatures> features_for_segment(std::span<const double> samples, double fs) {
  const RrIntervals rr = rr_intervals(detect_r_peaks(samples, fs));
  if (rr.seconds.size() < 2) return std::nullopt;
  return hrv_features(rr.seconds);
}

std::optional<HrvFeatures> features_for_segment(const Segment& segment) {
  return features_for_segment(segment.samples, kTargetFs);
}

}  // namespace ecgdk
