#include "ecgdk/dsp.h"

#include <algorithm>
#include <cmath>
#include <array>
#include <complex>
#include <numbers>

namespace ecgdk {

namespace {

using cdouble = std::complex<double>;

std::complex<double> bilinear(cdouble s, double k) { return (k + s) / (k - s); }

Biquad section_from_poles(cdouble z1, cdouble z2) {
  Biquad q;
  q.b0 = 1.0;
  q.b1 = 0.0;
  q.b2 = -1.0;
  q.a1 = -(z1 + z2).real();
  q.a2 = (z1 * z2).real();
  return q;
}

// Steady-state TDF-II state for a unit constant input.
std::array<double, 2> unit_step_state(const Biquad& q) {
  const double dc = (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
  return {dc - q.b0, q.b2 - q.a2 * dc};
}

double dc_gain(const Biquad& q) { return (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2); }

std::vector<double> filter_with_state(std::span<const Biquad> sections, std::span<const double> x, double x0) {
  std::vector<double> y(x.begin(), x.end());
  double scale = x0;
  for (const Biquad& q : sections) {
    auto [z1, z2] = unit_step_state(q);
    z1 *= scale;
    z2 *= scale;
    for (double& v : y) {
      const double in = v;
      const double out = q.b0 * in + z1;
      z1 = q.b1 * in - q.a1 * out + z2;
      z2 = q.b2 * in - q.a2 * out;
      v = out;
    }
    scale *= dc_gain(q);
  }
  return y;
}

}  // namespace

void Segment::validate() const {
  if (samples.size() != kSegmentLength)
    throw ContractError("Segment: expected 1000 samples, got " + std::to_string(samples.size()));
  for (double v : samples)
    if (!std::isfinite(v) || v < -1.0 || v > 1.0) throw ContractError("Segment: sample outside [-1, 1]");
}

void FilterSpec::validate(double fs) const {
  if (order != 2) throw ContractError("FilterSpec: order must be 2");
  if (!(low_cut_hz > 0.0)) throw ContractError("FilterSpec: low_cut_hz must be > 0");
  if (!(low_cut_hz < high_cut_hz)) throw ContractError("FilterSpec: low_cut_hz must be below high_cut_hz");
  if (!(high_cut_hz < fs / 2.0))
    throw ContractError("FilterSpec: high_cut_hz " + std::to_string(high_cut_hz) + " Hz must be below Nyquist (" +
                        std::to_string(fs / 2.0) + " Hz)");
}

std::vector<Biquad> design_butterworth_bandpass(double fs, double low_hz, double high_hz, int order) {
  if (order < 1) throw ContractError("Butterworth order must be >= 1");
  if (!(fs > 0.0) || !(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < fs / 2.0))
    throw ContractError("Butterworth band edges must satisfy 0 < low < high < fs/2");

  const double k = 2.0 * fs;
  const double w1 = k * std::tan(std::numbers::pi * low_hz / fs);
  const double w2 = k * std::tan(std::numbers::pi * high_hz / fs);
  const double centre_sq = w1 * w2;
  const double bandwidth = w2 - w1;

  std::vector<Biquad> sections;
  for (int m = 0; m < order; ++m) {
    const cdouble p = std::polar(1.0, std::numbers::pi * (2.0 * m + order + 1.0) / (2.0 * order));
    if (p.imag() < -1e-12) continue;  // the conjugate partner is handled with its mirror
    const cdouble c = p * (bandwidth / 2.0);
    const cdouble d = std::sqrt(c * c - centre_sq);
    const cdouble s1 = c + d;
    const cdouble s2 = c - d;
    if (std::abs(p.imag()) <= 1e-12) {
      sections.push_back(section_from_poles(bilinear(s1, k), bilinear(s2, k)));
    } else {
      sections.push_back(section_from_poles(bilinear(s1, k), bilinear(std::conj(s1), k)));
      sections.push_back(section_from_poles(bilinear(s2, k), bilinear(std::conj(s2), k)));
    }
  }

  const double centre_hz = std::atan(std::sqrt(centre_sq) / k) * fs / std::numbers::pi;
  const double gain = frequency_response(sections, fs, centre_hz);
  sections.front().b0 /= gain;
  sections.front().b1 /= gain;
  sections.front().b2 /= gain;
  return sections;
}

double frequency_response(std::span<const Biquad> sections, double fs, double freq_hz) {
  const cdouble zinv = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / fs);
  cdouble h = 1.0;
  for (const Biquad& q : sections) {
    const cdouble num = q.b0 + zinv * (q.b1 + zinv * q.b2);
    const cdouble den = 1.0 + zinv * (q.a1 + zinv * q.a2);
    h *= num / den;
  }
  return std::abs(h);
}

std::vector<double> sosfilt(std::span<const Biquad> sections, std::span<const double> x) {
  return filter_with_state(sections, x, 0.0);
}

std::vector<double> sosfiltfilt(std::span<const Biquad> sections, std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  const std::size_t pad = std::min<std::size_t>(n - 1, 3 * (2 * sections.size() + 1));

  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  std::vector<double> y = filter_with_state(sections, ext, ext.front());
  std::reverse(y.begin(), y.end());
  y = filter_with_state(sections, y, y.front());
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(pad), y.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

std::size_t odd_window(double seconds, double fs) {
  // 0.6 * 100 is 59.99999999999999 in binary; snap before the tie test
  const double v = std::round(seconds * fs * 1e9) / 1e9;
  const double lower = 2.0 * std::floor((v - 1.0) / 2.0) + 1.0;
  const double upper = lower + 2.0;
  const double pick = (v - lower < upper - v) ? lower : upper;
  return static_cast<std::size_t>(std::max(1.0, pick));
}

std::vector<double> running_median(std::span<const double> x, std::size_t window) {
  const std::size_t n = x.size();
  if (window % 2 == 0) throw ContractError("running_median: window must be odd");
  if (window > n) throw ContractError("running_median: window longer than input");
  const auto half = static_cast<long long>(window / 2);
  const auto nn = static_cast<long long>(n);
  auto at = [&](long long i) {
    if (i < 0) i = -i;
    if (i >= nn) i = 2 * (nn - 1) - i;
    return x[static_cast<std::size_t>(i)];
  };

  std::vector<double> sorted;
  sorted.reserve(window);
  for (long long i = -half; i <= half; ++i) sorted.push_back(at(i));
  std::sort(sorted.begin(), sorted.end());

  std::vector<double> out(n);
  for (long long i = 0; i < nn; ++i) {
    out[static_cast<std::size_t>(i)] = sorted[static_cast<std::size_t>(half)];
    if (i + 1 == nn) break;
    const double leaving = at(i - half);
    sorted.erase(std::lower_bound(sorted.begin(), sorted.end(), leaving));
    const double entering = at(i + half + 1);
    sorted.insert(std::upper_bound(sorted.begin(), sorted.end(), entering), entering);
  }
  return out;
}

BaselineResult median_baseline_remove(std::span<const double> x, double fs) {
  if (!(fs > 0.0)) throw ContractError("median_baseline_remove: fs must be > 0");
  if (x.size() < 3) throw ContractError("median_baseline_remove: need at least 3 samples");
  const std::size_t short_window = odd_window(0.2, fs);
  const std::size_t long_window = odd_window(0.6, fs);
  BaselineResult result;
  if (x.size() < long_window || x.size() < short_window) {
    result.samples.assign(x.begin(), x.end());
    result.passed_through = true;
    return result;
  }
  const std::vector<double> baseline = running_median(running_median(x, short_window), long_window);
  result.samples.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) result.samples[i] = x[i] - baseline[i];
  return result;
}

std::vector<double> butterworth_bandpass(std::span<const double> x, double fs, const FilterSpec& spec) {
  spec.validate(fs);
  const auto sections = design_butterworth_bandpass(fs, spec.low_cut_hz, spec.high_cut_hz, spec.order);
  return sosfiltfilt(sections, x);
}

std::vector<double> resample_to(std::span<const double> x, double fs_in, double fs_out) {
  if (!(fs_in > 0.0) || !(fs_out > 0.0)) throw ContractError("resample_to: rates must be > 0");
  if (fs_in == fs_out || x.empty()) return {x.begin(), x.end()};
  const auto m = static_cast<std::size_t>(std::llround(static_cast<double>(x.size()) * fs_out / fs_in));
  std::vector<double> out(m);
  const std::size_t last = x.size() - 1;
  for (std::size_t j = 0; j < m; ++j) {
    const double pos = static_cast<double>(j) * fs_in / fs_out;
    const auto i = static_cast<std::size_t>(pos);
    if (i >= last) {
      out[j] = x[last];
    } else {
      const double frac = pos - static_cast<double>(i);
      out[j] = x[i] + frac * (x[i + 1] - x[i]);
    }
  }
  return out;
}

std::vector<RawWindow> segment_windows(std::span<const double> x, double fs) {
  if (fs != kTargetFs) throw ContractError("segment_windows: expects 100 Hz input");
  std::vector<RawWindow> windows;
  for (std::size_t start = 0; start + kSegmentLength <= x.size(); start += kSegmentLength) {
    RawWindow w;
    w.samples.assign(x.begin() + static_cast<std::ptrdiff_t>(start),
                     x.begin() + static_cast<std::ptrdiff_t>(start + kSegmentLength));
    w.start_index = start;
    windows.push_back(std::move(w));
  }
  return windows;
}

std::vector<double> normalize_unit(std::span<const double> x) {
  std::vector<double> out(x.size(), 0.0);
  if (x.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  if (range == 0.0) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(2.0 * (x[i] - lo) / range - 1.0, -1.0, 1.0);
  return out;
}

std::vector<Segment> preprocess_record(const EcgRecord& record, const FilterSpec& spec) {
  record.validate();
  spec.validate(record.fs);
  BaselineResult base = median_baseline_remove(record.samples, record.fs);
  if (base.passed_through)
    log_warning("record '" + record.record_id + "' shorter than the baseline median window; left unfiltered");
  const std::vector<double> filtered = butterworth_bandpass(base.samples, record.fs, spec);
  const std::vector<double> resampled = resample_to(filtered, record.fs, kTargetFs);

  std::vector<Segment> segments;
  for (RawWindow& w : segment_windows(resampled, kTargetFs)) {
    Segment s;
    s.samples = normalize_unit(w.samples);
    s.label = record.label;
    s.domain_id = record.domain_id;
    s.source_record = record.record_id;
    s.start_index = w.start_index;
    segments.push_back(std::move(s));
  }
  return segments;
}

}  // namespace ecgdk
