#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "ecgdk/dsp.h"
#include "ecgdk/rng.h"
#include "support/oracles.h"

using namespace ecgdk;
using ecgdk::testing::band_energy;
using ecgdk::testing::brute_median;
using ecgdk::testing::fitted_amplitude;

namespace {

std::vector<double> sine(std::size_t n, double fs, double f, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / fs);
  return x;
}

}  // namespace

TEST_CASE("baseline removal of a constant") {
  std::vector<double> x(500, 3.25);
  auto r = median_baseline_remove(x, 100);
  CHECK_FALSE(r.passed_through);
  for (double v : r.samples) CHECK(v == 0.0);
}

TEST_CASE("baseline removal passes short input through") {
  std::vector<double> x{1, 2, 3, 4, 5};
  auto r = median_baseline_remove(x, 100);
  CHECK(r.passed_through);
  CHECK(r.samples == x);
}

TEST_CASE("baseline removal suppresses slow drift and keeps impulses") {
  const double fs = 100;
  const std::size_t n = 6000;
  std::vector<double> spikes(n, 0.0);
  for (std::size_t i = 50; i < n; i += 100) spikes[i] = 1.0;
  auto drift = sine(n, fs, 0.2, 0.5);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = spikes[i] + drift[i];
  auto r = median_baseline_remove(x, fs);
  std::vector<double> residual(n);
  for (std::size_t i = 0; i < n; ++i) residual[i] = r.samples[i] - spikes[i];
  CHECK(band_energy(residual, fs, 0.0, 0.5) * 10 <= band_energy(drift, fs, 0.0, 0.5));
  for (std::size_t i = 50; i < n; i += 100) CHECK(std::fabs(r.samples[i] - 1.0) <= 0.05);
}

TEST_CASE("running median matches sorting") {
  Rng rng(3);
  std::vector<double> x(60);
  for (double& v : x) v = rng.normal();
  auto m = running_median(x, 7);
  REQUIRE(m.size() == x.size());
  for (std::size_t i = 3; i + 3 < x.size(); ++i)
    CHECK(m[i] == brute_median(std::vector<double>(x.begin() + static_cast<long>(i) - 3, x.begin() + static_cast<long>(i) + 4)));
  CHECK(odd_window(0.2, 100) == 21);
  CHECK(odd_window(0.6, 100) == 61);
  CHECK(odd_window(0.2, 128) % 2 == 1);
}

TEST_CASE("band-pass keeps 10 Hz and removes 0.05 Hz") {
  const double fs = 100;
  FilterSpec spec;
  auto pass = butterworth_bandpass(sine(4000, fs, 10), fs, spec);
  CHECK(fitted_amplitude(pass, fs, 10, 500, 3500) == doctest::Approx(1.0).epsilon(0.05));
  auto stop = butterworth_bandpass(sine(80000, fs, 0.05), fs, spec);
  CHECK(fitted_amplitude(stop, fs, 0.05, 0, 80000) <= 0.1);
  std::vector<double> zeros(300, 0.0);
  for (double v : butterworth_bandpass(zeros, fs, spec)) CHECK(v == 0.0);
}

TEST_CASE("band-pass design has unit centre gain") {
  auto sos = design_butterworth_bandpass(360, 0.5, 40, 2);
  CHECK(sos.size() == 2);
  CHECK(frequency_response(sos, 360, std::sqrt(0.5 * 40)) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(frequency_response(sos, 360, 0.5) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-3));
  CHECK(frequency_response(sos, 360, 40) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-3));
}

TEST_CASE("filter spec validation") {
  FilterSpec spec;
  spec.high_cut_hz = 50;
  CHECK_THROWS_AS(spec.validate(100), ContractError);
  std::vector<double> x(400, 1.0);
  CHECK_THROWS_AS(butterworth_bandpass(x, 100, spec), ContractError);
  spec = {};
  spec.order = 4;
  CHECK_THROWS_AS(spec.validate(250), ContractError);
  spec = {};
  spec.low_cut_hz = 0;
  CHECK_THROWS_AS(spec.validate(250), ContractError);
}

TEST_CASE("resampling lengths and accuracy") {
  std::vector<double> x(2000, 0.5);
  CHECK(resample_to(x, 200, 100).size() == 1000);
  auto s = sine(777, 250, 3);
  CHECK(resample_to(s, 250, 250) == s);
  auto hi = sine(5000, 500, 5);
  auto lo = resample_to(hi, 500, 100);
  REQUIRE(lo.size() == 1000);
  auto ref = sine(1000, 100, 5);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    sab += lo[i] * ref[i];
    saa += lo[i] * lo[i];
    sbb += ref[i] * ref[i];
  }
  CHECK(sab / std::sqrt(saa * sbb) >= 0.999);
}

TEST_CASE("segment windows") {
  CHECK(segment_windows(std::vector<double>(3500, 0.0)).size() == 3);
  CHECK(segment_windows(std::vector<double>(1000, 0.0)).size() == 1);
  CHECK(segment_windows(std::vector<double>(999, 0.0)).empty());
  auto w = segment_windows(std::vector<double>(2500, 0.0));
  REQUIRE(w.size() == 2);
  CHECK(w[1].start_index == 1000);
  CHECK(w[1].samples.size() == 1000);
}

TEST_CASE("normalize to unit range") {
  CHECK(normalize_unit(std::vector<double>{-2, 0, 2}) == std::vector<double>{-1, 0, 1});
  CHECK(normalize_unit(std::vector<double>{5, 5, 5}) == std::vector<double>{0, 0, 0});
  auto r = normalize_unit(std::vector<double>{0, 1, 3});
  CHECK(r[0] == -1.0);
  CHECK(r[1] == doctest::Approx(-1.0 / 3.0));
  CHECK(r[2] == 1.0);
}

TEST_CASE("preprocess a 40 s record") {
  SyntheticSpec spec;
  spec.duration_s = 40;
  spec.fs = 200;
  spec.seed = 2;
  spec.baseline_wander_amp = 0.3;
  spec.domain_id = "dom";
  auto rec = generate_synthetic(spec).record;
  auto segs = preprocess_record(rec, FilterSpec{});
  REQUIRE(segs.size() == 4);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    CHECK_NOTHROW(segs[i].validate());
    CHECK(segs[i].label == ClassLabel::Normal);
    CHECK(segs[i].domain_id == "dom");
    CHECK(segs[i].start_index == i * 1000);
  }
  auto again = preprocess_record(rec, FilterSpec{});
  for (std::size_t i = 0; i < segs.size(); ++i) CHECK(again[i].samples == segs[i].samples);
}

TEST_CASE("preprocess short and unlabeled records") {
  SyntheticSpec spec;
  spec.duration_s = 9;
  CHECK(preprocess_record(generate_synthetic(spec).record, FilterSpec{}).empty());
  spec.duration_s = 20;
  auto rec = generate_synthetic(spec).record;
  rec.label.reset();
  auto segs = preprocess_record(rec, FilterSpec{});
  REQUIRE(segs.size() == 2);
  CHECK_FALSE(segs[0].label.has_value());
}

TEST_CASE("segment validation") {
  Segment s;
  s.samples.assign(1000, 0.0);
  CHECK_NOTHROW(s.validate());
  s.samples[4] = 1.5;
  CHECK_THROWS_AS(s.validate(), ContractError);
  s.samples.assign(999, 0.0);
  CHECK_THROWS_AS(s.validate(), ContractError);
}
