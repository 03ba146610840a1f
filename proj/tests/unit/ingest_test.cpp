#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "ecgdk/ingest.h"
#include "support/scratch.h"

using namespace ecgdk;
using ecgdk::testing::scratch_dir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

double cv_of_peaks(const std::vector<std::size_t>& peaks, double fs) {
  std::vector<double> rr;
  for (std::size_t i = 1; i < peaks.size(); ++i) rr.push_back(static_cast<double>(peaks[i] - peaks[i - 1]) / fs);
  const double m = std::accumulate(rr.begin(), rr.end(), 0.0) / static_cast<double>(rr.size());
  double v = 0;
  for (double x : rr) v += (x - m) * (x - m);
  return std::sqrt(v / static_cast<double>(rr.size())) / m;
}

}  // namespace

TEST_CASE("csv load keeps length and rate") {
  auto dir = scratch_dir("ingest_csv");
  std::string text = "# fs=200 label=AF domain=mitdb record=r1\n";
  for (int i = 0; i < 2000; ++i) text += std::to_string(std::sin(i * 0.01)) + "\n";
  write_text(dir / "a.csv", text);
  auto recs = load_records(dir / "a.csv");
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].samples.size() == 2000);
  CHECK(recs[0].fs == 200.0);
  CHECK(recs[0].label == ClassLabel::AF);
  CHECK(recs[0].domain_id == "mitdb");
  CHECK(recs[0].record_id == "r1");
}

TEST_CASE("csv holds several records") {
  auto dir = scratch_dir("ingest_multi");
  write_text(dir / "m.csv", "# fs=100 label=- domain=d record=a\n1\n2\n# fs=50 label=PVC domain=d record=b\n3\n");
  auto recs = load_records(dir / "m.csv");
  REQUIRE(recs.size() == 2);
  CHECK_FALSE(recs[0].label.has_value());
  CHECK(recs[1].fs == 50.0);
  CHECK(recs[1].samples == std::vector<double>{3.0});
}

TEST_CASE("empty file reports no records") {
  auto dir = scratch_dir("ingest_empty");
  write_text(dir / "e.csv", "");
  CHECK_THROWS_WITH_AS(load_records(dir / "e.csv"), doctest::Contains("no records"), ParseError);
  write_text(dir / "e.jsonl", "");
  CHECK_THROWS_WITH_AS(load_records(dir / "e.jsonl"), doctest::Contains("no records"), ParseError);
}

TEST_CASE("bad sample names the line") {
  auto dir = scratch_dir("ingest_bad");
  write_text(dir / "b.csv", "# fs=100 label=Normal domain=d record=r\n0.5\nabc\n");
  try {
    load_records(dir / "b.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(e.field() == "sample");
    CHECK(std::string(e.what()).find("b.csv") != std::string::npos);
  }
}

TEST_CASE("non-positive fs is rejected") {
  auto dir = scratch_dir("ingest_fs");
  write_text(dir / "z.csv", "# fs=0 label=Normal domain=d record=r\n1\n");
  CHECK_THROWS_AS(load_records(dir / "z.csv"), ParseError);
  write_text(dir / "z.jsonl", R"({"fs": -5, "label": "AF", "domain": "d", "record": "r", "samples": [1]})" "\n");
  CHECK_THROWS_AS(load_records(dir / "z.jsonl"), ParseError);
}

TEST_CASE("unknown extension is a contract error") {
  CHECK_THROWS_AS(format_from_path("x.txt"), ContractError);
  CHECK(format_from_path("x.json") == RecordFormat::Jsonl);
}

TEST_CASE("save and load round trip exactly") {
  auto dir = scratch_dir("ingest_rt");
  SyntheticSpec spec;
  spec.cls = ClassLabel::PVC;
  spec.pvc_rate = 0.2;
  spec.noise_snr_db = 20.0;
  spec.seed = 9;
  auto rec = generate_synthetic(spec).record;
  rec.samples[3] = 0.1 + 0.2;  // not representable in few digits
  std::vector<EcgRecord> recs{rec, rec};
  recs[1].label.reset();
  recs[1].record_id = "second";
  for (auto fmt : {RecordFormat::Csv, RecordFormat::Jsonl}) {
    auto p = dir / (fmt == RecordFormat::Csv ? "r.csv" : "r.jsonl");
    save_records(p, recs, fmt);
    auto back = load_records(p);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(back[i].samples == recs[i].samples);
      CHECK(back[i].fs == recs[i].fs);
      CHECK(back[i].label == recs[i].label);
      CHECK(back[i].record_id == recs[i].record_id);
    }
  }
}

TEST_CASE("normal synthetic at 60 bpm without jitter") {
  SyntheticSpec spec;
  spec.duration_s = 10;
  spec.fs = 100;
  spec.mean_hr_bpm = 60;
  spec.rr_jitter = 0;
  spec.seed = 1;
  auto s = generate_synthetic(spec);
  CHECK(s.record.samples.size() == 1000);
  REQUIRE(s.r_peaks.size() >= 9);
  std::size_t lo = 1000, hi = 0;
  for (std::size_t i = 1; i < s.r_peaks.size(); ++i) {
    const std::size_t d = s.r_peaks[i] - s.r_peaks[i - 1];
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  CHECK(lo >= 99);
  CHECK(hi <= 101);
  CHECK(hi - lo <= 1);
}

TEST_CASE("pvc with zero rate equals normal") {
  SyntheticSpec n;
  n.seed = 33;
  n.rr_jitter = 0.04;
  SyntheticSpec p = n;
  p.cls = ClassLabel::PVC;
  p.pvc_rate = 0.0;
  CHECK(generate_synthetic(n).record.samples == generate_synthetic(p).record.samples);
}

TEST_CASE("af rhythm is irregular") {
  SyntheticSpec spec;
  spec.cls = ClassLabel::AF;
  spec.mean_hr_bpm = 80;
  spec.seed = 7;
  auto s = generate_synthetic(spec);
  CHECK(cv_of_peaks(s.r_peaks, spec.fs) >= 0.15);
}

TEST_CASE("pvc beats come early") {
  SyntheticSpec spec;
  spec.cls = ClassLabel::PVC;
  spec.pvc_rate = 0.25;
  spec.duration_s = 30;
  spec.seed = 5;
  auto s = generate_synthetic(spec);
  REQUIRE(s.premature.size() == s.r_peaks.size());
  const double base = 60.0 / spec.mean_hr_bpm * spec.fs;
  std::size_t early = 0;
  for (std::size_t i = 1; i < s.r_peaks.size(); ++i)
    if (s.premature[i]) {
      ++early;
      CHECK(static_cast<double>(s.r_peaks[i] - s.r_peaks[i - 1]) < 0.85 * base);
    }
  CHECK(early >= 1);
}

TEST_CASE("synthetic generation is deterministic with valid peaks") {
  for (auto cls : kAllClasses)
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      SyntheticSpec spec;
      spec.cls = cls;
      spec.seed = seed;
      spec.pvc_rate = 0.2;
      spec.noise_snr_db = 15.0;
      spec.baseline_wander_amp = 0.1;
      auto a = generate_synthetic(spec), b = generate_synthetic(spec);
      CHECK(a.record.samples == b.record.samples);
      CHECK(a.r_peaks == b.r_peaks);
      for (std::size_t i = 0; i < a.r_peaks.size(); ++i) {
        CHECK(a.r_peaks[i] < a.record.samples.size());
        if (i > 0) CHECK(a.r_peaks[i] > a.r_peaks[i - 1]);
      }
    }
}

TEST_CASE("spec validation") {
  SyntheticSpec spec;
  spec.mean_hr_bpm = 300;
  CHECK_THROWS_AS(spec.validate(), ContractError);
  spec = {};
  spec.pvc_rate = 1.5;
  CHECK_THROWS_AS(generate_synthetic(spec), ContractError);
  spec = {};
  spec.duration_s = 0;
  CHECK_THROWS_AS(spec.validate(), ContractError);
}

TEST_CASE("identity domain variant") {
  SyntheticSpec spec;
  spec.seed = 4;
  auto rec = generate_synthetic(spec).record;
  DomainShift shift;
  shift.resample_fs = rec.fs;
  auto out = make_domain_variant(rec, shift);
  REQUIRE(out.samples.size() == rec.samples.size());
  for (std::size_t i = 0; i < rec.samples.size(); ++i) CHECK(std::fabs(out.samples[i] - rec.samples[i]) <= 1e-12);
  CHECK(out.domain_id == rec.domain_id + "-shifted");
}

TEST_CASE("domain variant gain doubles") {
  SyntheticSpec spec;
  spec.seed = 4;
  auto rec = generate_synthetic(spec).record;
  DomainShift shift;
  shift.gain = 2.0;
  shift.resample_fs = rec.fs;
  auto out = make_domain_variant(rec, shift);
  for (std::size_t i = 0; i < rec.samples.size(); ++i) CHECK(out.samples[i] == doctest::Approx(2 * rec.samples[i]));
  shift.gain = 0.0;
  CHECK_THROWS_AS(make_domain_variant(rec, shift), ContractError);
}

TEST_CASE("domain variant noise at 0 dB has unit variance") {
  EcgRecord rec;
  rec.fs = 100;
  rec.samples.assign(20000, 0.0);
  for (std::size_t i = 0; i < rec.samples.size(); ++i) rec.samples[i] = (i % 2 == 0) ? 1.0 : -1.0;
  DomainShift shift;
  shift.resample_fs = 100;
  shift.snr_db = 0.0;
  shift.seed = 12;
  auto out = make_domain_variant(rec, shift);
  double v = 0;
  for (std::size_t i = 0; i < rec.samples.size(); ++i) v += std::pow(out.samples[i] - rec.samples[i], 2);
  v /= static_cast<double>(rec.samples.size());
  CHECK(v == doctest::Approx(1.0).epsilon(0.05));
}
