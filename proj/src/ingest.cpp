#include "ecgdk/ingest.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "ecgdk/dsp.h"
#include "ecgdk/rng.h"

namespace ecgdk {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void check_record(const EcgRecord& r, const std::string& file, std::size_t line) {
  if (!(r.fs > 0.0) || !std::isfinite(r.fs)) throw ParseError(file, line, "fs", "sampling rate must be > 0");
}

EcgRecord parse_csv_header(std::string_view header, const std::string& file, std::size_t line) {
  EcgRecord rec;
  bool have_fs = false;
  header.remove_prefix(1);  // '#'
  std::istringstream tokens{std::string(header)};
  std::string token;
  while (tokens >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw ParseError(file, line, token, "expected key=value in header");
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    if (key == "fs") {
      if (!parse_double(value, rec.fs)) throw ParseError(file, line, "fs", "not a number: '" + value + "'");
      have_fs = true;
    } else if (key == "label") {
      try {
        rec.label = parse_label(value);
      } catch (const ContractError& e) {
        throw ParseError(file, line, "label", e.what());
      }
    } else if (key == "domain") {
      rec.domain_id = value;
    } else if (key == "record") {
      rec.record_id = value;
    }
  }
  if (!have_fs) throw ParseError(file, line, "fs", "missing from header");
  check_record(rec, file, line);
  return rec;
}

std::vector<EcgRecord> load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  const std::string file = path.string();
  if (!in) throw ParseError(file, 0, "path", "cannot open file");
  std::vector<EcgRecord> records;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string_view text = trim(raw);
    if (text.empty()) continue;
    if (text.front() == '#') {
      records.push_back(parse_csv_header(text, file, line));
      continue;
    }
    if (records.empty()) throw ParseError(file, line, "header", "sample before the '# fs=...' header line");
    double v = 0.0;
    if (!parse_double(text, v) || !std::isfinite(v))
      throw ParseError(file, line, "sample", "not a finite number: '" + std::string(text) + "'");
    records.back().samples.push_back(v);
  }
  if (records.empty()) throw ParseError(file, line, "file", "no records");
  for (const auto& r : records)
    if (r.samples.empty()) throw ParseError(file, line, "samples", "record '" + r.record_id + "' has no samples");
  return records;
}

std::vector<EcgRecord> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  const std::string file = path.string();
  if (!in) throw ParseError(file, 0, "path", "cannot open file");
  std::vector<EcgRecord> records;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (trim(raw).empty()) continue;
    json j;
    try {
      j = json::parse(raw);
    } catch (const json::parse_error& e) {
      throw ParseError(file, line, "json", e.what());
    }
    EcgRecord rec;
    if (!j.contains("fs") || !j["fs"].is_number()) throw ParseError(file, line, "fs", "missing or not a number");
    rec.fs = j["fs"].get<double>();
    check_record(rec, file, line);
    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_string()) throw ParseError(file, line, "label", "not a string");
      try {
        rec.label = parse_label(j["label"].get<std::string>());
      } catch (const ContractError& e) {
        throw ParseError(file, line, "label", e.what());
      }
    }
    if (j.contains("domain") && j["domain"].is_string()) rec.domain_id = j["domain"].get<std::string>();
    if (j.contains("record") && j["record"].is_string()) rec.record_id = j["record"].get<std::string>();
    if (!j.contains("samples") || !j["samples"].is_array())
      throw ParseError(file, line, "samples", "missing or not an array");
    const auto& arr = j["samples"];
    rec.samples.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (!arr[i].is_number())
        throw ParseError(file, line, "samples[" + std::to_string(i) + "]", "not a number");
      rec.samples.push_back(arr[i].get<double>());
    }
    if (rec.samples.empty()) throw ParseError(file, line, "samples", "empty");
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw ParseError(file, line, "file", "no records");
  return records;
}

// One beat's wave: Gaussian bump at `offset` seconds from the R time.
struct Wave {
  double offset;
  double amplitude;
  double width;
};

void render_beat(std::vector<double>& out, double fs, double t_r, std::span<const Wave> waves, double gain) {
  const auto n = static_cast<long long>(out.size());
  for (const Wave& w : waves) {
    if (w.amplitude == 0.0) continue;
    const double centre = t_r + w.offset;
    const double reach = 6.0 * w.width;
    const long long lo = std::max<long long>(0, static_cast<long long>(std::floor((centre - reach) * fs)));
    const long long hi = std::min<long long>(n - 1, static_cast<long long>(std::ceil((centre + reach) * fs)));
    for (long long i = lo; i <= hi; ++i) {
      const double dt = static_cast<double>(i) / fs - centre;
      out[static_cast<std::size_t>(i)] += gain * w.amplitude * std::exp(-0.5 * dt * dt / (w.width * w.width));
    }
  }
}

double draw_rr(Rng& rng, double mean_rr, double cv) {
  double rr = mean_rr;
  if (cv > 0.0) {
    const double sigma = std::sqrt(std::log1p(cv * cv));
    rr = mean_rr * std::exp(sigma * rng.normal() - 0.5 * sigma * sigma);
  } else {
    rng.normal();  // keep the stream aligned across jitter settings
  }
  return std::clamp(rr, 0.3, 2.0);
}

double coefficient_of_variation(std::span<const std::size_t> peaks) {
  if (peaks.size() < 3) return 0.0;
  double mean = 0.0;
  for (std::size_t i = 1; i < peaks.size(); ++i) mean += static_cast<double>(peaks[i] - peaks[i - 1]);
  mean /= static_cast<double>(peaks.size() - 1);
  double var = 0.0;
  for (std::size_t i = 1; i < peaks.size(); ++i) {
    const double d = static_cast<double>(peaks[i] - peaks[i - 1]) - mean;
    var += d * d;
  }
  var /= static_cast<double>(peaks.size() - 1);
  return std::sqrt(var) / mean;
}

struct Rhythm {
  std::vector<double> times;  // R times in seconds, may extend past both ends of the record
  std::vector<double> preceding_rr;
};

Rhythm draw_rhythm(Rng& rng, double mean_rr, double cv, double duration) {
  Rhythm r;
  double t = -rng.uniform(0.0, mean_rr);
  double prev_rr = mean_rr;
  while (t < duration + 0.6) {
    r.times.push_back(t);
    r.preceding_rr.push_back(prev_rr);
    prev_rr = draw_rr(rng, mean_rr, cv);
    t += prev_rr;
  }
  return r;
}

std::size_t sample_index(double t, double fs) { return static_cast<std::size_t>(std::llround(t * fs)); }

bool inside(double t, double fs, std::size_t n) {
  const double idx = std::round(t * fs);
  return idx >= 0.0 && idx < static_cast<double>(n);
}

}  // namespace

void EcgRecord::validate() const {
  if (samples.empty()) throw ContractError("EcgRecord '" + record_id + "': no samples");
  if (!(fs > 0.0) || !std::isfinite(fs)) throw ContractError("EcgRecord '" + record_id + "': fs must be > 0");
  for (double v : samples)
    if (!std::isfinite(v)) throw ContractError("EcgRecord '" + record_id + "': non-finite sample");
}

RecordFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return RecordFormat::Csv;
  if (ext == ".jsonl" || ext == ".json") return RecordFormat::Jsonl;
  throw ContractError("cannot infer record format from '" + path.string() + "' (use .csv or .jsonl)");
}

std::vector<EcgRecord> load_records(const std::filesystem::path& path, RecordFormat format) {
  return format == RecordFormat::Csv ? load_csv(path) : load_jsonl(path);
}

std::vector<EcgRecord> load_records(const std::filesystem::path& path) {
  return load_records(path, format_from_path(path));
}

void save_records(const std::filesystem::path& path, std::span<const EcgRecord> records, RecordFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const EcgRecord& r : records) {
    r.validate();
    const std::string label = r.label ? std::string(to_string(*r.label)) : "-";
    if (format == RecordFormat::Csv) {
      out << "# fs=" << format_double(r.fs) << " label=" << label << " domain=" << r.domain_id
          << " record=" << r.record_id << '\n';
      for (double v : r.samples) out << format_double(v) << '\n';
    } else {
      json j;
      j["fs"] = r.fs;
      j["label"] = r.label ? json(label) : json(nullptr);
      j["domain"] = r.domain_id;
      j["record"] = r.record_id;
      j["samples"] = r.samples;
      out << j.dump() << '\n';
    }
  }
}

void SyntheticSpec::validate() const {
  if (!(duration_s > 0.0)) throw ContractError("SyntheticSpec: duration_s must be > 0");
  if (!(fs > 0.0)) throw ContractError("SyntheticSpec: fs must be > 0");
  if (!(mean_hr_bpm >= 20.0 && mean_hr_bpm <= 240.0))
    throw ContractError("SyntheticSpec: mean_hr_bpm must lie in [20, 240]");
  if (!(pvc_rate >= 0.0 && pvc_rate <= 1.0)) throw ContractError("SyntheticSpec: pvc_rate must lie in [0, 1]");
  if (!(rr_jitter >= 0.0)) throw ContractError("SyntheticSpec: rr_jitter must be >= 0");
  if (!(morphology.qrs_width_scale > 0.0)) throw ContractError("SyntheticSpec: qrs_width_scale must be > 0");
  if (std::llround(duration_s * fs) < 1) throw ContractError("SyntheticSpec: record would have no samples");
}

SyntheticRecord generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.fs));
  const double mean_rr = 60.0 / spec.mean_hr_bpm;
  const bool is_af = spec.cls == ClassLabel::AF;
  const double cv = is_af ? std::max(spec.rr_jitter, 0.25) : spec.rr_jitter;

  Rng rhythm_rng(spec.seed, 1);
  Rng pvc_rng(spec.seed, 2);
  Rng beat_rng(spec.seed, 3);
  Rng fib_rng(spec.seed, 4);
  Rng wander_rng(spec.seed, 5);
  Rng noise_rng(spec.seed, 6);

  Rhythm rhythm = draw_rhythm(rhythm_rng, mean_rr, cv, spec.duration_s);
  if (is_af) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::vector<std::size_t> idx;
      for (double t : rhythm.times)
        if (inside(t, spec.fs, n)) idx.push_back(sample_index(t, spec.fs));
      if (idx.size() < 3 || coefficient_of_variation(idx) >= kAfMinRrCv) break;
      rhythm = draw_rhythm(rhythm_rng, mean_rr, cv, spec.duration_s);
    }
  }

  const std::size_t beats = rhythm.times.size();
  std::vector<bool> premature(beats, false);
  if (spec.cls == ClassLabel::PVC && spec.pvc_rate > 0.0) {
    auto eligible = [&](std::size_t i) {
      if (i == 0 || i + 1 >= beats || premature[i - 1]) return false;
      const double t = rhythm.times[i - 1] + 0.7 * (rhythm.times[i] - rhythm.times[i - 1]);
      return inside(t, spec.fs, n);
    };
    for (std::size_t i = 0; i < beats; ++i) {
      const double u = pvc_rng.uniform();
      if (u < spec.pvc_rate && eligible(i)) premature[i] = true;
    }
    if (std::none_of(premature.begin(), premature.end(), [](bool b) { return b; })) {
      std::vector<std::size_t> candidates;
      for (std::size_t i = 0; i < beats; ++i)
        if (eligible(i)) candidates.push_back(i);
      if (!candidates.empty()) premature[candidates[pvc_rng.index(candidates.size())]] = true;
    }
  }

  std::vector<double> times = rhythm.times;
  for (std::size_t i = 0; i < beats; ++i)
    if (premature[i]) times[i] = rhythm.times[i - 1] + 0.7 * (rhythm.times[i] - rhythm.times[i - 1]);

  const Morphology& m = spec.morphology;
  const double w = m.qrs_width_scale;
  std::vector<double> signal(n, 0.0);
  for (std::size_t i = 0; i < beats; ++i) {
    const double beat_gain = 1.0 + 0.03 * beat_rng.normal();
    const double rr_before = i > 0 ? times[i] - times[i - 1] : rhythm.preceding_rr[i];
    if (premature[i]) {
      const Wave waves[] = {
          {-0.05 * w, 0.15, 0.02 * w},
          {0.0, -1.1, 0.022 * w},
          {0.06 * w, 0.2, 0.02 * w},
          {0.32, 0.45 * m.t_wave_scale, 0.07},
      };
      render_beat(signal, spec.fs, times[i], waves, beat_gain);
    } else {
      const double t_offset = 0.25 * std::sqrt(std::clamp(rr_before, 0.3, 2.0));
      const Wave waves[] = {
          {-0.17, is_af ? 0.0 : 0.12 * m.p_wave_scale, 0.022},
          {-0.028 * w, -0.12, 0.009 * w},
          {0.0, 1.0, 0.011 * w},
          {0.03 * w, -0.25, 0.01 * w},
          {t_offset, 0.3 * m.t_wave_scale, 0.05},
      };
      render_beat(signal, spec.fs, times[i], waves, beat_gain);
    }
  }

  if (is_af) {
    const double freq = fib_rng.uniform(4.0, 9.0);
    const double phase = fib_rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t k = 0; k < n; ++k)
      signal[k] += 0.05 * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(k) / spec.fs + phase);
  }

  for (double& v : signal) v *= spec.amplitude_scale;

  double power = 0.0;
  for (double v : signal) power += v * v;
  power /= static_cast<double>(n);

  if (spec.baseline_wander_amp != 0.0) {
    const double freq = wander_rng.uniform(0.15, 0.35);
    const double phase = wander_rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t k = 0; k < n; ++k)
      signal[k] +=
          spec.baseline_wander_amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(k) / spec.fs + phase);
  }
  if (spec.noise_snr_db) {
    const double sd = std::sqrt(power * std::pow(10.0, -*spec.noise_snr_db / 10.0));
    for (double& v : signal) v += sd * noise_rng.normal();
  }

  SyntheticRecord out;
  for (std::size_t i = 0; i < beats; ++i) {
    if (!inside(times[i], spec.fs, n)) continue;
    const std::size_t idx = sample_index(times[i], spec.fs);
    if (!out.r_peaks.empty() && idx <= out.r_peaks.back()) continue;
    out.r_peaks.push_back(idx);
    out.premature.push_back(premature[i]);
  }
  out.record.samples = std::move(signal);
  out.record.fs = spec.fs;
  out.record.label = spec.cls;
  out.record.domain_id = spec.domain_id;
  out.record.record_id = spec.record_id;
  return out;
}

EcgRecord make_domain_variant(const EcgRecord& record, const DomainShift& shift) {
  record.validate();
  if (shift.gain == 0.0 || !std::isfinite(shift.gain)) throw ContractError("make_domain_variant: gain must be non-zero");
  if (!(shift.resample_fs > 0.0)) throw ContractError("make_domain_variant: resample_fs must be > 0");

  std::vector<double> x(record.samples.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    x[k] = shift.gain * record.samples[k];
    if (shift.offset_drift != 0.0)
      x[k] += shift.offset_drift * std::sin(2.0 * std::numbers::pi * 0.2 * static_cast<double>(k) / record.fs);
  }

  EcgRecord out;
  out.samples = resample_to(x, record.fs, shift.resample_fs);
  out.fs = shift.resample_fs;
  out.label = record.label;
  out.domain_id = record.domain_id + "-shifted";
  out.record_id = record.record_id;

  if (shift.snr_db && !out.samples.empty()) {
    double power = 0.0;
    for (double v : out.samples) power += v * v;
    power /= static_cast<double>(out.samples.size());
    const double sd = std::sqrt(power * std::pow(10.0, -*shift.snr_db / 10.0));
    Rng rng(shift.seed, 0x5EEDULL);
    for (double& v : out.samples) v += sd * rng.normal();
  }
  return out;
}

}  // namespace ecgdk
