#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgdk/common.h"

namespace ecgdk {

// Single-lead ECG as recorded. Sources arrive at heterogeneous sampling rates.
struct EcgRecord {
  std::vector<double> samples;
  double fs = 0.0;
  std::optional<ClassLabel> label;
  std::string domain_id;
  std::string record_id;

  // Throws ContractError on empty samples, fs <= 0 or non-finite values.
  void validate() const;
};

enum class RecordFormat { Csv, Jsonl };

// Picks the format from the extension (.csv / .jsonl / .json); throws ContractError otherwise.
RecordFormat format_from_path(const std::filesystem::path& path);

// CSV: a header line `# fs=<Hz> label=<Normal|AF|PVC|-> domain=<id> record=<id>` followed by one
// decimal sample per line; a further header line starts the next record.
// JSONL: one object per line with keys fs, label, domain, record, samples.
// Errors are ParseError naming file, line and field; an empty file is "no records".
std::vector<EcgRecord> load_records(const std::filesystem::path& path, RecordFormat format);
std::vector<EcgRecord> load_records(const std::filesystem::path& path);

// Writes with shortest round-trip decimal formatting, so load_records reads back the exact values.
void save_records(const std::filesystem::path& path, std::span<const EcgRecord> records, RecordFormat format);

// Multiplicative knobs on the beat template; 1.0 everywhere is the default morphology.
struct Morphology {
  double qrs_width_scale = 1.0;
  double p_wave_scale = 1.0;
  double t_wave_scale = 1.0;
};

struct SyntheticSpec {
  ClassLabel cls = ClassLabel::Normal;
  double duration_s = 10.0;
  double fs = 100.0;
  double mean_hr_bpm = 60.0;
  double rr_jitter = 0.03;  // coefficient of variation of RR; AF uses at least kAfMinRrCv
  double pvc_rate = 0.0;    // only used by the PVC class
  double amplitude_scale = 1.0;
  double baseline_wander_amp = 0.0;
  std::optional<double> noise_snr_db;
  std::uint64_t seed = 0;
  Morphology morphology;
  std::string domain_id = "synthetic";
  std::string record_id = "synthetic";

  void validate() const;
};

inline constexpr double kAfMinRrCv = 0.15;

struct SyntheticRecord {
  EcgRecord record;
  std::vector<std::size_t> r_peaks;  // strictly increasing, within [0, samples.size())
  std::vector<bool> premature;       // parallel to r_peaks; true for ventricular ectopic beats
};

// Deterministic for a fixed spec. Beats are sums of Gaussian bumps (P, Q, R, S, T).
//  Normal: log-normal RR jitter around 60/mean_hr_bpm, clipped to [0.3, 2.0] s.
//  AF: RR coefficient of variation >= 0.15 in the returned train, 4-9 Hz fibrillatory wave at
//      0.05 of the R amplitude, no P waves.
//  PVC: the Normal rhythm (same draws) where a pvc_rate fraction of beats comes ~30% early, with
//      ~2x QRS width, inverted polarity and a full compensatory pause. At least one premature beat
//      is placed when pvc_rate > 0 and the record has room for one.
SyntheticRecord generate_synthetic(const SyntheticSpec& spec);

struct DomainShift {
  double gain = 1.0;
  double offset_drift = 0.0;  // amplitude of a 0.2 Hz sinusoidal baseline drift
  double resample_fs = 0.0;   // target rate, must be > 0
  std::optional<double> snr_db;
  std::uint64_t seed = 0;
};

// gain -> drift -> resample -> optional white noise at snr_db (relative to the resampled signal
// power). The domain id gets the suffix "-shifted".
EcgRecord make_domain_variant(const EcgRecord& record, const DomainShift& shift);

}  // namespace ecgdk
