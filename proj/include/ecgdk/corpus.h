#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ecgdk/ingest.h"

namespace ecgdk {

// Recording conditions of one synthetic source. Per-record values are drawn uniformly from the
// [lo, hi] ranges.
struct DomainProfile {
  std::string id;
  double fs = 250.0;
  double hr_lo = 55.0, hr_hi = 95.0;
  double gain_lo = 0.8, gain_hi = 1.2;
  double wander_lo = 0.05, wander_hi = 0.2;
  double snr_lo_db = 25.0, snr_hi_db = 35.0;
  double normal_jitter_lo = 0.02, normal_jitter_hi = 0.05;
  double pvc_rate_lo = 0.15, pvc_rate_hi = 0.3;
  Morphology morphology;
  // Applied after synthesis (generated at shift_source_fs, then shifted to fs).
  std::optional<DomainShift> shift;
  double shift_source_fs = 500.0;
};

struct CorpusSpec {
  std::vector<DomainProfile> domains;
  std::size_t records_per_class = 10;  // per domain
  double duration_s = 10.0;
  std::uint64_t seed = 0;
  bool labeled = true;  // false strips labels (unlabeled target pools)
};

// Three clinical-style sources ("mitdb", "svdb", "afdb" at 360, 128 and 250 Hz) and one wearable
// device ("wearable", 200 Hz: weak P waves, wide QRS, tall T waves, more noise and drift, and a
// shift applied on top).
std::vector<DomainProfile> desk_domains();
DomainProfile desk_domain(const std::string& id);

// Records ordered by domain, then class, then index. Each record's randomness comes only from
// (seed, domain, class, index), so output does not depend on `jobs`.
std::vector<EcgRecord> generate_corpus(const CorpusSpec& spec, std::size_t jobs = 1);

}  // namespace ecgdk
