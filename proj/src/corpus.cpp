#include "ecgdk/corpus.h"

#include "ecgdk/common.h"
#include "ecgdk/detail/parallel.h"
#include "ecgdk/rng.h"

namespace ecgdk {

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::vector<DomainProfile> desk_domains() {
  DomainProfile mit;
  mit.id = "mitdb";
  mit.fs = 360.0;
  mit.hr_lo = 55.0;
  mit.hr_hi = 90.0;
  mit.gain_lo = 0.8;
  mit.gain_hi = 1.6;

  DomainProfile sv;
  sv.id = "svdb";
  sv.fs = 128.0;
  sv.hr_lo = 60.0;
  sv.hr_hi = 100.0;
  sv.gain_lo = 0.5;
  sv.gain_hi = 1.0;
  sv.snr_lo_db = 22.0;
  sv.snr_hi_db = 30.0;
  sv.morphology.qrs_width_scale = 1.1;

  DomainProfile af;
  af.id = "afdb";
  af.fs = 250.0;
  af.hr_lo = 60.0;
  af.hr_hi = 95.0;
  af.wander_hi = 0.3;
  af.morphology.t_wave_scale = 0.8;

  DomainProfile wear;
  wear.id = "wearable";
  wear.fs = 200.0;
  wear.hr_lo = 65.0;
  wear.hr_hi = 105.0;
  wear.gain_lo = 0.3;
  wear.gain_hi = 0.6;
  wear.wander_lo = 0.2;
  wear.wander_hi = 0.5;
  wear.snr_lo_db = 16.0;
  wear.snr_hi_db = 22.0;
  wear.morphology.qrs_width_scale = 1.35;
  wear.morphology.p_wave_scale = 0.25;
  wear.morphology.t_wave_scale = 1.6;
  DomainShift s;
  s.gain = 0.9;
  s.offset_drift = 0.15;
  s.resample_fs = wear.fs;
  wear.shift = s;
  wear.shift_source_fs = 500.0;
  return {mit, sv, af, wear};
}

DomainProfile desk_domain(const std::string& id) {
  for (auto& d : desk_domains())
    if (d.id == id) return d;
  throw ContractError("unknown desk domain '" + id + "'");
}

std::vector<EcgRecord> generate_corpus(const CorpusSpec& spec, std::size_t jobs) {
  if (spec.domains.empty() || spec.records_per_class == 0) throw ContractError("generate_corpus: empty corpus");
  const std::size_t per_domain = kNumClasses * spec.records_per_class;
  std::vector<EcgRecord> out(spec.domains.size() * per_domain);
  parallel_for(out.size(), jobs, [&](std::size_t k) {
    const std::size_t d = k / per_domain;
    const std::size_t c = (k % per_domain) / spec.records_per_class;
    const std::size_t i = k % spec.records_per_class;
    const DomainProfile& p = spec.domains[d];
    const std::uint64_t domain_key = fnv1a(p.id);
    const std::uint64_t record_seed = Rng::mix(Rng::mix(spec.seed, domain_key), c * 1000003ULL + i);
    Rng rng(record_seed, 0xC0);

    SyntheticSpec s;
    s.cls = kAllClasses[c];
    s.duration_s = spec.duration_s;
    s.fs = p.shift ? p.shift_source_fs : p.fs;
    s.mean_hr_bpm = rng.uniform(p.hr_lo, p.hr_hi);
    if (s.cls == ClassLabel::AF) s.mean_hr_bpm = rng.uniform(p.hr_lo + 10.0, p.hr_hi + 20.0);
    s.rr_jitter = rng.uniform(p.normal_jitter_lo, p.normal_jitter_hi);
    s.pvc_rate = s.cls == ClassLabel::PVC ? rng.uniform(p.pvc_rate_lo, p.pvc_rate_hi) : 0.0;
    s.amplitude_scale = rng.uniform(p.gain_lo, p.gain_hi);
    s.baseline_wander_amp = rng.uniform(p.wander_lo, p.wander_hi);
    s.noise_snr_db = rng.uniform(p.snr_lo_db, p.snr_hi_db);
    s.morphology = p.morphology;
    s.seed = rng.next_u64();
    s.domain_id = p.id;
    s.record_id = p.id + "-" + std::string(to_string(s.cls)) + "-" + std::to_string(i);

    EcgRecord rec = generate_synthetic(s).record;
    if (p.shift) {
      DomainShift shift = *p.shift;
      shift.seed = rng.next_u64();
      rec = make_domain_variant(rec, shift);
      rec.domain_id = p.id;
    }
    if (!spec.labeled) rec.label.reset();
    out[k] = std::move(rec);
  });
  return out;
}

}  // namespace ecgdk
