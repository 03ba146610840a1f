#include "ecgdk/robustness.h"

#include <cmath>
#include <limits>

#include "ecgdk/common.h"
#include "ecgdk/metrics.h"
#include "ecgdk/train.h"

namespace ecgdk {

double add_awgn(std::span<double> x, double snr_db, Rng& rng) {
  if (std::isinf(snr_db) && snr_db > 0.0) return 0.0;
  if (!std::isfinite(snr_db)) throw ContractError("add_awgn: SNR must be finite or +inf");
  if (x.empty()) return 0.0;
  double power = 0.0;
  for (double v : x) power += v * v;
  power /= static_cast<double>(x.size());
  const double variance = power * std::pow(10.0, -snr_db / 10.0);
  const double sd = std::sqrt(variance);
  for (double& v : x) v += sd * rng.normal();
  return variance;
}

Example corrupt_example(const Example& clean, double snr_db, Rng& rng) {
  Example out;
  out.segment = clean.segment;
  add_awgn(out.segment.samples, snr_db, rng);
  out.segment.samples = normalize_unit(out.segment.samples);
  out.features = features_for_segment(out.segment);
  return out;
}

namespace {

struct Scored {
  double auc = 0.0;
  std::size_t unusable = 0;
  std::size_t evaluated = 0;
};

Scored score(const Model& model, std::span<const Example> test_set, double snr_db, std::uint64_t seed,
             std::uint64_t noise_seed, std::size_t jobs) {
  std::vector<Example> noisy(test_set.size());
  parallel_for(test_set.size(), jobs, [&](std::size_t i) {
    Rng rng(seed, Rng::mix(noise_seed, i));
    noisy[i] = corrupt_example(test_set[i], snr_db, rng);
  });
  Scored s;
  std::vector<Example> usable;
  std::vector<int> truth;
  for (auto& e : noisy) {
    if (!e.segment.label) throw ContractError("noise_sweep: test segment without a label");
    if (e.usable()) {
      truth.push_back(class_index(*e.segment.label));
      usable.push_back(std::move(e));
    } else {
      ++s.unusable;
    }
  }
  if (usable.empty()) throw ContractError("noise_sweep: no usable segments at SNR " + std::to_string(snr_db) + " dB");
  s.auc = macro_auc_ovr(truth, predict_proba(model, usable, jobs));
  s.evaluated = usable.size();
  return s;
}

}  // namespace

NoiseSweepReport noise_sweep(const Model& model, std::span<const Example> test_set, std::span<const double> snr_list_db,
                             std::uint64_t seed, std::size_t noise_seeds, std::size_t jobs) {
  if (snr_list_db.empty()) throw ContractError("noise_sweep: empty SNR list");
  if (noise_seeds == 0) throw ContractError("noise_sweep: need at least one noise seed");
  NoiseSweepReport report;
  report.noise_seeds = noise_seeds;
  const Scored clean = score(model, test_set, std::numeric_limits<double>::infinity(), seed, 0, jobs);
  report.clean_auc = clean.auc;
  report.clean_evaluated = clean.evaluated;
  for (double snr : snr_list_db) {
    SnrLevel level;
    level.snr_db = snr;
    for (std::size_t s = 0; s < noise_seeds; ++s) {
      const Scored r = score(model, test_set, snr, seed, s, jobs);
      level.auc.push_back(r.auc);
      level.auc_loss.push_back(report.clean_auc - r.auc);
      level.unusable.push_back(r.unusable);
    }
    const double n = static_cast<double>(noise_seeds);
    for (std::size_t s = 0; s < noise_seeds; ++s) {
      level.auc_loss_mean += level.auc_loss[s] / n;
      level.auc_mean += level.auc[s] / n;
    }
    double var = 0.0;
    for (double l : level.auc_loss) var += (l - level.auc_loss_mean) * (l - level.auc_loss_mean);
    level.auc_loss_std = std::sqrt(var / n);
    report.levels.push_back(std::move(level));
  }
  return report;
}

nlohmann::json NoiseSweepReport::to_json() const {
  nlohmann::json j;
  j["clean_auc"] = clean_auc;
  j["clean_evaluated"] = clean_evaluated;
  j["noise_seeds"] = noise_seeds;
  j["auc_variant"] = "macro one-vs-rest";
  nlohmann::json levels_json = nlohmann::json::array();
  for (const auto& l : levels) {
    levels_json.push_back({{"snr_db", std::isinf(l.snr_db) ? nlohmann::json("inf") : nlohmann::json(l.snr_db)},
                           {"auc", l.auc},
                           {"auc_mean", l.auc_mean},
                           {"auc_loss", l.auc_loss},
                           {"auc_loss_mean", l.auc_loss_mean},
                           {"auc_loss_std", l.auc_loss_std},
                           {"unusable", l.unusable}});
  }
  j["levels"] = levels_json;
  return j;
}

}  // namespace ecgdk
