#include "ecgdk/scenario.h"

#include <algorithm>
#include <cmath>

#include "ecgdk/common.h"
#include "ecgdk/rng.h"

namespace ecgdk {

Scenario parse_scenario(std::string_view text) {
  if (text == "seen") return Scenario::Seen;
  if (text == "unseen") return Scenario::Unseen;
  if (text == "ablation") return Scenario::Ablation;
  throw ContractError("unknown scenario '" + std::string(text) + "' (expected seen, unseen or ablation)");
}

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::Seen: return "seen";
    case Scenario::Unseen: return "unseen";
    case Scenario::Ablation: return "ablation";
  }
  return "?";
}

SplitMode split_mode(Scenario s) { return s == Scenario::Seen ? SplitMode::SeenDomain : SplitMode::UnseenDomain; }

namespace {

std::size_t round_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
}

}  // namespace

SplitIndices scenario_split(std::span<const Segment> segments, SplitMode mode,
                            const std::optional<std::string>& holdout_domain, std::uint64_t seed) {
  SplitIndices out;
  std::vector<std::vector<std::size_t>> by_class(kNumClasses);
  if (mode == SplitMode::UnseenDomain) {
    if (!holdout_domain) throw ContractError("unseen-domain split needs a holdout domain");
    bool found = false;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (!segments[i].label) continue;
      if (segments[i].domain_id == *holdout_domain) {
        out.test.push_back(i);
        found = true;
      } else {
        by_class[static_cast<std::size_t>(class_index(*segments[i].label))].push_back(i);
      }
    }
    if (!found) throw ContractError("holdout domain '" + *holdout_domain + "' has no labeled segments");
  } else {
    for (std::size_t i = 0; i < segments.size(); ++i)
      if (segments[i].label) by_class[static_cast<std::size_t>(class_index(*segments[i].label))].push_back(i);
  }

  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& idx = by_class[c];
    Rng rng(seed, 0x5B11 + c);
    rng.shuffle(std::span<std::size_t>(idx));
    const std::size_t n = idx.size();
    const std::size_t n_train = mode == SplitMode::SeenDomain ? round_count(0.6, n) : round_count(0.75, n);
    const std::size_t n_val = mode == SplitMode::SeenDomain ? std::min(n - n_train, round_count(0.2, n)) : n - n_train;
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                   idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    if (mode == SplitMode::SeenDomain)
      out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace ecgdk
