#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgdk/dsp.h"

namespace ecgdk {

enum class SplitMode { SeenDomain, UnseenDomain };

// seen: stratified split over all domains; unseen: a held-out domain is the test set;
// ablation: unseen split with the RR path removed from the model.
enum class Scenario { Seen, Unseen, Ablation };

Scenario parse_scenario(std::string_view text);
std::string_view to_string(Scenario s);
SplitMode split_mode(Scenario s);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Indices into `segments`. Unlabeled segments are left out of every set.
//  SeenDomain: per class, a seeded shuffle then round(0.6 n) train, round(0.2 n) val, rest test.
//  UnseenDomain: every segment of `holdout_domain` goes to test; the remaining ones are split per
//  class round(0.75 n) train and the rest val.
// Each set is returned in ascending index order. Throws ContractError when the holdout domain is
// missing or absent from the data.
SplitIndices scenario_split(std::span<const Segment> segments, SplitMode mode,
                            const std::optional<std::string>& holdout_domain, std::uint64_t seed);

}  // namespace ecgdk
