#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "ecgdk/common.h"

namespace ecgdk {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  // Set when the ratio had a zero denominator; the value is then reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

struct MetricsReport {
  std::array<ClassMetrics, kNumClasses> per_class{};
  double f1_macro = 0.0;
  double balanced_accuracy = 0.0;
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};  // [truth][predicted]
  std::size_t evaluated = 0;
  std::size_t unusable = 0;  // segments excluded before evaluation
  std::vector<std::size_t> unusable_per_class = std::vector<std::size_t>(kNumClasses, 0);
  std::optional<double> auc_macro;

  nlohmann::json to_json() const;
};

// Class indices in [0, 3). One-vs-rest precision, recall and F1 per class; macro averages are
// unweighted over all three classes.
MetricsReport compute_metrics(std::span<const int> truth, std::span<const int> predicted);

// Mann-Whitney estimate of the one-vs-rest ROC area for each class (ties count one half), averaged
// over classes that have both positives and negatives. `scores` is row-major [n, 3].
// Throws ContractError when no class qualifies.
double macro_auc_ovr(std::span<const int> truth, std::span<const double> scores);

// Index of the largest score in each row (first on ties).
std::vector<int> argmax_rows(std::span<const double> scores, std::size_t classes = kNumClasses);

}  // namespace ecgdk
