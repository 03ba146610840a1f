#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ecgdk/hrv.h"

namespace ecgdk {

inline constexpr std::size_t kKdeGridPoints = 256;

// 0.9 * min(sd, IQR / 1.34) * n^(-1/5) with the population sd and type-7 quartiles. When that is
// zero or n < 2, falls back to 1e-3 * (pooled_range if > 0, else 1).
double silverman_bandwidth(std::span<const double> sample, double pooled_range);

// Gaussian kernel density of `sample` at each grid point.
std::vector<double> gaussian_kde(std::span<const double> sample, std::span<const double> grid, double bandwidth);

// `count` evenly spaced points from lo to hi inclusive (all equal to lo when lo == hi).
std::vector<double> linspace(double lo, double hi, std::size_t count);

// Type-7 (linear interpolation) sample quantile, p in [0, 1].
double quantile(std::vector<double> sample, double p);

struct ViolinSummary {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

ViolinSummary violin_summary(std::span<const double> sample);

// Writes into `out_dir`:
//   kde_<feature>.csv for all seven features: x, train_density, test_density on a 256-point grid
//     spanning the pooled min..max;
//   violin_summary.csv: feature, cohort, n, bandwidth, min, q1, median, q3, max for the five
//     features other than shannon_entropy and nrmssd.
// Returns the written paths. Both cohorts must be non-empty.
std::vector<std::filesystem::path> distribution_export(std::span<const HrvFeatures> train,
                                                       std::span<const HrvFeatures> test,
                                                       const std::filesystem::path& out_dir);

}  // namespace ecgdk
