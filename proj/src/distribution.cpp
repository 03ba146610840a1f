#include "ecgdk/distribution.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "ecgdk/common.h"

namespace ecgdk {

double quantile(std::vector<double> sample, double p) {
  if (sample.empty()) throw ContractError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ContractError("quantile: p must lie in [0, 1]");
  std::sort(sample.begin(), sample.end());
  const double h = p * static_cast<double>(sample.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(sample.size() - 1, lo + 1);
  return sample[lo] + (h - static_cast<double>(lo)) * (sample[hi] - sample[lo]);
}

double silverman_bandwidth(std::span<const double> sample, double pooled_range) {
  const double fallback = 1e-3 * (pooled_range > 0.0 ? pooled_range : 1.0);
  const std::size_t n = sample.size();
  if (n < 2) return fallback;
  double mean = 0.0;
  for (double v : sample) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : sample) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  const std::vector<double> copy(sample.begin(), sample.end());
  const double iqr = quantile(copy, 0.75) - quantile(copy, 0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  const double bw = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
  return bw > 0.0 ? bw : fallback;
}

std::vector<double> gaussian_kde(std::span<const double> sample, std::span<const double> grid, double bandwidth) {
  if (sample.empty()) throw ContractError("gaussian_kde: empty sample");
  if (!(bandwidth > 0.0)) throw ContractError("gaussian_kde: bandwidth must be positive");
  const double norm = 1.0 / (static_cast<double>(sample.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0.0;
    for (double v : sample) {
      const double z = (grid[g] - v) / bandwidth;
      s += std::exp(-0.5 * z * z);
    }
    out[g] = s * norm;
  }
  return out;
}

std::vector<double> linspace(double lo, double hi, std::size_t count) {
  std::vector<double> out(count, lo);
  for (std::size_t i = 1; i < count; ++i)
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  return out;
}

ViolinSummary violin_summary(std::span<const double> sample) {
  const std::vector<double> v(sample.begin(), sample.end());
  return {quantile(v, 0.0), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), quantile(v, 1.0)};
}

std::vector<std::filesystem::path> distribution_export(std::span<const HrvFeatures> train,
                                                       std::span<const HrvFeatures> test,
                                                       const std::filesystem::path& out_dir) {
  if (train.empty() || test.empty()) throw ContractError("distribution_export: both cohorts need at least one segment");
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;

  const std::filesystem::path violin_path = out_dir / "violin_summary.csv";
  std::ofstream violin(violin_path, std::ios::trunc);
  if (!violin) throw ContractError("cannot open " + violin_path.string());
  violin.precision(17);
  violin << "feature,cohort,n,bandwidth,min,q1,median,q3,max\n";

  for (std::size_t f = 0; f < kHrvFeatureCount; ++f) {
    std::vector<double> a, b;
    for (const auto& h : train) a.push_back(h.to_array()[f]);
    for (const auto& h : test) b.push_back(h.to_array()[f]);
    double lo = std::min(*std::min_element(a.begin(), a.end()), *std::min_element(b.begin(), b.end()));
    double hi = std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
    const double range = hi - lo;
    const double bw_a = silverman_bandwidth(a, range);
    const double bw_b = silverman_bandwidth(b, range);
    const std::vector<double> grid = linspace(lo, hi, kKdeGridPoints);
    const std::vector<double> da = gaussian_kde(a, grid, bw_a);
    const std::vector<double> db = gaussian_kde(b, grid, bw_b);

    const std::string name(kHrvFeatureNames[f]);
    const std::filesystem::path kde_path = out_dir / ("kde_" + name + ".csv");
    std::ofstream kde(kde_path, std::ios::trunc);
    if (!kde) throw ContractError("cannot open " + kde_path.string());
    kde.precision(17);
    kde << "x,train_density,test_density\n";
    for (std::size_t g = 0; g < grid.size(); ++g) kde << grid[g] << ',' << da[g] << ',' << db[g] << '\n';
    written.push_back(kde_path);

    if (name == "shannon_entropy" || name == "nrmssd") continue;
    for (int cohort = 0; cohort < 2; ++cohort) {
      const auto& v = cohort == 0 ? a : b;
      const ViolinSummary s = violin_summary(v);
      violin << name << ',' << (cohort == 0 ? "train" : "test") << ',' << v.size() << ','
             << (cohort == 0 ? bw_a : bw_b) << ',' << s.min << ',' << s.q1 << ',' << s.median << ',' << s.q3 << ','
             << s.max << '\n';
    }
  }
  written.push_back(violin_path);
  return written;
}

}  // namespace ecgdk
