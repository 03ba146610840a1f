#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "ecgdk/model.h"
#include "ecgdk/rng.h"
#include "ecgdk/segment_io.h"

namespace ecgdk {

// Adds white Gaussian noise with variance mean(x^2) * 10^(-snr_db / 10). An infinite SNR adds
// nothing. Returns the variance used.
double add_awgn(std::span<double> x, double snr_db, Rng& rng);

// Noisy copy of a segment: noise, renormalization to [-1, 1] and fresh HRV features.
Example corrupt_example(const Example& clean, double snr_db, Rng& rng);

struct SnrLevel {
  double snr_db = 0.0;
  std::vector<double> auc;       // one per noise seed
  std::vector<double> auc_loss;  // clean AUC minus noisy AUC
  std::vector<std::size_t> unusable;
  double auc_loss_mean = 0.0;
  double auc_loss_std = 0.0;  // population standard deviation over seeds
  double auc_mean = 0.0;
};

struct NoiseSweepReport {
  double clean_auc = 0.0;
  std::size_t clean_evaluated = 0;
  std::size_t noise_seeds = 0;
  std::vector<SnrLevel> levels;

  nlohmann::json to_json() const;
};

// For every SNR and noise seed s in [0, noise_seeds): corrupt each test segment with noise drawn
// from Rng(seed, mix(s, segment index)), drop segments whose noisy HRV is unusable, and compute the
// macro one-vs-rest AUC. The clean baseline runs the same renormalization and feature pipeline
// without noise. Requires a non-empty SNR list and noise_seeds >= 1.
NoiseSweepReport noise_sweep(const Model& model, std::span<const Example> test_set, std::span<const double> snr_list_db,
                             std::uint64_t seed, std::size_t noise_seeds = 5, std::size_t jobs = 1);

}  // namespace ecgdk
