#pragma once

#include <optional>
#include <span>

#include "ecgdk/nn/tensor.h"

namespace ecgdk {

struct MmdConfig {
  std::optional<double> beta;  // nullopt: median heuristic per batch pair
  double lambda_mmd = 1.0;

  void validate() const;
};

// exp(-beta * ||x - y||^2).
double rbf_kernel(std::span<const double> x, std::span<const double> y, double beta);

// 1 / (2 m^2), m the median pairwise distance over the pooled rows of x [n, d] and y [m, d],
// self-pairs excluded. Returns 1 when m == 0 or fewer than two points.
double median_heuristic_beta(const nn::Tensor& x, const nn::Tensor& y);

// Biased squared MMD with the Gaussian kernel, diagonal terms kept:
//   1/n^2 sum k(x_i, x_j) + 1/n^2 sum k(y_i, y_j) - 2/n^2 sum k(x_i, y_j).
// x and y are [n, d]. Batches of different sizes are truncated to the smaller one with a warning.
// Differentiable in both arguments.
nn::Tensor mmd2(const nn::Tensor& x, const nn::Tensor& y, double beta);

// Uses cfg.beta or the median heuristic on the (detached) batches.
nn::Tensor mmd2(const nn::Tensor& x, const nn::Tensor& y, const MmdConfig& cfg);

// task + lambda * mmd2(x, y). Returns `task` itself when lambda == 0.
nn::Tensor total_loss(const nn::Tensor& task, const nn::Tensor& x, const nn::Tensor& y, const MmdConfig& cfg);

}  // namespace ecgdk
