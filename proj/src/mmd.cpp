#include "ecgdk/mmd.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "ecgdk/common.h"
#include "ecgdk/nn/ops.h"

namespace ecgdk {

using nn::Tensor;

void MmdConfig::validate() const {
  if (beta && !(*beta > 0.0 && std::isfinite(*beta))) throw ContractError("MMD beta must be positive");
  if (!(lambda_mmd >= 0.0 && std::isfinite(lambda_mmd))) throw ContractError("lambda_mmd must be >= 0");
}

double rbf_kernel(std::span<const double> x, std::span<const double> y, double beta) {
  if (x.size() != y.size()) throw ContractError("rbf_kernel: dimension mismatch");
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
  return std::exp(-beta * d2);
}

namespace {

void require_matrix(const Tensor& t, const char* name) {
  if (!t.defined() || t.rank() != 2) throw ContractError(std::string("mmd2: ") + name + " must be [n, d]");
}

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

}  // namespace

double median_heuristic_beta(const Tensor& x, const Tensor& y) {
  require_matrix(x, "x");
  require_matrix(y, "y");
  const std::size_t d = x.dim(1);
  if (y.dim(1) != d) throw ContractError("median_heuristic_beta: dimension mismatch");
  std::vector<const double*> rows;
  for (std::size_t i = 0; i < x.dim(0); ++i) rows.push_back(x.values().data() + i * d);
  for (std::size_t i = 0; i < y.dim(0); ++i) rows.push_back(y.values().data() + i * d);
  std::vector<double> dist;
  dist.reserve(rows.size() * (rows.size() - 1) / 2 + 1);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) dist.push_back(std::sqrt(sq_dist(rows[i], rows[j], d)));
  if (dist.empty()) return 1.0;
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double m = dist[mid];
  if (dist.size() % 2 == 0) m = 0.5 * (m + *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid)));
  if (!(m > 0.0)) return 1.0;
  return 1.0 / (2.0 * m * m);
}

Tensor mmd2(const Tensor& x_in, const Tensor& y_in, double beta) {
  require_matrix(x_in, "x");
  require_matrix(y_in, "y");
  if (!(beta > 0.0)) throw ContractError("mmd2: beta must be positive");
  const std::size_t d = x_in.dim(1);
  if (y_in.dim(1) != d)
    throw ContractError("mmd2: dimension mismatch " + nn::shape_string(x_in.shape()) + " vs " +
                        nn::shape_string(y_in.shape()));
  const std::size_t n = std::min(x_in.dim(0), y_in.dim(0));
  if (n == 0) throw ContractError("mmd2: empty batch");
  if (x_in.dim(0) != y_in.dim(0))
    log_warning("mmd2: batches of " + std::to_string(x_in.dim(0)) + " and " + std::to_string(y_in.dim(0)) +
                " rows truncated to " + std::to_string(n));

  const double* xv = x_in.values().data();
  const double* yv = y_in.values().data();
  std::vector<double> kxx(n * n), kyy(n * n), kxy(n * n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      kxx[i * n + j] = std::exp(-beta * sq_dist(xv + i * d, xv + j * d, d));
      kyy[i * n + j] = std::exp(-beta * sq_dist(yv + i * d, yv + j * d, d));
      kxy[i * n + j] = std::exp(-beta * sq_dist(xv + i * d, yv + j * d, d));
      sxx += kxx[i * n + j];
      syy += kyy[i * n + j];
      sxy += kxy[i * n + j];
    }
  }
  const double inv_n2 = 1.0 / static_cast<double>(n * n);
  const double value = (sxx + syy - 2.0 * sxy) * inv_n2;

  return Tensor::make_result(
      {1}, {value}, {x_in, y_in},
      [n, d, beta, inv_n2, kxx = std::move(kxx), kyy = std::move(kyy), kxy = std::move(kxy)](nn::detail::Node& self) {
        nn::detail::Node& px = *self.parents[0];
        nn::detail::Node& py = *self.parents[1];
        const double c = 4.0 * beta * self.grad[0] * inv_n2;
        const double* x = px.value.data();
        const double* y = py.value.data();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t k = 0; k < d; ++k) {
              if (px.requires_grad)
                px.grad[i * d + k] += c * (-(x[i * d + k] - x[j * d + k]) * kxx[i * n + j] +
                                           (x[i * d + k] - y[j * d + k]) * kxy[i * n + j]);
              if (py.requires_grad)
                py.grad[i * d + k] += c * (-(y[i * d + k] - y[j * d + k]) * kyy[i * n + j] +
                                           (y[i * d + k] - x[j * d + k]) * kxy[j * n + i]);
            }
          }
        }
      });
}

Tensor mmd2(const Tensor& x, const Tensor& y, const MmdConfig& cfg) {
  cfg.validate();
  return mmd2(x, y, cfg.beta ? *cfg.beta : median_heuristic_beta(x, y));
}

Tensor total_loss(const Tensor& task, const Tensor& x, const Tensor& y, const MmdConfig& cfg) {
  cfg.validate();
  if (cfg.lambda_mmd == 0.0) return task;
  return nn::add(task, nn::scale(mmd2(x, y, cfg), cfg.lambda_mmd));
}

}  // namespace ecgdk
