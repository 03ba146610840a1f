#pragma once

// Independent reference implementations used by the unit and acceptance tests. They are written
// straight from the textbook formulas and share no code with the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "ecgdk/nn/ops.h"
#include "ecgdk/nn/tensor.h"

namespace ecgdk::testing {

struct BruteHrv {
  double mean = 0, sd = 0, entropy = 0, rmssd = 0, nrmssd = 0, mean_ad = 0, median_ad = 0;
};

inline double brute_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[(n - 1) / 2];
  return (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

inline BruteHrv brute_hrv(const std::vector<double>& rr) {
  BruteHrv out;
  const double n = static_cast<double>(rr.size());
  double total = 0;
  for (double v : rr) total += v;
  out.mean = total / n;
  double var = 0;
  for (double v : rr) var += std::pow(v - out.mean, 2);
  out.sd = std::sqrt(var / n);
  double diffs = 0;
  for (std::size_t i = 1; i < rr.size(); ++i) diffs += std::pow(rr[i] - rr[i - 1], 2);
  out.rmssd = std::sqrt(diffs / (n - 1));
  out.nrmssd = out.rmssd / out.mean;
  for (double v : rr) out.mean_ad += std::fabs(v - out.mean);
  out.mean_ad /= n;
  const double med = brute_median(rr);
  std::vector<double> dev;
  for (double v : rr) dev.push_back(std::fabs(v - med));
  out.median_ad = brute_median(dev);

  const double lo = *std::min_element(rr.begin(), rr.end());
  const double hi = *std::max_element(rr.begin(), rr.end());
  std::array<int, 8> counts{};
  for (double v : rr) {
    int bin = 0;
    for (int k = 1; k < 8; ++k)
      if (hi > lo && v >= lo + (hi - lo) * k / 8.0) bin = k;
    counts[bin]++;
  }
  for (int c : counts)
    if (c > 0) out.entropy += -(c / n) * std::log(c / n);
  return out;
}

// Least-squares amplitude of a sinusoid of known frequency in x (samples [from, to)).
inline double fitted_amplitude(std::span<const double> x, double fs, double freq, std::size_t from, std::size_t to) {
  double ss = 0, cc = 0, sc = 0, xs = 0, xc = 0;
  for (std::size_t i = from; i < to; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double s = std::sin(2 * std::numbers::pi * freq * t), c = std::cos(2 * std::numbers::pi * freq * t);
    ss += s * s;
    cc += c * c;
    sc += s * c;
    xs += x[i] * s;
    xc += x[i] * c;
  }
  const double det = ss * cc - sc * sc;
  const double a = (xs * cc - xc * sc) / det;
  const double b = (xc * ss - xs * sc) / det;
  return std::hypot(a, b);
}

// Energy of x in [f_lo, f_hi] Hz from a direct DFT (O(n * bins), fine for test sizes).
inline double band_energy(std::span<const double> x, double fs, double f_lo, double f_hi) {
  const std::size_t n = x.size();
  double e = 0;
  for (std::size_t k = 0; k <= n / 2; ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(n);
    if (f < f_lo || f > f_hi) continue;
    std::complex<double> acc = 0;
    for (std::size_t i = 0; i < n; ++i)
      acc += x[i] * std::polar(1.0, -2 * std::numbers::pi * static_cast<double>(k * i % n) / static_cast<double>(n));
    e += std::norm(acc);
  }
  return e;
}

// softmax(q k^T / sqrt(d)) v for one head, straight loops. q [sq, d], k [sk, d], v [sk, dv].
inline std::vector<double> brute_attention(const std::vector<double>& q, const std::vector<double>& k,
                                           const std::vector<double>& v, std::size_t sq, std::size_t sk,
                                           std::size_t d, std::size_t dv) {
  std::vector<double> out(sq * dv, 0.0);
  for (std::size_t i = 0; i < sq; ++i) {
    std::vector<double> w(sk);
    double z = 0;
    for (std::size_t j = 0; j < sk; ++j) {
      double dot = 0;
      for (std::size_t t = 0; t < d; ++t) dot += q[i * d + t] * k[j * d + t];
      w[j] = std::exp(dot / std::sqrt(static_cast<double>(d)));
      z += w[j];
    }
    for (std::size_t j = 0; j < sk; ++j)
      for (std::size_t t = 0; t < dv; ++t) out[i * dv + t] += w[j] / z * v[j * dv + t];
  }
  return out;
}

inline double brute_mmd2(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y,
                         double beta) {
  auto k = [beta](const std::vector<double>& a, const std::vector<double>& b) {
    double d2 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-beta * d2);
  };
  const double n = static_cast<double>(x.size());
  double sxx = 0, syy = 0, sxy = 0;
  for (const auto& a : x)
    for (const auto& b : x) sxx += k(a, b);
  for (const auto& a : y)
    for (const auto& b : y) syy += k(a, b);
  for (const auto& a : x)
    for (const auto& b : y) sxy += k(a, b);
  return sxx / (n * n) + syy / (n * n) - 2 * sxy / (n * n);
}

// Attention in float64 for the lifetime of the guard.
class DoubleAttention {
 public:
  DoubleAttention() : saved_(nn::attention_float32()) { nn::set_attention_float32(false); }
  ~DoubleAttention() { nn::set_attention_float32(saved_); }
  DoubleAttention(const DoubleAttention&) = delete;
  DoubleAttention& operator=(const DoubleAttention&) = delete;

 private:
  bool saved_;
};

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::size_t kinks = 0;  // skipped: the one-sided slopes disagree, a ReLU/max switch lies within h
  double worst_abs = 0;
  double worst_rel = 0;
};

// Central differences of f() with respect to every element of each input, compared against the
// gradients left by one backward pass. An element passes when the absolute error is within
// `abs_tol` or the relative error within `rel_tol`. With `skip_kinks`, a mismatching element is
// counted as a kink instead when f is not smooth there: either a 100x smaller step agrees (a ReLU
// or max switch lay within h), or the analytic value equals one of the one-sided slopes (the point
// sits on the switch itself).
inline GradCheckResult grad_check(const std::function<nn::Tensor()>& f, std::vector<nn::Tensor> inputs,
                                  double h = 1e-4, double rel_tol = 1e-4, double abs_tol = 1e-6,
                                  bool skip_kinks = false) {
  DoubleAttention exact;
  for (auto& t : inputs) t.zero_grad();
  nn::Tensor loss = f();
  const double f0 = loss.item();
  loss.backward();
  GradCheckResult r;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.numel(), 0.0);
    auto vals = t.mutable_values();
    auto at = [&](std::size_t i, double x) {
      const double saved = vals[i];
      vals[i] = saved + x;
      const double y = f().item();
      vals[i] = saved;
      return y;
    };
    auto agrees = [&](double numeric, double a) {
      const double err = std::fabs(numeric - a);
      return err <= abs_tol || err <= rel_tol * std::max(std::fabs(numeric), std::fabs(a));
    };
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double numeric = (at(i, h) - at(i, -h)) / (2 * h);
      const double err = std::fabs(numeric - analytic[i]);
      const double rel = err / std::max(std::fabs(numeric), std::fabs(analytic[i]));
      ++r.checked;
      if (!agrees(numeric, analytic[i])) {
        if (skip_kinks) {
          const double hs = h * 1e-2;
          const double up = at(i, hs), down = at(i, -hs);
          const double right = (up - f0) / hs, left = (f0 - down) / hs;
          const bool one_sided = std::fabs(right - left) > 1e-3 * std::max(std::fabs(right), std::fabs(left)) &&
                                 (agrees(right, analytic[i]) || agrees(left, analytic[i]));
          if (agrees((up - down) / (2 * hs), analytic[i]) || one_sided) {
            ++r.kinks;
            continue;
          }
        }
        ++r.failed;
        r.worst_abs = std::max(r.worst_abs, err);
        r.worst_rel = std::max(r.worst_rel, rel);
      }
    }
  }
  return r;
}

}  // namespace ecgdk::testing
