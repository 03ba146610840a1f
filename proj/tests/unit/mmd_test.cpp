#include <doctest.h>

#include <cmath>
#include <vector>

#include "ecgdk/common.h"
#include "ecgdk/mmd.h"
#include "ecgdk/nn/ops.h"
#include "ecgdk/rng.h"
#include "support/oracles.h"

using namespace ecgdk;
using nn::Tensor;

namespace {

Tensor batch(std::size_t n, std::size_t d, Rng& rng, double mean = 0.0, bool grad = false) {
  std::vector<double> v(n * d);
  for (double& x : v) x = rng.normal(mean, 1.0);
  return Tensor({n, d}, std::move(v), grad);
}

std::vector<std::vector<double>> rows(const Tensor& t) {
  std::vector<std::vector<double>> out(t.dim(0));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    out[i].assign(t.values().begin() + static_cast<long>(i * t.dim(1)), t.values().begin() + static_cast<long>((i + 1) * t.dim(1)));
  return out;
}

}  // namespace

TEST_CASE("rbf kernel") {
  std::vector<double> a{0.3, -1}, zero{0}, one{1};
  CHECK(rbf_kernel(a, a, 2.0) == 1.0);
  CHECK(rbf_kernel(zero, one, 1.0) == doctest::Approx(0.36788).epsilon(1e-5));
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x{rng.normal(), rng.normal()}, y{rng.normal(), rng.normal()};
    CHECK(rbf_kernel(x, y, 0.7) == rbf_kernel(y, x, 0.7));
  }
}

TEST_CASE("mmd hand value and identities") {
  Tensor x({1, 1}, std::vector<double>{0.0}), y({1, 1}, std::vector<double>{1.0});
  CHECK(mmd2(x, y, 1.0).item() == doctest::Approx(2 - 2 * std::exp(-1.0)).epsilon(1e-9));
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    auto a = batch(6, 3, rng), b = batch(6, 3, rng, 0.5);
    CHECK(std::fabs(mmd2(a, a, 0.4).item()) <= 1e-9);
    const double ab = mmd2(a, b, 0.4).item();
    CHECK(std::fabs(ab - mmd2(b, a, 0.4).item()) <= 1e-9);
    CHECK(ab >= -1e-9);
    CHECK(ab <= 2.0);
    CHECK(std::fabs(ab - ecgdk::testing::brute_mmd2(rows(a), rows(b), 0.4)) <= 1e-12);
  }
}

TEST_CASE("mmd errors and truncation") {
  Rng rng(3);
  CHECK_THROWS_AS(mmd2(batch(3, 2, rng), batch(3, 4, rng), 1.0), ContractError);
  CHECK_THROWS_AS(mmd2(Tensor(nn::Shape{0, 2}), batch(3, 2, rng), 1.0), ContractError);
  auto a = batch(5, 2, rng), b = batch(3, 2, rng);
  auto ra = rows(a);
  ra.resize(3);
  CHECK(mmd2(a, b, 1.0).item() == doctest::Approx(ecgdk::testing::brute_mmd2(ra, rows(b), 1.0)));
}

TEST_CASE("median heuristic") {
  Tensor x({1, 1}, std::vector<double>{0.0}), y({1, 1}, std::vector<double>{2.0});
  CHECK(median_heuristic_beta(x, y) == doctest::Approx(1.0 / 8.0));
  Tensor same({3, 2}, std::vector<double>(6, 0.4));
  CHECK(median_heuristic_beta(same, same) == 1.0);
  Rng rng(4);
  auto a = batch(5, 3, rng), b = batch(5, 3, rng);
  CHECK(median_heuristic_beta(nn::scale(a, 10), nn::scale(b, 10)) == doctest::Approx(median_heuristic_beta(a, b) / 100));
}

TEST_CASE("mmd separates shifted distributions") {
  int ordered = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(s, 0x11);
    auto p = batch(128, 1, rng), q = batch(128, 1, rng), r = batch(128, 1, rng, 3.0);
    if (mmd2(p, q, 0.5).item() < mmd2(p, r, 0.5).item()) ++ordered;
  }
  CHECK(ordered == 10);
}

TEST_CASE("mmd gradient matches finite differences") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng rng(s, 0x12);
    auto a = batch(4, 3, rng, 0.0, true), b = batch(4, 3, rng, 0.5, true);
    auto r = ecgdk::testing::grad_check([&] { return mmd2(a, b, 0.3); }, {a, b});
    CHECK(r.failed == 0);
  }
}

TEST_CASE("total loss") {
  Rng rng(5);
  auto task = Tensor::scalar(1.0986, true);
  auto a = batch(3, 2, rng, 0.0, true), b = batch(3, 2, rng, 1.0, true);
  MmdConfig off;
  off.lambda_mmd = 0;
  CHECK(total_loss(task, a, b, off).node() == task.node());
  Tensor x({1, 1}, std::vector<double>{0.0}), y({1, 1}, std::vector<double>{1.0});
  MmdConfig one;
  one.beta = 1.0;
  CHECK(total_loss(task, x, y, one).item() == doctest::Approx(2.36284).epsilon(1e-5));

  MmdConfig half = one;
  half.lambda_mmd = 0.5;
  total_loss(Tensor::scalar(0.0, true), a, b, one).backward();
  std::vector<double> g1(a.grad().begin(), a.grad().end());
  a.zero_grad();
  total_loss(Tensor::scalar(0.0, true), a, b, half).backward();
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(a.grad()[i] == doctest::Approx(g1[i] / 2));

  MmdConfig bad;
  bad.lambda_mmd = -1;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = {};
  bad.beta = 0.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}
