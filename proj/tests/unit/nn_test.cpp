#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ecgdk/common.h"
#include "ecgdk/nn/checkpoint.h"
#include "ecgdk/nn/ops.h"
#include "ecgdk/rng.h"
#include "support/oracles.h"
#include "support/scratch.h"

using namespace ecgdk;
using namespace ecgdk::nn;
using ecgdk::testing::grad_check;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = true, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

Tensor vec(std::vector<double> v, bool grad = false) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v), grad);
}

// Weighted sum so every output element gets a distinct upstream gradient.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng r(seed, 0xBEEF);
  return sum(mul(y, random_tensor(y.shape(), r, false)));
}

}  // namespace

TEST_CASE("conv1d lengths and hand value") {
  CHECK(conv1d_output_length(1000, 3, 1, 0) == 998);
  CHECK(conv1d_output_length(998, 3, 1, 1) == 998);
  Tensor x({1, 1, 3}, std::vector<double>{1, 2, 3});
  Tensor w({1, 1, 3}, std::vector<double>{1, 1, 1});
  Tensor b({1}, std::vector<double>{0});
  auto y = conv1d(x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y.item() == 6.0);
  CHECK_THROWS_AS(conv1d(x, Tensor({1, 2, 3}), b, 1, 0), ContractError);
  CHECK_THROWS_AS(conv1d(x, Tensor({1, 1, 5}), b, 1, 0), ContractError);
}

TEST_CASE("shape formulas hold on random geometries") {
  Rng rng(5);
  for (int t = 0; t < 40; ++t) {
    const std::size_t len = 3 + rng.index(20), k = 1 + rng.index(4), s = 1 + rng.index(3), p = rng.index(2);
    if (k > len + 2 * p) continue;
    auto x = random_tensor({2, 2, len}, rng, false);
    auto y = conv1d(x, random_tensor({3, 2, k}, rng, false), random_tensor({3}, rng, false), s, p);
    CHECK(y.dim(2) == (len + 2 * p - k) / s + 1);
    if (k <= len) CHECK(maxpool1d(x, k, s).dim(2) == (len - k) / s + 1);
  }
}

TEST_CASE("maxpool values and tie rule") {
  CHECK(maxpool1d_output_length(998, 2, 2) == 499);
  Tensor x({1, 1, 4}, std::vector<double>{3, 1, 4, 1}, true);
  auto y = maxpool1d(x, 2, 2);
  CHECK(std::vector<double>(y.values().begin(), y.values().end()) == std::vector<double>{3, 4});
  Tensor t({1, 1, 2}, std::vector<double>{2, 2}, true);
  sum(maxpool1d(t, 2, 2)).backward();
  CHECK(t.grad()[0] == 1.0);
  CHECK(t.grad()[1] == 0.0);
}

TEST_CASE("linear hand cases") {
  Tensor x({2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor eye({2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor zero_b({2}, std::vector<double>{0, 0});
  auto y = linear(x, eye, zero_b);
  CHECK(std::vector<double>(y.values().begin(), y.values().end()) == std::vector<double>{1, 2, 3, 4});
  auto z = linear(x, Tensor({2, 2}), vec({5, -1}));
  CHECK(std::vector<double>(z.values().begin(), z.values().end()) == std::vector<double>{5, -1, 5, -1});
  Tensor w({2, 2}, std::vector<double>{1, 2, 3, 4});
  auto h = linear(x, w, zero_b);
  // [1 2; 3 4] * [1 3; 2 4]
  CHECK(std::vector<double>(h.values().begin(), h.values().end()) == std::vector<double>{5, 11, 11, 25});
}

TEST_CASE("layer norm cases") {
  auto g = vec({1, 1, 1}), b = vec({0.5, 0.5, 0.5});
  auto y = layer_norm(Tensor({1, 3}, std::vector<double>{2, 2, 2}), g, b);
  for (double v : y.values()) CHECK(v == doctest::Approx(0.5));
  auto z = layer_norm(Tensor({1, 2}, std::vector<double>{1, -1}), vec({1, 1}), vec({0, 0}));
  CHECK(z.values()[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(z.values()[1] == doctest::Approx(-1.0).epsilon(1e-5));
}

TEST_CASE("softmax cases") {
  auto a = softmax(vec({0, 0}));
  CHECK(a.values()[0] == 0.5);
  auto b = softmax(vec({std::log(2.0), 0}));
  CHECK(b.values()[0] == doctest::Approx(2.0 / 3.0));
  CHECK(b.values()[1] == doctest::Approx(1.0 / 3.0));
  Rng rng(8);
  auto x = random_tensor({4, 5, 6}, rng, false, -30, 30);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    auto s = softmax(x, axis);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t k = 0; k < 6; ++k) {
          if ((axis == 0 && i > 0) || (axis == 1 && j > 0) || (axis == 2 && k > 0)) continue;
          double total = 0;
          for (std::size_t t = 0; t < x.dim(axis); ++t) {
            std::size_t ii = axis == 0 ? t : i, jj = axis == 1 ? t : j, kk = axis == 2 ? t : k;
            total += s.values()[(ii * 5 + jj) * 6 + kk];
          }
          CHECK(std::fabs(total - 1.0) <= 1e-9);
        }
  }
}

TEST_CASE("attention cases") {
  Rng rng(11);
  auto q = random_tensor({2, 3, 8}, rng), k = random_tensor({2, 3, 8}, rng), v = random_tensor({2, 3, 8}, rng);
  auto out = scaled_dot_attention(q, k, v);
  for (std::size_t n = 0; n < 2; ++n) {
    auto part = [&](const Tensor& t) {
      return std::vector<double>(t.values().begin() + static_cast<long>(n * 24),
                                 t.values().begin() + static_cast<long>((n + 1) * 24));
    };
    auto ref = ecgdk::testing::brute_attention(part(q), part(k), part(v), 3, 3, 8, 8);
    for (std::size_t i = 0; i < 24; ++i) CHECK(std::fabs(out.values()[n * 24 + i] - ref[i]) <= 1e-6);
  }
  // single key: output is that value row
  auto v1 = random_tensor({1, 1, 4}, rng);
  auto one = scaled_dot_attention(random_tensor({1, 2, 4}, rng), random_tensor({1, 1, 4}, rng), v1);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(one.values()[i] == doctest::Approx(v1.values()[i]));
    CHECK(one.values()[4 + i] == doctest::Approx(v1.values()[i]));
  }
  // identical keys: plain average of values
  std::vector<double> kv(3 * 4, 0.3);
  auto vv = random_tensor({1, 3, 4}, rng);
  auto avg = scaled_dot_attention(random_tensor({1, 1, 4}, rng), Tensor({1, 3, 4}, kv), vv);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(avg.values()[i] == doctest::Approx((vv.values()[i] + vv.values()[4 + i] + vv.values()[8 + i]) / 3));
}

TEST_CASE("float32 attention tracks the float64 path") {
  Rng rng(12);
  auto q = random_tensor({3, 40, 16}, rng), k = random_tensor({3, 40, 16}, rng), v = random_tensor({3, 40, 16}, rng);
  auto run = [&](bool narrow) {
    const bool saved = attention_float32();
    set_attention_float32(narrow);
    for (auto* t : {&q, &k, &v}) t->zero_grad();
    auto out = scaled_dot_attention(q, k, v);
    probe(out, 3).backward();
    set_attention_float32(saved);
    std::vector<double> all(out.values().begin(), out.values().end());
    for (auto* t : {&q, &k, &v}) all.insert(all.end(), t->grad().begin(), t->grad().end());
    return all;
  };
  const auto wide = run(false), narrow = run(true);
  REQUIRE(wide.size() == narrow.size());
  double scale = 0, worst = 0;
  for (std::size_t i = 0; i < wide.size(); ++i) {
    scale = std::max(scale, std::fabs(wide[i]));
    worst = std::max(worst, std::fabs(wide[i] - narrow[i]));
  }
  CHECK(worst <= 1e-5 * scale);
}

TEST_CASE("multi-head attention rejects bad head counts") {
  Rng rng(12);
  auto x = random_tensor({1, 2, 6}, rng);
  AttentionWeights w;
  for (Tensor* t : {&w.wq, &w.wk, &w.wv, &w.wo}) *t = random_tensor({6, 6}, rng);
  for (Tensor* t : {&w.bq, &w.bk, &w.bv, &w.bo}) *t = random_tensor({6}, rng);
  CHECK_THROWS_AS(multi_head_attention(x, x, x, w, 4), ContractError);
  CHECK(multi_head_attention(x, x, x, w, 3).shape() == Shape{1, 2, 6});
}

TEST_CASE("positional encoding") {
  auto pe = positional_encoding(50, 32);
  CHECK(pe.shape() == Shape{50, 32});
  for (std::size_t d = 0; d < 32; ++d) CHECK(pe.values()[d] == (d % 2 == 0 ? 0.0 : 1.0));
  CHECK(pe.values()[32] == doctest::Approx(0.8415).epsilon(1e-4));
  for (double v : pe.values()) CHECK(std::fabs(v) <= 1.0);
}

TEST_CASE("dropout") {
  Rng rng(13);
  auto x = random_tensor({1000}, rng, false);
  auto same = dropout(x, 0.0, &rng, true);
  CHECK(std::equal(same.values().begin(), same.values().end(), x.values().begin()));
  auto eval = dropout(x, 0.25, nullptr, false);
  CHECK(std::equal(eval.values().begin(), eval.values().end(), x.values().begin()));
  Tensor ones({100000}, std::vector<double>(100000, 1.0));
  auto d = dropout(ones, 0.25, &rng, true);
  std::size_t kept = 0;
  for (double v : d.values()) {
    if (v != 0.0) {
      ++kept;
      CHECK(v == doctest::Approx(1.0 / 0.75));
    }
  }
  CHECK(std::fabs(static_cast<double>(kept) / 1e5 - 0.75) <= 0.01);
}

TEST_CASE("cross entropy cases") {
  std::vector<int> t{0};
  CHECK(cross_entropy(Tensor({1, 3}, std::vector<double>{0, 0, 0}), t).item() == doctest::Approx(std::log(3.0)));
  CHECK(cross_entropy(Tensor({1, 3}, std::vector<double>{100, 0, 0}), t).item() <= 1e-30);
  std::vector<int> bad{3};
  CHECK_THROWS_AS(cross_entropy(Tensor({1, 3}), bad), ContractError);
}

TEST_CASE("backward basics") {
  auto x = Tensor::scalar(3.0, true);
  mul(x, x).backward();
  CHECK(x.grad()[0] == 6.0);
  auto y = Tensor::scalar(3.0, true);
  auto loss = mul(y, y);
  loss.backward();
  loss.backward();
  CHECK(y.grad()[0] == 12.0);
  y.zero_grad();
  CHECK(y.grad()[0] == 0.0);
  CHECK_THROWS_AS(Tensor({2}, std::vector<double>{1, 2}, true).backward(), ContractError);
}

TEST_CASE("non-finite values are rejected") {
  auto x = vec({1e308, 1e308});
  CHECK_THROWS_AS(add(x, x), NumericError);
}

TEST_CASE("no grad mode records nothing") {
  auto w = Tensor::scalar(2.0, true);
  NoGradGuard guard;
  auto y = mul(w, w);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("op gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed, 0x6C);
    const std::size_t b = 1 + rng.index(2), c = 1 + rng.index(3), len = 5 + rng.index(5);
    auto x = random_tensor({b, c, len}, rng), w = random_tensor({2, c, 3}, rng), bias = random_tensor({2}, rng);
    auto x2 = random_tensor({b, len}, rng), w2 = random_tensor({3, len}, rng), b2 = random_tensor({3}, rng);
    auto g = random_tensor({len}, rng), beta = random_tensor({len}, rng);
    auto q = random_tensor({b, 3, 4}, rng), k = random_tensor({b, 2, 4}, rng), v = random_tensor({b, 2, 4}, rng);
    std::vector<int> targets;
    for (std::size_t i = 0; i < b; ++i) targets.push_back(static_cast<int>(rng.index(3)));
    auto check = [&](const std::function<Tensor()>& f, std::vector<Tensor> in) {
      auto r = grad_check(f, std::move(in));
      CHECK(r.failed == 0);
    };
    check([&] { return probe(conv1d(x, w, bias, 1, 1), seed); }, {x, w, bias});
    check([&] { return probe(linear(x2, w2, b2), seed); }, {x2, w2, b2});
    check([&] { return probe(layer_norm(x2, g, beta), seed); }, {x2, g, beta});
    check([&] { return probe(softmax(x, 1), seed); }, {x});
    check([&] { return probe(scaled_dot_attention(q, k, v), seed); }, {q, k, v});
    check([&] { return cross_entropy(linear(x2, w2, b2), targets); }, {x2, w2, b2});
    check([&] { return probe(relu(linear(x2, w2, b2)), seed); }, {w2});
  }
}

TEST_CASE("identical forward and backward on repeat") {
  Rng a(3), b(3);
  auto xa = random_tensor({2, 4, 8}, a), xb = random_tensor({2, 4, 8}, b);
  auto fa = sum(softmax(mul(xa, xa))), fb = sum(softmax(mul(xb, xb)));
  fa.backward();
  fb.backward();
  CHECK(fa.item() == fb.item());
  CHECK(std::equal(xa.grad().begin(), xa.grad().end(), xb.grad().begin()));
}

TEST_CASE("checkpoint round trip") {
  auto dir = ecgdk::testing::scratch_dir("nn_ckpt");
  Rng rng(14);
  std::vector<NamedParam> params{{"a", random_tensor({2, 3}, rng)}, {"b", random_tensor({4}, rng)}};
  for (auto& p : params) round_to_float32(p.tensor.mutable_values());
  nlohmann::json manifest{{"seed", 14}};
  save_checkpoint(dir / "m.ckpt", manifest, params);
  auto ckpt = load_checkpoint(dir / "m.ckpt");
  CHECK(ckpt.manifest["seed"] == 14);
  std::vector<NamedParam> fresh{{"a", Tensor({2, 3})}, {"b", Tensor({4})}};
  assign_params(ckpt, fresh);
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(std::equal(fresh[i].tensor.values().begin(), fresh[i].tensor.values().end(),
                     params[i].tensor.values().begin()));
  std::vector<NamedParam> wrong{{"a", Tensor({3, 2})}, {"b", Tensor({4})}};
  CHECK_THROWS_AS(assign_params(ckpt, wrong), ContractError);
}

TEST_CASE("rng is reproducible") {
  Rng a(77, 3), b(77, 3), c(77, 4);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(77, 3).uniform() != c.uniform());
  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    CHECK(u.index(7) < 7);
  }
}
