#include <cmath>
#include <vector>

#include "doctest.h"
#include "dractrl/error.hpp"
#include "dractrl/numerics/ops.hpp"
#include "dractrl/numerics/optim.hpp"
#include "dractrl/numerics/rng.hpp"
#include "gradcheck.hpp"

using namespace dractrl;
using Tf = Tensor<float>;
using Td = Tensor<double>;

TEST_CASE("matmul examples") {
  auto eye = Td::from_values({2, 2}, {1, 0, 0, 1});
  auto m = Td::from_values({2, 2}, {1, 2, 3, 4});
  auto prod = matmul(eye, m);
  CHECK(std::vector<double>(prod.values().begin(), prod.values().end()) == std::vector<double>{1, 2, 3, 4});

  auto col = Td::from_values({2, 1}, {0, 1});
  auto r = matmul(m, col);
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r.at(0) == 2);
  CHECK(r.at(1) == 4);

  auto z = matmul(Td::zeros({2, 2}), Td::from_values({2, 3}, {1, 2, 3, 4, 5, 6}));
  for (auto v : z.values()) CHECK(v == 0);
}

TEST_CASE("matmul errors") {
  CHECK_THROWS_AS(matmul(Td::zeros({2, 3}), Td::zeros({2, 3})), DimensionError);
  auto big = Tf::from_values({1, 1}, {3e38f});
  CHECK_THROWS_AS(matmul(big, big), NumericError);
}

TEST_CASE("masked_softmax examples") {
  auto p = masked_softmax(Td::zeros({1, 4}), Td::zeros({1, 4}));
  for (auto v : p.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  auto one = masked_softmax(Td::from_values({1, 2}, {5, 5}), Td::from_values({1, 2}, {0, kBlockedScore}));
  CHECK(one.at(0) == doctest::Approx(1.0));
  CHECK(one.at(1) <= 1e-12);

  auto two = masked_softmax(Td::from_values({1, 2}, {1, 0}), Td::zeros({1, 2}));
  const double e = std::exp(1.0);
  CHECK(std::abs(two.at(0) - e / (e + 1)) < 1e-12);
  CHECK(std::abs(two.at(1) - 1 / (e + 1)) < 1e-12);
}

TEST_CASE("masked_softmax rejects a fully blocked row") {
  auto mask = Td::from_values({2, 2}, {0, kBlockedScore, kBlockedScore, kBlockedScore});
  CHECK_THROWS_AS(masked_softmax(Td::zeros({2, 2}), mask), DegenerateRowError);
  CHECK_THROWS_AS(masked_softmax(Td::zeros({1, 2}), Td::from_values({1, 2}, {0, -3})), DomainError);
}

TEST_CASE("masked_softmax rows sum to one and blocked mass vanishes") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.uniform_int(0, 6), n = 1 + rng.uniform_int(0, 9);
    auto scores = scale(gaussian<float>(rng, {m, n}), 5.0f);
    std::vector<float> mask(m * n, 0.0f);
    for (std::size_t r = 0; r < m; ++r) {
      const auto keep = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
      for (std::size_t c = 0; c < n; ++c)
        if (c != keep && rng.bernoulli(0.5)) mask[r * n + c] = static_cast<float>(kBlockedScore);
    }
    auto p = masked_softmax(scores, Tf::from_values({m, n}, mask));
    for (std::size_t r = 0; r < m; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < n; ++c) {
        total += p.at(r * n + c);
        if (mask[r * n + c] != 0) CHECK(p.at(r * n + c) <= 1e-12);
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("rms_norm examples") {
  auto ones = Td::from_values({2}, {1, 1});
  auto a = rms_norm(Td::from_values({1, 2}, {2, 2}), ones);
  CHECK(a.at(0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(a.at(1) == doctest::Approx(1.0).epsilon(1e-6));

  auto z = rms_norm(Td::from_values({1, 2}, {0, 0}), ones);
  CHECK(z.at(0) == 0);
  CHECK(z.at(1) == 0);

  auto b = rms_norm(Td::from_values({1, 2}, {3, 4}), ones);
  CHECK(std::abs(b.at(0) - 3 / std::sqrt(12.5)) < 1e-6);
  CHECK(std::abs(b.at(1) - 4 / std::sqrt(12.5)) < 1e-6);

  // Constant gain g rescales output RMS to |g|.
  Rng rng(3);
  auto x = gaussian<double>(rng, {4, 16});
  auto y = rms_norm(x, Td::full({16}, 2.5));
  for (std::size_t r = 0; r < 4; ++r) {
    double ss = 0;
    for (std::size_t c = 0; c < 16; ++c) ss += y.at(r * 16 + c) * y.at(r * 16 + c);
    CHECK(std::abs(std::sqrt(ss / 16) - 2.5) < 1e-5);
  }
}

TEST_CASE("backward examples") {
  auto x = Td::parameter({2}, {1, 2});
  backward(sum(square(x)));
  CHECK(x.grad()[0] == 4 / 2.0);
  CHECK(x.grad()[1] == 4);

  // Repeated calls accumulate into leaves.
  backward(sum(square(x)));
  CHECK(x.grad()[0] == 4);

  auto w = Td::parameter({2}, {1, 2});
  auto c = Td::scalar(3.0);
  backward(c);
  CHECK(w.grad()[0] == 0);
  CHECK(w.grad()[1] == 0);

  CHECK_THROWS_AS(backward(add(w, w)), DimensionError);
}

TEST_CASE("no-grad guard records nothing") {
  auto w = Td::parameter({2}, {1, 2});
  NoGradGuard guard;
  auto y = sum(square(w));
  CHECK_FALSE(y.requires_grad());
}

namespace {

// Three dense layers touching every differentiable op.
template <typename T>
struct Composition {
  Tensor<T> x, w1, w2, w3, gain, shift, scl, gate, table;
  std::vector<std::int32_t> ids{2, 0, 1, 2};

  explicit Composition(std::uint64_t seed) {
    Rng rng(seed);
    auto param = [&](Shape s, double sd) {
      auto t = gaussian<T>(rng, s);
      std::vector<T> v(t.values().begin(), t.values().end());
      for (auto& e : v) e = static_cast<T>(e * sd);
      return Tensor<T>::parameter(s, v);
    };
    x = param({4, 6}, 1.0);
    w1 = param({6, 8}, 0.5);
    w2 = param({5, 8}, 0.5);
    w3 = param({5, 4}, 0.5);
    gain = param({8}, 1.0);
    shift = param({5}, 0.3);
    scl = param({5}, 0.3);
    gate = param({5}, 1.0);
    table = param({3, 5}, 1.0);
  }

  std::vector<Tensor<T>*> params() { return {&x, &w1, &w2, &w3, &gain, &shift, &scl, &gate, &table}; }

  Tensor<T> loss() {
    auto h = rms_norm(matmul(x, w1), gain);
    auto h2 = silu(matmul_nt(h, w2));
    auto emb = gather_rows(table, std::span<const std::int32_t>(ids));
    auto m = modulate(h2, shift, scl);
    auto mixed = gated_add(m, gate, emb);
    auto scores = matmul(mixed, w3);
    std::vector<T> mask(16, T(0));
    mask[1] = static_cast<T>(kBlockedScore);
    mask[6] = static_cast<T>(kBlockedScore);
    auto p = masked_softmax(scores, Tensor<T>::from_values({4, 4}, mask));
    auto stacked = concat_rows<T>({slice_rows(p, 0, 2), slice_rows(p, 2, 4)});
    const std::vector<T> rs{T(1), T(-2), T(0.5), T(3)};
    auto out = add(row_scale(stacked, std::span<const T>(rs)), sub(p, scale(p, T(0.25))));
    return add(sum(mul(out, out)), mean(square(mean_rows(mixed))));
  }
};

// Analytic gradients of Composition<T> against central differences taken on
// a 64-bit copy of the same parameters. In 32-bit the differenced loss
// itself carries ~1e-7 relative rounding, which at h=1e-3 swamps the
// signal for small gradients; the 64-bit copy removes that noise floor.
template <typename T>
double max_gradcheck_error(double h) {
  Composition<T> comp(7);
  backward(comp.loss());
  Composition<double> oracle(7);
  auto src = comp.params();
  auto dst = oracle.params();
  for (std::size_t p = 0; p < src.size(); ++p) {
    auto out = dst[p]->mutable_values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(src[p]->at(i));
  }
  double worst = 0;
  for (std::size_t p = 0; p < src.size(); ++p) {
    for (std::size_t i = 0; i < src[p]->numel(); ++i) {
      const double numeric = testing::central_difference(*dst[p], i, h, [&] {
        NoGradGuard guard;
        return oracle.loss().item();
      });
      worst = std::max(worst, testing::relative_error(src[p]->grad()[i], numeric));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("analytic gradients match central differences (64-bit)") {
  CHECK(max_gradcheck_error<double>(1e-5) < 1e-6);
}

TEST_CASE("analytic gradients match central differences (32-bit)") {
  CHECK(max_gradcheck_error<float>(1e-3) < 1e-3);
}

TEST_CASE("gaussian determinism and statistics") {
  Rng a(42, 1), b(42, 1), c(42, 2);
  auto ta = gaussian<float>(a, {64});
  auto tb = gaussian<float>(b, {64});
  auto tc = gaussian<float>(c, {64});
  bool differs = false;
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(ta.at(i) == tb.at(i));
    differs |= ta.at(i) != tc.at(i);
  }
  CHECK(differs);

  Rng big(0);
  auto s = gaussian<double>(big, {1000000});
  double mu = 0, var = 0;
  for (auto v : s.values()) mu += v;
  mu /= 1e6;
  for (auto v : s.values()) var += (v - mu) * (v - mu);
  var /= 1e6;
  CHECK(std::abs(mu) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("rng fork and integer range") {
  Rng r(5);
  auto f1 = r.fork(1), f2 = r.fork(1), f3 = r.fork(2);
  CHECK(f1.next_u64() == f2.next_u64());
  CHECK(r.fork(1).next_u64() != f3.next_u64());
  std::vector<int> seen(4, 0);
  for (int i = 0; i < 1000; ++i) seen[static_cast<std::size_t>(r.uniform_int(0, 3))]++;
  for (auto n : seen) CHECK(n > 150);
}

TEST_CASE("adamw examples") {
  SUBCASE("zero gradient, no decay is a fixed point") {
    std::vector<Tf> params{Tf::parameter({3}, {1, -2, 3})};
    OptimizerState<float> st(AdamWSettings{0.1, 0.9, 0.999, 1e-8, 0.0}, params);
    std::vector<std::vector<float>> grads{{0, 0, 0}};
    adamw_step<float>(st, params, grads);
    CHECK(params[0].at(0) == 1);
    CHECK(params[0].at(1) == -2);
    CHECK(st.step == 1);
  }
  SUBCASE("first step with unit gradient moves by lr") {
    std::vector<Td> params{Td::parameter({1}, {0.5})};
    OptimizerState<double> st(AdamWSettings{0.1, 0.9, 0.999, 1e-8, 0.0}, params);
    std::vector<std::vector<double>> grads{{1.0}};
    adamw_step<double>(st, params, grads);
    // m_hat = v_hat = 1, so the update is lr / (1 + eps).
    CHECK(std::abs((params[0].at(0) - 0.5) - (-0.1 / (1 + 1e-8))) < 1e-12);
  }
  SUBCASE("decoupled decay with zero moments") {
    std::vector<Td> params{Td::parameter({1}, {2.0})};
    OptimizerState<double> st(AdamWSettings{0.1, 0.9, 0.999, 1e-8, 0.5}, params);
    std::vector<std::vector<double>> grads{{0.0}};
    adamw_step<double>(st, params, grads);
    CHECK(std::abs(params[0].at(0) - (2.0 - 0.1 * 0.5 * 2.0)) < 1e-12);
  }
  SUBCASE("non-finite gradient aborts without touching state") {
    std::vector<Td> params{Td::parameter({2}, {1.0, 2.0})};
    OptimizerState<double> st(AdamWSettings{}, params);
    std::vector<std::vector<double>> grads{{1.0, NAN}};
    CHECK_THROWS_AS(adamw_step<double>(st, params, grads), NumericError);
    CHECK(params[0].at(0) == 1.0);
    CHECK(st.step == 0);
  }
}
