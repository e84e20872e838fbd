#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "oracles.hpp"
#include "promptkit/order_align.hpp"
#include "promptkit/rng.hpp"

using namespace promptkit;

namespace {

Vector random_scores(std::size_t n, Rng& rng, bool integer) {
  Vector v(n);
  for (double& x : v) x = integer ? static_cast<double>(rng.below(5)) : rng.normal();
  return v;
}

}  // namespace

TEST_SUITE("order_align") {
  TEST_CASE("tau on identical and reversed orders") {
    const TauResult same = kendall_tau(Vector{1, 2, 3}, Vector{10, 20, 30});
    CHECK(same.tau == 1.0);
    CHECK(same.concordant == 3);
    CHECK(same.discordant == 0);
    CHECK(kendall_tau(Vector{1, 2, 3}, Vector{3, 2, 1}).tau == -1.0);
  }

  TEST_CASE("tau on a mixed three-element case") {
    const TauResult r = kendall_tau(Vector{3, 1, 2}, Vector{3, 2, 1});
    const oracle::Tau o = oracle::kendall({3, 1, 2}, {3, 2, 1});
    CHECK(r.concordant == 2);
    CHECK(r.discordant == 1);
    CHECK(r.concordant == static_cast<std::size_t>(o.concordant));
    CHECK(r.tau == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("tau ties count as neither and keep the full denominator") {
    const TauResult r = kendall_tau(Vector{1, 1, 2}, Vector{1, 2, 3});
    CHECK(r.concordant == 2);
    CHECK(r.discordant == 0);
    CHECK(r.tau == doctest::Approx(2.0 / 3.0));
  }

  TEST_CASE("tau matches brute force with and without ties") {
    Rng rng(101);
    for (int t = 0; t < 300; ++t) {
      const std::size_t n = 2 + rng.below(40);
      const bool integer = t % 2 == 0;
      const Vector a = random_scores(n, rng, integer);
      const Vector b = random_scores(n, rng, integer);
      const TauResult r = kendall_tau(a, b);
      const oracle::Tau o = oracle::kendall(a, b);
      CHECK(r.concordant == static_cast<std::size_t>(o.concordant));
      CHECK(r.discordant == static_cast<std::size_t>(o.discordant));
      CHECK(r.tau == o.tau);
    }
  }

  TEST_CASE("tau is symmetric and invariant under increasing transforms") {
    Rng rng(102);
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = 2 + rng.below(30);
      const Vector a = random_scores(n, rng, false);
      const Vector b = random_scores(n, rng, false);
      CHECK(kendall_tau(a, b).tau == kendall_tau(b, a).tau);
      Vector cubed = a, expd = b;
      for (double& x : cubed) x = x * x * x;
      for (double& x : expd) x = std::exp(x);
      CHECK(kendall_tau(cubed, expd).tau == kendall_tau(a, b).tau);
    }
  }

  TEST_CASE("tau input errors") {
    CHECK_THROWS_AS(kendall_tau(Vector{1, 2}, Vector{1}), std::invalid_argument);
    CHECK_THROWS_AS(kendall_tau(Vector{1}, Vector{1}), std::invalid_argument);
    CHECK_THROWS_AS(kendall_tau(Vector{1, NAN}, Vector{1, 2}), std::invalid_argument);
  }

  TEST_CASE("order loss on all-tied scores is zero with zero gradient") {
    const OrderLossResult r = order_loss(Vector(6, 0.0), Vector(6, 0.0));
    CHECK(r.loss == 0.0);
    for (double g : r.grad_a) CHECK(g == 0.0);
    for (double g : r.grad_b) CHECK(g == 0.0);
  }

  TEST_CASE("order loss saturates at -1 for concordant, widely spaced scores") {
    Vector a(8);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = 50.0 * static_cast<double>(i + 1);
    CHECK(order_loss(a, a).loss == doctest::Approx(-1.0).epsilon(1e-12));
  }

  TEST_CASE("order loss equals minus soft tau at unit scale") {
    Rng rng(103);
    const Vector a = random_scores(12, rng, false);
    const Vector b = random_scores(12, rng, false);
    CHECK(order_loss(a, b).loss == -soft_tau_convergence(a, b, 1.0));
  }

  TEST_CASE("order loss gradient matches central differences, N=16 seed 7") {
    Rng rng(7);
    const Vector a = random_scores(16, rng, false);
    const Vector b = random_scores(16, rng, false);
    const OrderLossResult r = order_loss(a, b);
    const auto fa = [&](const std::vector<double>& q) { return order_loss(q, b).loss; };
    const auto fb = [&](const std::vector<double>& q) { return order_loss(a, q).loss; };
    CHECK(oracle::max_rel_err(r.grad_a, oracle::central_diff(fa, a, 1e-5)) < 1e-4);
    CHECK(oracle::max_rel_err(r.grad_b, oracle::central_diff(fb, b, 1e-5)) < 1e-4);
  }

  TEST_CASE("order loss gradient over many seeds") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      const std::size_t n = 2 + rng.below(20);
      const Vector a = random_scores(n, rng, false);
      const Vector b = random_scores(n, rng, false);
      const OrderLossResult r = order_loss(a, b);
      const auto fa = [&](const std::vector<double>& q) { return order_loss(q, b).loss; };
      CHECK(oracle::max_rel_err(r.grad_a, oracle::central_diff(fa, a, 1e-5)) < 1e-4);
    }
  }

  TEST_CASE("soft tau limits") {
    Rng rng(104);
    Vector a(10), b(10);
    for (std::size_t i = 0; i < 10; ++i) {
      a[i] = static_cast<double>(i) + 0.1 * rng.uniform();
      b[i] = static_cast<double>((i * 3) % 10) + 0.1 * rng.uniform();
    }
    CHECK(std::abs(soft_tau_convergence(a, b, 1000.0) - kendall_tau(a, b).tau) < 1e-3);
    CHECK(soft_tau_convergence(a, b, 0.0) == 0.0);
    Vector mono(10);
    std::iota(mono.begin(), mono.end(), 0.0);
    CHECK(soft_tau_convergence(mono, mono, 100.0) >= 0.999);
    CHECK_THROWS_AS(soft_tau_convergence(Vector{1, 1, 2}, Vector{1, 2, 3}, 10.0), std::invalid_argument);
  }

  TEST_CASE("select queries tie-break and ordering") {
    CHECK(select_queries(Vector{1, 0, 0}, Vector{0, 0, 1}, 1) == std::vector<std::size_t>{0});
    CHECK(select_queries(Vector{3, 1, 2}, Vector{3, 1, 2}, 2) == std::vector<std::size_t>{0, 2});
    CHECK(select_queries(Vector{3, 1, 2}, Vector{0, 5, 0}, 3) == std::vector<std::size_t>{1, 0, 2});
    CHECK_THROWS_AS(select_queries(Vector{1, 2}, Vector{1, 2}, 3), std::invalid_argument);
    CHECK_THROWS_AS(select_queries(Vector{1, 2}, Vector{1, 2}, 1, 1.5), std::invalid_argument);
  }

  TEST_CASE("select queries agrees with a full sort") {
    Rng rng(105);
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = 1 + rng.below(30);
      const Vector a = random_scores(n, rng, true);
      const Vector b = random_scores(n, rng, true);
      const std::size_t k = rng.below(n + 1);
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return a[x] + b[x] > a[y] + b[y]; });
      idx.resize(k);
      CHECK(select_queries(a, b, k) == idx);
    }
  }

  TEST_CASE("gradient descent raises tau to near one") {
    Rng rng(106);
    const Vector a = random_scores(32, rng, false);
    const Vector b = random_scores(32, rng, false);
    const OrderDescentResult r = descend_order_loss(a, b, 0.1, 2000, 0.99);
    CHECK(r.final_tau >= 0.99);
    CHECK(r.final_tau > r.initial_tau);
    CHECK(r.iterations <= 2000);
  }
}
