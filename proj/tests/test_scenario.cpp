#include <cmath>

#include "doctest.h"
#include "nullctl/errors.hpp"
#include "nullctl/scenario.hpp"
#include "nullctl/seed.hpp"

using namespace nullctl;

TEST_CASE("tree construction") {
  auto t = build_tree(3, 0.5);
  CHECK(t.node_count() == 15);
  CHECK(t.dt() == doctest::Approx(1.0 / 6).epsilon(1e-15));
  auto t1 = build_tree(1, 0.5);
  CHECK(t1.node_count() == 3);
  // one step over T = 0.5: dW = +-sqrt(0.5)
  CHECK(t1.increment(1) == std::sqrt(0.5));
  CHECK(t1.increment(2) == -std::sqrt(0.5));
  CHECK(build_tree(1, 0.25).increment(1) == 0.5);
  CHECK_THROWS_AS(build_tree(20, 0.5), ValidationError);
  CHECK_THROWS_AS(build_tree(0, 0.5), ValidationError);
  CHECK_THROWS_AS(build_tree(3, 1.0), ValidationError);
}

TEST_CASE("increment moments and leaf probabilities are exact") {
  auto t = build_tree(6, 0.4);
  double prob = 0;
  for (std::size_t k = ScenarioTree::level_begin(6); k < ScenarioTree::level_end(6); ++k)
    prob += ScenarioTree::probability(k);
  CHECK(prob == 1.0);
  const double m1 = 0.5 * (t.increment(1) + t.increment(2));
  const double m2 = 0.5 * (t.increment(1) * t.increment(1) + t.increment(2) * t.increment(2));
  CHECK(m1 == 0.0);
  CHECK(m2 == doctest::Approx(t.dt()).epsilon(1e-15));
  CHECK(ScenarioTree::path(0).empty());
  CHECK(ScenarioTree::path(ScenarioTree::up(ScenarioTree::down(0))) == "du");
  CHECK(ScenarioTree::depth(ScenarioTree::level_begin(5)) == 5);
}

TEST_CASE("expectation: constants, one level, martingale mean") {
  auto t = build_tree(5, 0.5);
  AdaptedField c(t, 3, 2.5);
  for (int d = 0; d <= 5; ++d)
    for (double v : expectation(c, t, d)) CHECK(v == 2.5);
  AdaptedField f(t, 1);
  f.at(1, 0) = 3.0;
  f.at(2, 0) = -1.0;
  CHECK(expectation(f, t, 1)[0] == 1.0);
  AdaptedField w(t, 1);
  for (std::size_t k = 0; k < t.node_count(); ++k) w.at(k, 0) = t.path_value(k);
  for (int d = 0; d <= 5; ++d) {
    // brute force over all paths at depth d
    double s = 0;
    for (std::size_t k = ScenarioTree::level_begin(d); k < ScenarioTree::level_end(d); ++k)
      s += w.at(k, 0);
    CHECK(std::abs(s) < 1e-12);
    CHECK(std::abs(expectation(w, t, d)[0]) < 1e-15);
  }
}

TEST_CASE("tower property holds bit for bit") {
  auto t = build_tree(6, 0.5);
  Rng rng(11);
  AdaptedField f(t, 4);
  for (double& v : f.raw()) v = rng.normal();
  for (int d = 1; d <= 6; ++d) {
    const auto direct = expectation(f, t, d);
    for (int j = 0; j < d; ++j) {
      AdaptedField ce(t, 4);
      for (std::size_t k = ScenarioTree::level_begin(j); k < ScenarioTree::level_end(j); ++k) {
        auto v = conditional_expectation(f, k, d);
        std::copy(v.begin(), v.end(), ce.node(k).begin());
      }
      const auto nested = expectation(ce, t, j);
      for (int i = 0; i < 4; ++i) CHECK(nested[i] == direct[i]);
    }
  }
}

TEST_CASE("martingale coefficient") {
  std::vector<double> up{2.0}, dn{0.0};
  CHECK(martingale_coefficient(up, dn, 0.01)[0] == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(martingale_coefficient(up, up, 0.01)[0] == 0.0);
  Rng rng(3);
  for (int r = 0; r < 100; ++r) {
    const double dt = rng.uniform(1e-4, 0.3);
    std::vector<double> u{rng.normal()}, d{rng.normal()};
    const double z = martingale_coefficient(u, d, dt)[0];
    const double mean = 0.5 * (u[0] + d[0]);
    CHECK(std::abs(mean + z * std::sqrt(dt) - u[0]) <= 1e-14 * (1 + std::abs(u[0])));
    CHECK(std::abs(mean - z * std::sqrt(dt) - d[0]) <= 1e-14 * (1 + std::abs(d[0])));
  }
}

TEST_CASE("discrete Ito isometry") {
  auto t = build_tree(8, 0.5);
  Rng rng(5);
  AdaptedField Z(t, 1);
  for (double& v : Z.raw()) v = rng.normal();
  // stochastic integral along each path and accumulated Z^2 dt
  AdaptedField I(t, 1), Q(t, 1);
  for (std::size_t k = 1; k < t.node_count(); ++k) {
    const std::size_t p = ScenarioTree::parent(k);
    I.at(k, 0) = I.at(p, 0) + Z.at(p, 0) * t.increment(k);
    Q.at(k, 0) = Q.at(p, 0) + Z.at(p, 0) * Z.at(p, 0) * t.dt();
  }
  AdaptedField I2 = I;
  for (double& v : I2.raw()) v *= v;
  const double lhs = expectation(I2, t, 8)[0];
  const double rhs = expectation(Q, t, 8)[0];
  CHECK(std::abs(lhs - rhs) <= 1e-13 * rhs);
}

TEST_CASE("coefficient sampler") {
  auto t = build_tree(5, 0.5);
  auto m = build_mesh(0, 1, 21, {0.25, 0.45}, {0.3, 0.4});
  auto a0 = sample_adapted_coefficients(t, m, 1, 0.5, 1.5, 0.0);
  for (int d = 0; d <= 5; ++d)
    for (std::size_t k = ScenarioTree::level_begin(d); k < ScenarioTree::level_end(d); ++k)
      for (int i = 0; i < m.size(); ++i) CHECK(a0.at(k, i) == a0.at(0, i));
  auto a1 = sample_adapted_coefficients(t, m, 1, 0.5, 1.5, 2.0);
  auto a2 = sample_adapted_coefficients(t, m, 2, 0.5, 1.5, 2.0);
  bool differ = false;
  for (std::size_t j = 0; j < a1.raw().size(); ++j) {
    CHECK(a1.raw()[j] >= 0.5);
    CHECK(a2.raw()[j] >= 0.5);
    CHECK(a1.raw()[j] <= 1.5);
    differ = differ || a1.raw()[j] != a2.raw()[j];
  }
  CHECK(differ);
}

TEST_CASE("measurability probe") {
  auto t = build_tree(4, 0.5);
  AdaptedField c(t, 3, 1.25);
  CHECK(measurability_probe(c, t));
  // a random-walk field passes with its own transition rule
  AdaptedField w(t, 1);
  for (std::size_t k = 0; k < t.node_count(); ++k) w.at(k, 0) = t.path_value(k);
  auto step = [&](std::span<const double> parent, std::size_t child, std::span<double> out) {
    out[0] = parent[0] + t.increment(child);
  };
  CHECK(measurability_probe(w, t, step));
  // an ancestor overwritten with data from one of its future leaves
  AdaptedField bad = w;
  bad.at(1, 0) = w.at(ScenarioTree::level_begin(4) + 1, 0);
  CHECK_FALSE(measurability_probe(bad, t, step));
}

TEST_CASE("seed splitting") {
  CHECK(seed_split(42, "carleman/C1/7") == seed_split(42, "carleman/C1/7"));
  CHECK(seed_split(42, "a") != seed_split(42, "b"));
  CHECK(seed_split(42, "a") != seed_split(43, "a"));
  const auto child = seed_split(42, "member");
  CHECK(seed_split(child, "x") == seed_split(seed_split(42, "member"), "x"));
  CHECK_THROWS_AS(seed_split(1, ""), ValidationError);
}
