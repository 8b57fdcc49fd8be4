#include <cmath>
#include <limits>

#include "doctest.h"
#include "nullctl/errors.hpp"
#include "nullctl/seed.hpp"
#include "nullctl/weights.hpp"

using namespace nullctl;

namespace {

SpatialMesh std_mesh(int M = 99) { return build_mesh(0, 1, M, {0.25, 0.45}, {0.30, 0.40}); }

constexpr GammaVariant kAll[] = {GammaVariant::Backward, GammaVariant::BackwardRegularized,
                                 GammaVariant::Forward, GammaVariant::ForwardRegularized};

}  // namespace

TEST_CASE("spatial bump") {
  auto mesh = std_mesh();
  WeightBase base(mesh);
  CHECK(std::abs(base.beta(0.0)) < 1e-15);
  CHECK(std::abs(base.beta(1.0)) < 1e-15);
  for (double b : base.beta_grid()) {
    CHECK(b > 0.0);
    CHECK(b <= 1.0);
  }
  CHECK(base.beta_grid().front() > 0.0);
  CHECK(base.beta_grid().back() > 0.0);
  CHECK(base.beta(base.center()) == doctest::Approx(1.0).epsilon(1e-14));

  // single critical point, inside the inner interval
  int sign_changes = 0;
  double argmax = 0, best = -1;
  double prev = base.beta_prime(1e-6);
  for (int j = 1; j <= 20000; ++j) {
    const double x = j / 20000.0 * (1 - 2e-6) + 1e-6;
    const double d = base.beta_prime(x);
    if ((d > 0) != (prev > 0)) ++sign_changes;
    prev = d;
    if (base.beta(x) > best) best = base.beta(x), argmax = x;
  }
  CHECK(sign_changes == 1);
  CHECK(argmax > 0.30);
  CHECK(argmax < 0.40);

  // gradient floor by direct scan
  double a0 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < mesh.size(); ++i)
    if (!mesh.inner_mask()[i]) a0 = std::min(a0, std::abs(base.beta_prime(mesh.x(i))));
  CHECK(a0 == base.a0());
  CHECK(base.a0() > 0.0);

  // derivative against a central difference
  for (double x : {0.1, 0.33, 0.7}) {
    const double fd = (base.beta(x + 1e-6) - base.beta(x - 1e-6)) / 2e-6;
    CHECK(base.beta_prime(x) == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("off-centre inner interval needs several warps") {
  auto mesh = build_mesh(0, 1, 99, {0.05, 0.2}, {0.08, 0.12});
  WeightBase base(mesh);
  CHECK(base.warp_count() > 1);
  CHECK(base.beta(0.1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gamma closed forms") {
  const double T = 0.5;
  for (double m : {1.0, 2.0, 3.0}) {
    WeightParams p;
    p.m = m;
    Gamma g(GammaVariant::Backward, T, m, p.sigma());
    CHECK(g.value(T / 2) == 1.0);
    CHECK(g.value(0.6 * T) == 1.0);
    // the tail approaches 2 like 1 + (1 - 4 s / T)^sigma for s = T - t
    // (sigma is ~1e6 at m = 3, so the base rounding is amplified)
    CHECK(g.value(T - 1e-9) == doctest::Approx(1 + std::pow(1 - 4e-9 / T, p.sigma())).epsilon(1e-6));
    CHECK(g.value(T - 1e-9) > g.value(T - 1e-3));
    CHECK(g.value(T) == 2.0);
    CHECK_THROWS_AS(g.eval(0.0), SingularityError);
    CHECK(g.singular_at(0.0));
  }
  WeightParams p;
  Gamma g(GammaVariant::Backward, T, 1.0, p.sigma());
  CHECK(g.value(T / 8) == doctest::Approx(16.0).epsilon(1e-15));
  CHECK(g.eval(T / 8).d1 == doctest::Approx(-256.0).epsilon(1e-13));

  Gamma r(GammaVariant::BackwardRegularized, T, 1.0, p.sigma(), 0.01);
  CHECK(std::isfinite(r.value(0.0)));
  CHECK(r.value(0.0) == doctest::Approx(g.value(0.01)).epsilon(1e-14));
  CHECK(r.value(0.1) == doctest::Approx(g.value(0.11)).epsilon(1e-14));

  Gamma f(GammaVariant::Forward, T, 1.0, p.sigma());
  CHECK_THROWS_AS(f.eval(T), SingularityError);
  CHECK(f.value(0.0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(f.value(T - T / 8) == doctest::Approx(16.0).epsilon(1e-14));
  for (double t : {0.01, 0.1, 0.2, 0.3, 0.45})
    CHECK(f.value(t) == doctest::Approx(g.value(T - t)).epsilon(1e-13));

  Gamma fr(GammaVariant::ForwardRegularized, T, 1.0, p.sigma(), 0.01);
  CHECK(std::isfinite(fr.value(T)));
  CHECK(fr.value(T) == doctest::Approx(1.0 / 0.01).epsilon(1e-13));
}

TEST_CASE("gamma derivatives match finite differences") {
  WeightParams p;
  const double T = 0.5;
  for (auto v : kAll) {
    Gamma g(v, T, 1.0, p.sigma(), 0.01);
    for (double t : {0.05, 0.1, 0.15, 0.2, 0.3, 0.33, 0.36, 0.4, 0.44}) {
      const double e = 1e-6;
      const double fd1 = (g.value(t + e) - g.value(t - e)) / (2 * e);
      const double fd2 = (g.eval(t + e).d1 - g.eval(t - e).d1) / (2 * e);
      CHECK(g.eval(t).d1 == doctest::Approx(fd1).epsilon(1e-5).scale(1.0));
      CHECK(g.eval(t).d2 == doctest::Approx(fd2).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_CASE("gamma is C2 across every junction") {
  WeightParams p;
  const double T = 0.5;
  for (double m : {1.0, 2.0}) {
    for (auto v : kAll) {
      Gamma g(v, T, m, p.sigma(), 0.01);
      auto checks = check_junctions(g, 1e-4 * T);
      CHECK(!checks.empty());
      for (const auto& c : checks) {
        INFO(to_string(v), " m=", m, " t=", c.t, " jumps ", c.jump[0], " ", c.jump[1], " ",
             c.jump[2], " half ", c.jump_half[0], " ", c.jump_half[1], " ", c.jump_half[2]);
        CHECK(c.pass);
      }
    }
  }
}

TEST_CASE("bridges are monotone") {
  WeightParams p;
  const double T = 0.5;
  for (auto v : kAll) {
    Gamma g(v, T, 1.0, p.sigma(), 0.01);
    // backward-type profiles decrease up to T/2, forward ones increase after T/2
    const bool fwd = is_forward(v);
    const double lo = fwd ? T / 2 : 1e-3, hi = fwd ? T - 1e-3 : T / 2;
    double prev = g.value(lo);
    for (int j = 1; j <= 4000; ++j) {
      const double t = lo + (hi - lo) * j / 4000.0;
      const double cur = g.value(t);
      if (fwd) CHECK(cur >= prev - 1e-12 * prev);
      else CHECK(cur <= prev + 1e-12 * prev);
      prev = cur;
    }
  }
}

TEST_CASE("regularized profiles stay below the plain ones") {
  WeightParams p;
  const double T = 0.5;
  for (auto v : {GammaVariant::BackwardRegularized, GammaVariant::ForwardRegularized}) {
    for (double eps : {0.001, 0.01, 0.05, 0.1}) {
      Gamma g(v, T, 1.0, p.sigma(), eps);
      for (int j = 0; j <= 2000; ++j) {
        const double t = T * j / 2000.0;
        if (g.plain_singular_at(t)) continue;
        CHECK(g.value(t) <= g.eval_plain(t).value * (1 + 1e-14));
      }
    }
  }
}

TEST_CASE("gamma growth bound on the singular side") {
  WeightParams p;
  const double T = 0.5;
  for (double m : {1.0, 2.0}) {
    Gamma g(GammaVariant::Backward, T, m, p.sigma());
    double C = 0;
    for (int j = 1; j <= 10000; ++j) {
      const double t = T / 2 * j / 10000.0;
      auto v = g.eval(t);
      C = std::max(C, std::abs(v.d1) / (v.value * v.value));
    }
    // t^{-m}: |gamma'| / gamma^2 = m t^{m-1} <= m (T/4)^{m-1} on the head
    CHECK(C < 50.0);
    CHECK(std::isfinite(C));
  }
}

TEST_CASE("log weight closed forms") {
  auto mesh = std_mesh();
  auto tree = build_tree(8, 0.5);
  WeightParams p;
  p.variant = GammaVariant::Backward;
  WeightSystem ws(p, mesh, tree);
  const double xc = ws.base().center();
  const double t = 0.3;  // gamma = 1
  PowerSpec theta;
  theta.d = 1;
  CHECK(ws.log_weight(t, xc, theta) == doctest::Approx(std::exp(7.0) - std::exp(12.0)).epsilon(1e-13));
  CHECK(ws.log_weight(t, xc, theta) == doctest::Approx(-161658.16).epsilon(1e-7));
  PowerSpec xi;
  xi.c = 1;
  CHECK(ws.log_weight(t, xc, xi) == doctest::Approx(7.0).epsilon(1e-14));
  CHECK(ws.log_weight(t, xc, PowerSpec{}) == 0.0);

  // exact linearity in each exponent
  PowerSpec s{1.5, -2.0, 3.0, -0.5, 0.25};
  p.lambda = 2.0;
  p.mu = 1.5;
  WeightSystem w2(p, mesh, tree);
  const double x = 0.7;
  const double expect = 0.25 + 1.5 * std::log(2.0) - 2.0 * std::log(1.5) +
                        3.0 * w2.log_xi(t, x) - 0.5 * w2.ell(t, x);
  CHECK(w2.log_weight(t, x, s) == doctest::Approx(expect).epsilon(1e-14));

  // singular endpoint handling
  PowerSpec neg;
  neg.d = -2;
  CHECK(ws.log_weight(0.0, 0.5, theta) == -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(ws.log_weight(0.0, 0.5, neg), SingularityError);
  CHECK(ws.log_weight(0.0, 0.5, xi) == std::numeric_limits<double>::infinity());
}

TEST_CASE("weight system invariants on the cached grid") {
  auto mesh = std_mesh(41);
  auto tree = build_tree(8, 0.5);
  for (auto v : kAll) {
    for (double lambda : {1.0, 2.0}) {
      WeightParams p;
      p.variant = v;
      p.lambda = lambda;
      WeightSystem ws(p, mesh, tree);
      const bool reg = is_regularized(v);
      for (int n = 0; n <= tree.steps(); ++n) {
        for (int i = 0; i < mesh.size(); ++i) {
          const double l = ws.ell_node(n, i);
          const double lx = ws.log_xi_node(n, i);
          CHECK(l < 0.0);
          CHECK(lx >= 6.0 * p.mu * p.m);
          if (reg) {
            const double lr = ws.ell_node(n, i, true);
            CHECK(std::isfinite(lr));
            CHECK(lr >= l);
            CHECK(l - lr <= 0.0);
          }
        }
      }
      for (int n = 0; n < tree.steps(); ++n)
        for (int i = 0; i < mesh.size(); ++i) {
          CHECK(ws.ell_cell(n, i) < 0.0);
          CHECK(std::isfinite(ws.ell_cell(n, i)));
        }
    }
  }
}

TEST_CASE("weight parameter validation") {
  auto mesh = std_mesh(41);
  auto tree = build_tree(4, 0.5);
  WeightParams p;
  p.m = 0.5;
  CHECK_THROWS_AS(WeightSystem(p, mesh, tree), ValidationError);
  p = {};
  p.eps = 0.2;
  CHECK_THROWS_AS(WeightSystem(p, mesh, tree), ValidationError);
  p = {};
  p.kappa = 5;
  CHECK_THROWS_AS(WeightSystem(p, mesh, tree), ValidationError);
  p = {};
  p.lambda = 0.5;
  CHECK_THROWS_AS(WeightSystem(p, mesh, tree), ValidationError);
  p.lambda_min = 0.25;
  p.mu = 0.6;
  p.mu_min = 0.25;
  // sigma = 0.5 * 0.36 * e^{1.2} < 2
  CHECK_THROWS_AS(WeightSystem(p, mesh, tree), ValidationError);
  p.mu = 1.0;
  WeightSystem ws(p, mesh, tree);
  CHECK(!ws.warnings().empty());
  p = {};
  auto other = build_tree(4, 0.4);
  CHECK_THROWS_AS(WeightSystem(p, mesh, other), ValidationError);
  CHECK(parse_gamma_variant(to_string(GammaVariant::ForwardRegularized)) ==
        GammaVariant::ForwardRegularized);
  CHECK_THROWS_AS(parse_gamma_variant("sideways"), ValidationError);
}

TEST_CASE("weighted expectation norm") {
  auto mesh = build_mesh(0, 1, 9, {0.2, 0.9}, {0.3, 0.8});
  auto tree = build_tree(3, 0.5);
  WeightParams p;
  WeightSystem ws(p, mesh, tree);
  AdaptedField zero(tree, mesh.size());
  CHECK(weighted_expectation_norm(zero, PowerSpec{}, ws, tree, mesh) ==
        -std::numeric_limits<double>::infinity());

  Rng rng(7);
  AdaptedField f(tree, mesh.size());
  for (double& v : f.raw()) v = rng.normal();

  // linear-domain oracle with unit weights
  double direct = 0;
  for (int n = 0; n < tree.steps(); ++n)
    for (std::size_t k = ScenarioTree::level_begin(n); k < ScenarioTree::level_end(n); ++k)
      for (int i = 0; i < mesh.size(); ++i)
        direct += ScenarioTree::probability(k) * tree.dt() * mesh.h() * f.at(k, i) * f.at(k, i);
  CHECK(weighted_expectation_norm(f, PowerSpec{}, ws, tree, mesh) ==
        doctest::Approx(std::log(direct)).epsilon(1e-14));

  double term = 0, init = 0;
  const int N = tree.steps();
  for (std::size_t k = ScenarioTree::level_begin(N); k < ScenarioTree::level_end(N); ++k)
    for (int i = 0; i < mesh.size(); ++i)
      term += ScenarioTree::probability(k) * mesh.h() * f.at(k, i) * f.at(k, i);
  for (int i = 0; i < mesh.size(); ++i) init += mesh.h() * f.at(0, i) * f.at(0, i);
  CHECK(weighted_expectation_norm(f, PowerSpec{}, ws, tree, mesh, TimeSupport::Terminal) ==
        doctest::Approx(std::log(term)).epsilon(1e-14));
  CHECK(weighted_expectation_norm(f, PowerSpec{}, ws, tree, mesh, TimeSupport::Initial) ==
        doctest::Approx(std::log(init)).epsilon(1e-14));

  // a weight only through log_const, and a genuinely varying weight
  PowerSpec c;
  c.log_const = 2.5;
  CHECK(weighted_expectation_norm(f, c, ws, tree, mesh) ==
        doctest::Approx(std::log(direct) + 2.5).epsilon(1e-14));
  PowerSpec w{-3, -4, -3, -2};
  const double base = weighted_expectation_norm(f, w, ws, tree, mesh);
  CHECK(std::isfinite(base));
  double lin = 0;
  const double shift = ws.log_weight_cell(0, 0, w);
  for (int n = 0; n < tree.steps(); ++n)
    for (std::size_t k = ScenarioTree::level_begin(n); k < ScenarioTree::level_end(n); ++k)
      for (int i = 0; i < mesh.size(); ++i)
        lin += ScenarioTree::probability(k) * tree.dt() * mesh.h() * f.at(k, i) * f.at(k, i) *
               std::exp(ws.log_weight_cell(n, i, w) - shift);
  CHECK(base == doctest::Approx(std::log(lin) + shift).epsilon(1e-13));

  // homogeneity and the triangle-type bound
  AdaptedField f2 = f;
  f2 *= 2.0;
  CHECK(std::abs(weighted_expectation_norm(f2, w, ws, tree, mesh) - base - std::log(4.0)) <=
        1e-14 * std::abs(base));
  AdaptedField g(tree, mesh.size());
  for (double& v : g.raw()) v = rng.normal();
  AdaptedField s = f;
  s += g;
  const double lu = base, lv = weighted_expectation_norm(g, w, ws, tree, mesh);
  CHECK(weighted_expectation_norm(s, w, ws, tree, mesh) <= 2 * std::log(2.0) + std::max(lu, lv));

  // control region restricts the sum
  CHECK(weighted_expectation_norm(f, w, ws, tree, mesh, TimeSupport::Running, Region::Control) <=
        base);
}

TEST_CASE("log-sum helpers") {
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK(log_add(ninf, ninf) == ninf);
  CHECK(log_add(ninf, 1.0) == 1.0);
  CHECK(log_add(0.0, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(log_sum({1e5, 1e5}) == doctest::Approx(1e5 + std::log(2.0)).epsilon(1e-15));
  CHECK(log_sum({}) == ninf);
}
