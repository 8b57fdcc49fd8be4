#include <omp.h>

#include <cmath>

#include "doctest.h"
#include "nullctl/errors.hpp"
#include "nullctl/generators.hpp"
#include "nullctl/semilinear.hpp"

using namespace nullctl;

namespace {

constexpr double kKappa = 10.0;

struct Setup {
  ScenarioTree tree;
  SpatialMesh mesh;
  WeightParams wp;
  WeightSystem ws;
  ControlProblem prob;
  HumConfig cfg;

  Setup(Direction d, double lambda = 2.0, double mu = 2.0, int M = 21, int N = 6)
      : tree(build_tree(N, 0.5)),
        mesh(build_mesh(0, 1, M, {0.25, 0.45}, {0.30, 0.40})),
        wp(params(d, lambda, mu)),
        ws(wp, mesh, tree) {
    CoefficientSpec cs;
    if (d == Direction::Forward) cs.rho2 = 0.0;
    prob.coef = make_coefficients(cs, tree, mesh, 7);
    prob.terminal = random_adapted(tree, mesh, 3, 1.0, Support::Leaves);
    Rng rng(5);
    prob.initial = smooth_random(mesh, rng);
    cfg.direction = d;
    cfg.kappa = kKappa;
    cfg.cg_max_iters = 5000;
  }

  static WeightParams params(Direction d, double lambda, double mu) {
    WeightParams p;
    p.variant = d == Direction::Forward ? GammaVariant::ForwardRegularized
                                        : GammaVariant::BackwardRegularized;
    p.lambda = lambda;
    p.mu = mu;
    p.kappa = kKappa;
    return p;
  }
};

}  // namespace

TEST_CASE("built-in nonlinearities pass the Lipschitz audit") {
  for (const auto& name : nonlinearity_names())
    for (bool fwd : {false, true}) {
      auto F = make_nonlinearity(name, 1.5, fwd);
      auto a = audit_nonlinearity(F, 0.5, 1000, 17, fwd);
      CAPTURE(name);
      CHECK(a.pass);
      CHECK(a.zero_at_zero);
      CHECK(a.max_ratio <= 1.0);
    }
  Nonlinearity bad{"steep", 1.0, [](double, double, double y, double, double) { return 3.0 * y; }};
  CHECK_FALSE(audit_nonlinearity(bad, 0.5, 1000, 17).pass);
  Nonlinearity offset{"offset", 1.0, [](double, double, double y, double, double) { return 0.1 + 0.5 * y; }};
  auto a = audit_nonlinearity(offset, 0.5, 100, 17);
  CHECK_FALSE(a.zero_at_zero);
  CHECK_FALSE(a.pass);
  CHECK_THROWS_AS(make_nonlinearity("cubic", 1.0), ValidationError);
  CHECK_THROWS_AS(make_nonlinearity("linear", -1.0), ValidationError);
}

TEST_CASE("zero nonlinearity converges in one iteration to the linear solve") {
  Setup s(Direction::Backward);
  auto r = picard_backward(make_nonlinearity("zero", 0.0), s.prob, s.cfg, s.ws, s.tree, s.mesh);
  CHECK(r.trace.converged);
  CHECK(r.trace.iterations == 1);
  auto lin = solve_null_control(s.cfg, s.prob, s.ws, s.tree, s.mesh);
  CHECK(lin.control.u.raw() == r.control.control.u.raw());
  CHECK(lin.residual == r.control.residual);
}

TEST_CASE("backward Picard converges at L = 1") {
  Setup s(Direction::Backward);
  PicardOptions opt;
  auto r = picard_backward(make_nonlinearity("sin-tanh", 1.0), s.prob, s.cfg, s.ws, s.tree,
                           s.mesh, opt);
  REQUIRE(r.trace.converged);
  CHECK_FALSE(r.trace.diverged);
  CHECK(r.trace.iterations <= opt.max_iters);
  CHECK(std::exp(r.trace.steps.back().log_residual_B) < opt.tol);
  CHECK(r.trace.warnings.empty());
  // fixed point: F on the returned state reproduces the source
  auto Fy = apply_nonlinearity(make_nonlinearity("sin-tanh", 1.0), r.control.state.y,
                               r.control.state.Y, s.tree, s.mesh);
  HumFunctional f(s.cfg, s.prob, s.ws, s.tree, s.mesh);
  AdaptedField d = r.source;
  d *= -1.0;
  d += Fy;
  CHECK(std::exp(log_source_norm(d, f) - log_source_norm(Fy, f)) < opt.tol);
  CHECK(r.consistency < opt.tol);
  CHECK(r.control.residual <= 2.0 * s.cfg.eps * r.control.J0);
  for (std::size_t k = 1; k < r.trace.steps.size(); ++k) CHECK(r.trace.steps[k].rho < 1.0);
}

TEST_CASE("low parameters warn but still run") {
  Setup s(Direction::Backward, 1.0, 1.0);
  auto r = picard_backward(make_nonlinearity("sin-tanh", 1.0), s.prob, s.cfg, s.ws, s.tree, s.mesh);
  CHECK(r.trace.warnings.size() == 1);
  CHECK(r.trace.converged);
}

TEST_CASE("divergence is detected") {
  Setup s(Direction::Backward);
  PicardOptions opt;
  auto r = picard_backward(make_nonlinearity("linear", 500.0), s.prob, s.cfg, s.ws, s.tree,
                           s.mesh, opt);
  CHECK(r.trace.diverged);
  CHECK_FALSE(r.trace.converged);
  CHECK(r.trace.iterations < opt.max_iters);
  int run = 0;
  for (auto& st : r.trace.steps) run = st.rho > 1.0 ? run + 1 : 0;
  CHECK(run == opt.divergence_run);
}

TEST_CASE("contraction probe: ratios below one, linear in L, flat or falling in lambda") {
  Setup s(Direction::Backward);
  std::vector<std::pair<double, double>> grid{{1, 1}, {2, 1}, {4, 1}, {2, 2}};
  auto t1 = contraction_probe(make_nonlinearity("sin-tanh", 1.0), s.prob, s.cfg, s.wp, s.tree,
                              s.mesh, grid, 3, 11);
  auto t2 = contraction_probe(make_nonlinearity("sin-tanh", 2.0), s.prob, s.cfg, s.wp, s.tree,
                              s.mesh, grid, 3, 11);
  REQUIRE(t1.cells.size() == grid.size());
  CHECK(t1.trend_ok);
  for (std::size_t c = 0; c < grid.size(); ++c) {
    REQUIRE(t1.cells[c].ratios.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(t1.cells[c].ratios[j] < 1.0);
      CHECK(t1.cells[c].ratios[j] > 0.0);
      const double q = t2.cells[c].ratios[j] / t1.cells[c].ratios[j];
      CHECK(q == doctest::Approx(2.0).epsilon(0.2));
    }
  }
  CHECK_THROWS_AS(contraction_probe(make_nonlinearity("zero", 0.0), s.prob, s.cfg, s.wp, s.tree,
                                    s.mesh, {}, 3, 11),
                  ValidationError);
}

TEST_CASE("probe is thread-count independent") {
  Setup s(Direction::Backward);
  std::vector<std::pair<double, double>> grid{{1, 1}, {2, 1}, {4, 1}};
  auto F = make_nonlinearity("sin-tanh", 1.0);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    return contraction_probe(F, s.prob, s.cfg, s.wp, s.tree, s.mesh, grid, 2, 5);
  };
  auto a = run(1), b = run(3);
  for (std::size_t c = 0; c < grid.size(); ++c) CHECK(a.cells[c].ratios == b.cells[c].ratios);
}

TEST_CASE("forward Picard absorbs the diffusion nonlinearity into U") {
  Setup s(Direction::Forward);
  auto F1 = make_nonlinearity("sin-tanh", 1.0, true);
  auto F2 = make_nonlinearity("sin-tanh", 1.0, true);
  auto r = picard_forward(F1, F2, s.prob, s.cfg, s.ws, s.tree, s.mesh);
  REQUIRE(r.trace.converged);
  CHECK(r.consistency < 1e-8);
  CHECK(r.control.converged);
  CHECK(r.control.residual <= 2.0 * s.cfg.eps * r.control.J0);
  // U* = U - F2(y, grad y) pointwise
  const auto g = gradient_field(r.control.state.y, s.mesh);
  for (std::size_t k = 0; k < s.tree.interior_count(); ++k) {
    const double t = s.tree.time(ScenarioTree::depth(k));
    for (int i = 0; i < s.mesh.size(); ++i) {
      const double f2 = F2(t, s.mesh.x(i), r.control.state.y.at(k, i), g.at(k, i), 0.0);
      CHECK(r.U_star.at(k, i) == r.control.control.U.at(k, i) - f2);
    }
  }
  // F2 = 0 leaves U untouched
  auto r0 = picard_forward(F1, make_nonlinearity("zero", 0.0, true), s.prob, s.cfg, s.ws, s.tree,
                           s.mesh);
  CHECK(r0.U_star.raw() == r0.control.control.U.raw());
  CHECK(r0.control.control.U.raw() == r.control.control.U.raw());
}

TEST_CASE("semilinear drivers validate their inputs") {
  Setup s(Direction::Backward);
  auto F = make_nonlinearity("sin-tanh", 1.0);
  HumConfig fwd = s.cfg;
  fwd.direction = Direction::Forward;
  CHECK_THROWS_AS(picard_backward(F, s.prob, fwd, s.ws, s.tree, s.mesh), ValidationError);
  CHECK_THROWS_AS(picard_forward(F, F, s.prob, s.cfg, s.ws, s.tree, s.mesh), ValidationError);
  PicardOptions bad;
  bad.tol = 0.0;
  CHECK_THROWS_AS(picard_backward(F, s.prob, s.cfg, s.ws, s.tree, s.mesh, bad), ValidationError);
  ControlProblem p = s.prob;
  p.phi = AdaptedField(3, 2);
  CHECK_THROWS_AS(picard_backward(F, p, s.cfg, s.ws, s.tree, s.mesh), ValidationError);
}
