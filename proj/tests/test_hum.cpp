#include <cmath>
#include <limits>

#include "doctest.h"
#include "nullctl/errors.hpp"
#include "nullctl/generators.hpp"
#include "nullctl/hum.hpp"
#include "oracles.hpp"

using namespace nullctl;

namespace {

struct Setup {
  ScenarioTree tree;
  SpatialMesh mesh;
  WeightSystem ws;
  ControlProblem prob;

  Setup(int M, int N, GammaVariant v, std::uint64_t seed, Interval ctrl = {0.25, 0.45},
        Interval inner = {0.30, 0.40})
      : tree(build_tree(N, 0.5)),
        mesh(build_mesh(0, 1, M, ctrl, inner)),
        ws(params(v), mesh, tree) {
    prob.coef = make_coefficients({}, tree, mesh, seed);
    prob.terminal = random_adapted(tree, mesh, seed_split(seed, "yT"), 1.0, Support::Leaves);
    Rng rng(seed_split(seed, "z0"));
    prob.initial = smooth_random(mesh, rng);
  }

  static WeightParams params(GammaVariant v) {
    WeightParams p;
    p.variant = v;
    return p;
  }
};

HumConfig config(Direction d, double eps = 1e-2, double kappa = 30.0) {
  HumConfig c;
  c.direction = d;
  c.eps = eps;
  c.kappa = kappa;
  return c;
}

// smallest admissible clamp: conditioning keeps double-precision agreement
// with the dense solves well below the tolerances
constexpr double kWellConditioned = 10.0;

Control combo(const Control& x, double t, const Control& d) {
  Control out = x, dd = d;
  dd.u *= t;
  out.u += dd.u;
  if (!out.U.empty()) {
    dd.U *= t;
    out.U += dd.U;
  }
  return out;
}

double rel(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0 ? 0.0 : std::abs(a - b) / s;
}

}  // namespace

TEST_CASE("zero data gives the zero control") {
  Setup s(21, 5, GammaVariant::BackwardRegularized, 1);
  s.prob.terminal = AdaptedField(s.tree, s.mesh.size());
  auto cfg = config(Direction::Backward);
  auto r = solve_null_control(cfg, s.prob, s.ws, s.tree, s.mesh);
  CHECK(r.J == 0.0);
  CHECK(r.J0 == 0.0);
  CHECK(r.residual == 0.0);
  CHECK(r.converged);
  for (double v : r.control.u.raw()) CHECK(v == 0.0);
}

TEST_CASE("functional gradient matches central differences") {
  for (auto dir : {Direction::Backward, Direction::Forward}) {
    Setup s(21, 6,
            dir == Direction::Backward ? GammaVariant::BackwardRegularized
                                       : GammaVariant::ForwardRegularized,
            2);
    HumFunctional f(config(dir), s.prob, s.ws, s.tree, s.mesh);
    Control x = f.random(11);
    Control g = f.gradient(x);
    double worst = 0;
    for (int j = 0; j < 10; ++j) {
      Control d = f.random(100 + j);
      const double t = 0.5;
      const double fd = (f.value(combo(x, t, d)) - f.value(combo(x, -t, d))) / (2 * t);
      worst = std::max(worst, rel(fd, f.inner(g, d)));
    }
    INFO(to_string(dir));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("functional is exactly quadratic along a line") {
  Setup s(21, 5, GammaVariant::BackwardRegularized, 3);
  HumFunctional f(config(Direction::Backward), s.prob, s.ws, s.tree, s.mesh);
  Control x = f.random(5), d = f.random(6);
  const double J = f.value(x);
  const double slope = f.inner(f.gradient(x), d);
  const double curv = f.inner(d, f.hessian(d));
  CHECK(curv > 0);
  for (double t : {-2.0, 0.3, 1.7}) {
    const double model = J + t * slope + 0.5 * t * t * curv;
    CHECK(rel(f.value(combo(x, t, d)), model) < 1e-10);
  }
}

TEST_CASE("CG minimizer matches the dense normal equations") {
  for (auto dir : {Direction::Backward, Direction::Forward}) {
    Setup s(5, 3,
            dir == Direction::Backward ? GammaVariant::BackwardRegularized
                                       : GammaVariant::ForwardRegularized,
            4, {0.3, 0.7}, {0.4, 0.6});
    HumFunctional f(config(dir, 1e-2, kWellConditioned), s.prob, s.ws, s.tree, s.mesh);
    auto r = solve_null_control(f);
    auto ref = oracle::dense_hum(f, s.prob);
    INFO(to_string(dir));
    CHECK(r.converged);
    CHECK(oracle::control_gap(f, r.control, ref) < 1e-8);
  }
}

TEST_CASE("noise-free frozen problem matches the deterministic oracle") {
  Setup s(21, 6, GammaVariant::BackwardRegularized, 5);
  CoefficientSpec spec;
  spec.deterministic = true;
  s.prob.coef = make_coefficients(spec, s.tree, s.mesh, 5);
  s.prob.coef.rho2 = AdaptedField();
  Rng rng(9);
  auto yT = smooth_random(s.mesh, rng);
  s.prob.terminal = AdaptedField(s.tree, s.mesh.size());
  for (std::size_t k = ScenarioTree::level_begin(6); k < ScenarioTree::level_end(6); ++k)
    for (int i = 0; i < s.mesh.size(); ++i) s.prob.terminal.at(k, i) = yT[i];
  HumFunctional f(config(Direction::Backward, 1e-2, kWellConditioned), s.prob, s.ws, s.tree,
                 s.mesh);
  auto r = solve_null_control(f);
  auto det = oracle::deterministic_hum(f, s.prob);
  Control ref = f.zero();
  for (std::size_t k = 0; k < s.tree.interior_count(); ++k)
    for (int i = 0; i < s.mesh.size(); ++i) ref.u.at(k, i) = det[ScenarioTree::depth(k)][i];
  CHECK(oracle::control_gap(f, r.control, ref) < 1e-6);
}

TEST_CASE("penalized solution properties") {
  for (auto dir : {Direction::Backward, Direction::Forward}) {
    Setup s(21, 6,
            dir == Direction::Backward ? GammaVariant::BackwardRegularized
                                       : GammaVariant::ForwardRegularized,
            6);
    auto cfg = config(dir, 1e-3, dir == Direction::Backward ? 30.0 : kWellConditioned);
    cfg.cg_max_iters = 5000;
    auto r = solve_null_control(cfg, s.prob, s.ws, s.tree, s.mesh);
    INFO(to_string(dir));
    CHECK(r.converged);
    CHECK(r.J <= r.J0);
    CHECK(r.residual <= 2 * cfg.eps * r.J0);
    for (std::size_t j = 1; j < r.trace.size(); ++j)
      CHECK(r.trace[j].J <= r.trace[j - 1].J + 1e-12 * r.J0);
    for (std::size_t k = 0; k < s.tree.node_count(); ++k)
      for (int i = 0; i < s.mesh.size(); ++i)
        if (!s.mesh.ctrl_mask()[i]) CHECK(r.control.u.at(k, i) == 0.0);
    // leaves carry no control
    for (std::size_t k = s.tree.interior_count(); k < s.tree.node_count(); ++k)
      for (int i = 0; i < s.mesh.size(); ++i) CHECK(r.control.u.at(k, i) == 0.0);
    CHECK(r.gate < 1e-9);
  }
}

TEST_CASE("common weight scale with rescaled eps keeps the minimizer") {
  Setup s(21, 5, GammaVariant::BackwardRegularized, 7);
  auto a = config(Direction::Backward, 1e-2);
  auto b = a;
  b.weight_scale = 8.0;
  b.eps = a.eps / 8.0;
  HumFunctional fa(a, s.prob, s.ws, s.tree, s.mesh), fb(b, s.prob, s.ws, s.tree, s.mesh);
  auto ra = solve_null_control(fa);
  auto rb = solve_null_control(fb);
  CHECK(oracle::control_gap(fa, rb.control, ra.control) < 1e-8);
  CHECK(rel(rb.J, 8.0 * ra.J) < 1e-8);
}

TEST_CASE("epsilon sweep") {
  Setup s(21, 6, GammaVariant::BackwardRegularized, 8);
  auto cfg = config(Direction::Backward);
  auto sw = epsilon_sweep(cfg, s.prob, s.ws, s.tree, s.mesh, {1e-1, 1e-2, 1e-3});
  REQUIRE(sw.rows.size() == 3);
  CHECK(sw.slope_defined);
  CHECK(sw.rows[2].residual < sw.rows[0].residual);
  CHECK(sw.control_ratio >= 1.0);

  s.prob.terminal = AdaptedField(s.tree, s.mesh.size());
  auto z = epsilon_sweep(cfg, s.prob, s.ws, s.tree, s.mesh, {1e-1, 1e-2, 1e-3});
  CHECK_FALSE(z.slope_defined);
  CHECK(std::isnan(z.slope));

  CHECK_THROWS_AS(epsilon_sweep(cfg, s.prob, s.ws, s.tree, s.mesh, {1e-1, 1e-2}), ValidationError);
  CHECK_THROWS_AS(epsilon_sweep(cfg, s.prob, s.ws, s.tree, s.mesh, {1e-2, 1e-1, 1e-3}),
                  ValidationError);
}

TEST_CASE("energy estimate scales quadratically with the data") {
  for (auto dir : {Direction::Backward, Direction::Forward}) {
    Setup s(21, 5,
            dir == Direction::Backward ? GammaVariant::BackwardRegularized
                                       : GammaVariant::ForwardRegularized,
            9);
    auto cfg = config(dir);
    auto r1 = solve_null_control(cfg, s.prob, s.ws, s.tree, s.mesh);
    auto e1 = verify_energy_estimate(r1, s.prob, cfg, s.ws, s.tree, s.mesh);
    ControlProblem p3 = s.prob;
    p3.terminal *= 3.0;
    for (double& v : p3.initial) v *= 3.0;
    auto r3 = solve_null_control(cfg, p3, s.ws, s.tree, s.mesh);
    auto e3 = verify_energy_estimate(r3, p3, cfg, s.ws, s.tree, s.mesh);
    INFO(to_string(dir));
    CHECK_FALSE(e1.degenerate);
    CHECK(std::abs(e3.log_lhs - e1.log_lhs - std::log(9.0)) < 1e-8 * std::abs(e1.log_lhs) + 1e-8);
    CHECK(std::abs(e3.log_rhs - e1.log_rhs - std::log(9.0)) < 1e-8 * std::abs(e1.log_rhs) + 1e-8);
    CHECK(std::abs(e3.log_gap - e1.log_gap) < 1e-8 * std::abs(e1.log_gap) + 1e-8);
  }
}

TEST_CASE("hum validation") {
  Setup s(21, 4, GammaVariant::Backward, 10);
  CHECK_THROWS_AS(HumFunctional(config(Direction::Backward), s.prob, s.ws, s.tree, s.mesh),
                  ValidationError);
  Setup t(21, 4, GammaVariant::ForwardRegularized, 10);
  CHECK_THROWS_AS(HumFunctional(config(Direction::Backward), t.prob, t.ws, t.tree, t.mesh),
                  ValidationError);
  HumConfig c;
  c.kappa = 5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = HumConfig{};
  c.eps = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = HumConfig{};
  c.cg_tol = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK(parse_direction("forward") == Direction::Forward);
  CHECK_THROWS_AS(parse_direction("sideways"), ValidationError);
}
