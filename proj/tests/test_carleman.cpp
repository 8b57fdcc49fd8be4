#include <omp.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "nullctl/carleman.hpp"
#include "nullctl/errors.hpp"

using namespace nullctl;

namespace {

const EstimateId kAll[] = {EstimateId::C1, EstimateId::C2, EstimateId::C3, EstimateId::CB};

CarlemanSetup small_setup() {
  CarlemanSetup s;
  s.M = 15;
  s.N = 5;
  return s;
}

struct Fixture {
  CarlemanSetup setup = small_setup();
  ScenarioTree tree = build_tree(setup.N, setup.T);
  SpatialMesh mesh = build_mesh(0, 1, setup.M, setup.ctrl, setup.inner);

  WeightSystem system(EstimateId id, double lambda = 1.0, double mu = 1.0) const {
    WeightParams p;
    p.lambda = lambda;
    p.mu = mu;
    p.variant = estimate_variant(id);
    return WeightSystem(p, mesh, tree);
  }
};

EstimateInputs scaled(EstimateInputs in, double s) {
  for (auto* f : {&in.z, &in.Z, &in.phi1, &in.phi2, &in.b})
    if (!f->empty()) *f *= s;
  return in;
}

}  // namespace

TEST_CASE("estimate tags") {
  for (auto id : kAll) CHECK(parse_estimate(to_string(id)) == id);
  CHECK(parse_estimate("CB") == EstimateId::CB);
  CHECK_THROWS_AS(parse_estimate("C9"), ValidationError);
  CHECK(estimate_variant(EstimateId::C1) == GammaVariant::Backward);
  CHECK(estimate_variant(EstimateId::C3) == GammaVariant::Forward);
}

TEST_CASE("zero solution is degenerate") {
  Fixture fx;
  for (auto id : kAll) {
    EstimateInputs in;
    in.z = AdaptedField(fx.tree, fx.mesh.size());
    in.Z = AdaptedField(fx.tree, fx.mesh.size());
    auto r = eval_estimate(id, in, fx.system(id), fx.tree, fx.mesh);
    CHECK(r.degenerate);
    CHECK(r.log_lhs == kNegInf);
    CHECK(r.log_rhs == kNegInf);
    CHECK(r.log_C_emp == kNegInf);
  }
}

TEST_CASE("both sides are quadratic in the data") {
  Fixture fx;
  for (auto id : kAll) {
    auto in = sample_estimate_problem(id, fx.setup, fx.tree, fx.mesh, 21);
    auto sys = fx.system(id);
    auto r1 = eval_estimate(id, in, sys, fx.tree, fx.mesh);
    for (double s : {2.0, 3.0, 0.1}) {
      auto r = eval_estimate(id, scaled(in, s), sys, fx.tree, fx.mesh);
      INFO(to_string(id), " scale ", s);
      const double l = 2 * std::log(s);
      CHECK(std::abs(r.log_lhs - r1.log_lhs - l) <= 1e-10 * std::abs(r1.log_lhs));
      CHECK(std::abs(r.log_rhs - r1.log_rhs - l) <= 1e-10 * std::abs(r1.log_rhs));
      CHECK(std::abs(r.log_C_emp - r1.log_C_emp) < 1e-10 * std::abs(r1.log_lhs));
    }
    // solving with doubled data gives the same shift
    auto setup2 = fx.setup;
    setup2.data_amplitude = 2.0;
    auto r2 = eval_estimate(id, sample_estimate_problem(id, setup2, fx.tree, fx.mesh, 21), sys,
                            fx.tree, fx.mesh);
    CHECK(std::abs(r2.log_lhs - r1.log_lhs - std::log(4.0)) <= 1e-10 * std::abs(r1.log_lhs));
    CHECK(std::abs(r2.log_C_emp - r1.log_C_emp) < 1e-10 * std::abs(r1.log_lhs));
  }
}

TEST_CASE("terminal term matches a direct log-sum") {
  Fixture fx;
  auto id = EstimateId::C2;
  auto in = sample_estimate_problem(id, fx.setup, fx.tree, fx.mesh, 5);
  auto sys = fx.system(id, 2.0, 1.5);
  auto r = eval_estimate(id, in, sys, fx.tree, fx.mesh);
  // lambda mu^2 xi theta^2 at t = T, summed over leaves with h and the path probability
  const int N = fx.tree.steps();
  std::vector<double> logs;
  for (std::size_t k = ScenarioTree::level_begin(N); k < ScenarioTree::level_end(N); ++k)
    for (int i = 0; i < fx.mesh.size(); ++i) {
      const double z = in.z.at(k, i);
      if (z == 0) continue;
      const double t = sys.node_time(N), x = sys.x(i);
      const double lambda = sys.params().lambda, mu = sys.params().mu;
      logs.push_back(std::log(lambda) + 2 * std::log(mu) + sys.log_xi(t, x) + 2 * sys.ell(t, x) +
                     std::log(z * z) + std::log(fx.mesh.h()) - N * std::log(2.0));
    }
  double mx = -INFINITY;
  for (double v : logs) mx = std::max(mx, v);
  long double s = 0;
  for (double v : logs) s += std::exp(static_cast<long double>(v - mx));
  const double direct = mx + static_cast<double>(std::log(s));
  REQUIRE(r.lhs[0].name == "terminal");
  CHECK(std::abs(r.lhs[0].log_value - direct) < 1e-9 * std::abs(direct));
}

TEST_CASE("hypothesis and profile checks") {
  Fixture fx;
  auto in = sample_estimate_problem(EstimateId::C2, fx.setup, fx.tree, fx.mesh, 3);
  REQUIRE_FALSE(in.b.empty());
  CHECK_THROWS_AS(eval_estimate(EstimateId::C1, in, fx.system(EstimateId::C1), fx.tree, fx.mesh),
                  ValidationError);
  CHECK_THROWS_AS(eval_estimate(EstimateId::C2, in, fx.system(EstimateId::C3), fx.tree, fx.mesh),
                  ValidationError);
  auto back = sample_estimate_problem(EstimateId::C3, fx.setup, fx.tree, fx.mesh, 3);
  CHECK_THROWS_AS(eval_estimate(EstimateId::CB, back, fx.system(EstimateId::CB), fx.tree, fx.mesh),
                  ValidationError);
  // b identically zero is accepted
  back.b = AdaptedField(fx.tree, fx.mesh.size());
  CHECK_NOTHROW(eval_estimate(EstimateId::CB, back, fx.system(EstimateId::CB), fx.tree, fx.mesh));
  CHECK_THROWS_AS(calibrate_constant(EstimateId::C1, fx.setup, 9, 1, 1, 1), ValidationError);
}

TEST_CASE("noise-free C2 reduces to the deterministic term list") {
  Fixture fx;
  auto setup = fx.setup;
  setup.coefficients.deterministic = true;
  auto in = sample_estimate_problem(EstimateId::C2, setup, fx.tree, fx.mesh, 8);
  in.phi2 = AdaptedField();
  in.b = AdaptedField();
  // rerun without noise so the solution is path independent
  ForwardProblem p;
  p.coef = make_coefficients(setup.coefficients, fx.tree, fx.mesh, seed_split(8, "coef"));
  p.coef.rho2 = AdaptedField();
  p.phi1 = AdaptedField(fx.tree, fx.mesh.size());
  for (std::size_t k = 0; k < fx.tree.node_count(); ++k)
    for (int i = 0; i < fx.mesh.size(); ++i) p.phi1.at(k, i) = std::sin(3.0 * fx.mesh.x(i));
  Rng rng(4);
  p.z0 = smooth_random(fx.mesh, rng);
  in.phi1 = p.phi1;
  in.z = solve_forward(p, fx.tree, fx.mesh);
  auto r = eval_estimate(EstimateId::C2, in, fx.system(EstimateId::C2), fx.tree, fx.mesh);
  for (const auto& t : r.rhs)
    if (t.name == "noise" || t.name == "divergence_source") CHECK(t.log_value == kNegInf);
  CHECK(std::isfinite(r.log_C_emp));
  // every path carries the same values
  const int N = fx.tree.steps();
  for (std::size_t k = ScenarioTree::level_begin(N) + 1; k < ScenarioTree::level_end(N); ++k)
    for (int i = 0; i < fx.mesh.size(); ++i)
      CHECK(in.z.at(k, i) == in.z.at(ScenarioTree::level_begin(N), i));
}

TEST_CASE("calibrate then test") {
  Fixture fx;
  for (auto id : kAll) {
    auto cal = calibrate_constant(id, fx.setup, 20, 1, 1, 100);
    REQUIRE_FALSE(cal.degenerate);
    CHECK(std::isfinite(cal.log_C_max));
    CHECK(cal.iqr >= 0);
    auto t = test_constant(id, fx.setup, 20, 1, 1, 200, cal.log_C_max, std::log(10.0));
    INFO(to_string(id));
    CHECK(t.violations == 0);
  }
}

TEST_CASE("ensembles are reproducible and thread-count independent") {
  Fixture fx;
  const int saved = omp_get_max_threads();
  std::vector<double> ref;
  for (int threads : {1, 3, 8}) {
    omp_set_num_threads(threads);
    auto e = run_ensemble(EstimateId::C3, fx.setup, 12, 1, 1, 77);
    std::vector<double> v;
    for (const auto& r : e.reports) v.push_back(r.log_C_emp);
    if (ref.empty()) ref = v;
    CHECK(v == ref);
  }
  omp_set_num_threads(saved);
}

TEST_CASE("calibrated constant does not explode with lambda") {
  Fixture fx;
  for (auto id : {EstimateId::C2, EstimateId::CB}) {
    const double base = calibrate_constant(id, fx.setup, 12, 1, 1, 5).log_C_max;
    for (double lambda : {2.0, 4.0}) {
      const double c = calibrate_constant(id, fx.setup, 12, lambda, 1, 5).log_C_max;
      INFO(to_string(id), " lambda ", lambda);
      CHECK(c <= base + std::log(10.0));
    }
  }
}

TEST_CASE("carleman csv") {
  Fixture fx;
  auto e = run_ensemble(EstimateId::CB, fx.setup, 10, 1, 1, 3);
  const std::string path = "carleman_test.csv";
  write_carleman_csv(path, e.reports);
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  CHECK(text.rfind("estimate,lambda,mu,m,seed,log_lhs,log_rhs,log_C_emp\r\n", 0) == 0);
  int lines = 0;
  for (std::size_t p = text.find("\r\n"); p != std::string::npos; p = text.find("\r\n", p + 2)) ++lines;
  CHECK(lines == 11);
  CHECK(text.find("CB-backward-L2") != std::string::npos);
  std::remove(path.c_str());
}
