#include "nullctl/carleman.hpp"

#include <algorithm>
#include <cmath>

#include "nullctl/errors.hpp"
#include "nullctl/io.hpp"
#include "nullctl/seed.hpp"

namespace nullctl {

std::string to_string(EstimateId id) {
  switch (id) {
    case EstimateId::C1: return "C1-forward-L2";
    case EstimateId::C2: return "C2-forward-Hminus1";
    case EstimateId::C3: return "C3-backward-Hminus1";
    case EstimateId::CB: return "CB-backward-L2";
  }
  return "?";
}

EstimateId parse_estimate(const std::string& s) {
  for (auto id : {EstimateId::C1, EstimateId::C2, EstimateId::C3, EstimateId::CB}) {
    const std::string tag = to_string(id);
    if (s == tag || s == tag.substr(0, 2)) return id;
  }
  throw ValidationError("carleman: unknown estimate '" + s + "'");
}

bool is_backward(EstimateId id) { return id == EstimateId::C3 || id == EstimateId::CB; }

GammaVariant estimate_variant(EstimateId id) {
  return is_backward(id) ? GammaVariant::Forward : GammaVariant::Backward;
}

namespace {

bool all_zero(const AdaptedField& f) {
  return std::all_of(f.raw().begin(), f.raw().end(), [](double v) { return v == 0.0; });
}

PowerSpec spec(double a, double b, double c, double d, double log_const = 0.0) {
  PowerSpec s{a, b, c, d};
  s.log_const = log_const;
  return s;
}

}  // namespace

CarlemanReport eval_estimate(EstimateId id, const EstimateInputs& in, const WeightSystem& system,
                             const ScenarioTree& tree, const SpatialMesh& mesh) {
  if (unregularized(system.params().variant) != estimate_variant(id))
    throw ValidationError("carleman: " + to_string(id) + " needs weights of the " +
                          to_string(estimate_variant(id)) + " profile");
  if ((id == EstimateId::C1 || id == EstimateId::CB) && !in.b.empty() && !all_zero(in.b))
    throw ValidationError("carleman: " + to_string(id) + " assumes no divergence source (b = 0)");
  if (in.z.empty()) throw ValidationError("carleman: missing solution");

  const auto& p = system.params();
  const double mu = p.mu, m = p.m;
  CarlemanReport r;
  r.id = id;
  r.lambda = p.lambda;
  r.mu = mu;
  r.m = m;

  auto norm = [&](const AdaptedField& f, const PowerSpec& s, TimeSupport t = TimeSupport::Running,
                  Region reg = Region::Whole) {
    if (f.empty()) return kNegInf;
    return weighted_expectation_norm(f, s, system, tree, mesh, t, reg);
  };
  const AdaptedField gz = gradient_field(in.z, mesh);
  const PowerSpec state = spec(3, 4, 3, 2), grad = spec(1, 2, 1, 2);

  switch (id) {
    case EstimateId::C1:
      r.lhs = {{"terminal", norm(in.z, spec(2, 3, 0, 2, 2 * mu * (6 * m + 1)), TimeSupport::Terminal)},
               {"terminal_gradient", norm(gz, spec(0, 0, 0, 2), TimeSupport::Terminal)},
               {"gradient", norm(gz, grad)},
               {"state", norm(in.z, state)}};
      r.rhs = {{"noise", norm(in.phi2, spec(2, 2, 3, 2))},
               {"noise_gradient",
                in.phi2.empty() ? kNegInf : norm(gradient_field(in.phi2, mesh), spec(0, 0, 0, 2))},
               {"source", norm(in.phi1, spec(0, 0, 0, 2))},
               {"observation", norm(in.z, state, TimeSupport::Running, Region::Control)}};
      break;
    case EstimateId::C2:
      r.lhs = {{"terminal", norm(in.z, spec(1, 2, 1, 2), TimeSupport::Terminal)},
               {"state", norm(in.z, state)},
               {"gradient", norm(gz, grad)}};
      r.rhs = {{"observation", norm(in.z, state, TimeSupport::Running, Region::Control)},
               {"source", norm(in.phi1, spec(0, 0, 0, 2))},
               {"noise", norm(in.phi2, spec(2, 2, 2, 2))},
               {"divergence_source", norm(in.b, spec(2, 2, 2, 2))}};
      break;
    case EstimateId::C3:
      r.lhs = {{"initial", norm(in.z, spec(1, 2, 0, 2, 6 * mu * m), TimeSupport::Initial)},
               {"state", norm(in.z, state)},
               {"gradient", norm(gz, grad)}};
      r.rhs = {{"observation", norm(in.z, state, TimeSupport::Running, Region::Control)},
               {"source", norm(in.phi1, spec(0, 0, 0, 2))},
               {"martingale", norm(in.Z, spec(2, 2, 3, 2))},
               {"divergence_source", norm(in.b, spec(2, 2, 3, 2))}};
      break;
    case EstimateId::CB:
      r.lhs = {{"initial", norm(in.z, spec(2, 3, 0, 2, 6 * mu * m), TimeSupport::Initial)},
               {"initial_gradient", norm(gz, spec(0, 0, 0, 2), TimeSupport::Initial)},
               {"gradient", norm(gz, grad)},
               {"state", norm(in.z, state)}};
      r.rhs = {{"observation", norm(in.z, state, TimeSupport::Running, Region::Control)},
               {"source", norm(in.phi1, spec(0, 0, 0, 2))},
               {"martingale", norm(in.Z, spec(2, 2, 3, 2))}};
      break;
  }
  std::vector<double> l, rr;
  for (const auto& t : r.lhs) l.push_back(t.log_value);
  for (const auto& t : r.rhs) rr.push_back(t.log_value);
  r.log_lhs = log_sum(l);
  r.log_rhs = log_sum(rr);
  if (r.log_lhs == kNegInf) {
    r.degenerate = r.log_rhs == kNegInf;
    r.log_C_emp = kNegInf;
  } else {
    r.log_C_emp = r.log_rhs == kNegInf ? kPosInf : r.log_lhs - r.log_rhs;
  }
  return r;
}

EstimateInputs sample_estimate_problem(EstimateId id, const CarlemanSetup& setup,
                                       const ScenarioTree& tree, const SpatialMesh& mesh,
                                       std::uint64_t seed) {
  const double amp = setup.data_amplitude;
  EstimateInputs in;
  const Coefficients coef = make_coefficients(setup.coefficients, tree, mesh, seed_split(seed, "coef"));
  in.phi1 = random_adapted(tree, mesh, seed_split(seed, "phi1"), amp, Support::Interior);
  if (id == EstimateId::C2 || id == EstimateId::C3)
    in.b = random_adapted(tree, mesh, seed_split(seed, "b"), amp, Support::Interior);
  if (!is_backward(id)) {
    in.phi2 = random_adapted(tree, mesh, seed_split(seed, "phi2"), amp, Support::Interior);
    ForwardProblem p;
    p.coef = coef;
    p.coef.rho2 = AdaptedField();
    Rng rng(seed_split(seed, "z0"));
    p.z0 = smooth_random(mesh, rng);
    for (double& v : p.z0) v *= amp;
    p.phi1 = in.phi1;
    p.phi2 = in.phi2;
    p.b = in.b;
    in.z = solve_forward(p, tree, mesh, setup.scheme);
  } else {
    BackwardProblem p;
    p.coef = coef;
    p.yT = random_adapted(tree, mesh, seed_split(seed, "zT"), amp, Support::Leaves);
    p.phi = in.phi1;
    p.b = in.b;
    auto s = solve_backward(p, tree, mesh, setup.scheme);
    in.z = std::move(s.y);
    in.Z = std::move(s.Y);
  }
  return in;
}

namespace {

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

EnsembleResult run_ensemble(EstimateId id, const CarlemanSetup& setup, int size, double lambda,
                            double mu, std::uint64_t seed) {
  if (size < 10) throw ValidationError("carleman: ensemble size must be at least 10");
  const auto tree = build_tree(setup.N, setup.T);
  const auto mesh = build_mesh(0.0, 1.0, setup.M, setup.ctrl, setup.inner);
  WeightParams wp;
  wp.lambda = lambda;
  wp.mu = mu;
  wp.m = setup.m;
  wp.T = setup.T;
  wp.variant = estimate_variant(id);
  const WeightSystem system(wp, mesh, tree);

  EnsembleResult out;
  out.id = id;
  out.lambda = lambda;
  out.mu = mu;
  out.reports.resize(static_cast<std::size_t>(size));
  CarlemanSetup member = setup;
  member.scheme.exec = Exec::Serial;
  bool failed = false;
  std::string message;
#pragma omp parallel for schedule(dynamic)
  for (int j = 0; j < size; ++j) {
    try {
      const std::uint64_t s = seed_split(seed, "member-" + std::to_string(j));
      auto in = sample_estimate_problem(id, member, tree, mesh, s);
      auto r = eval_estimate(id, in, system, tree, mesh);
      r.seed = s;
      out.reports[static_cast<std::size_t>(j)] = std::move(r);
    } catch (const std::exception& e) {
#pragma omp critical
      {
        failed = true;
        message = e.what();
      }
    }
  }
  if (failed) throw NumericalError("carleman ensemble: " + message);

  std::vector<double> c;
  for (const auto& r : out.reports)
    if (!r.degenerate) c.push_back(r.log_C_emp);
  out.degenerate = c.empty();
  if (!c.empty()) {
    out.log_C_max = *std::max_element(c.begin(), c.end());
    out.iqr = quantile(c, 0.75) - quantile(c, 0.25);
  }
  return out;
}

EnsembleResult calibrate_constant(EstimateId id, const CarlemanSetup& setup, int size,
                                  double lambda, double mu, std::uint64_t seed) {
  return run_ensemble(id, setup, size, lambda, mu, seed);
}

TestResult test_constant(EstimateId id, const CarlemanSetup& setup, int size, double lambda,
                         double mu, std::uint64_t seed, double log_C_cal, double margin) {
  TestResult t;
  t.ensemble = run_ensemble(id, setup, size, lambda, mu, seed);
  t.log_C_cal = log_C_cal;
  t.margin = margin;
  for (const auto& r : t.ensemble.reports) {
    if (r.degenerate) continue;
    t.worst_excess = std::max(t.worst_excess, r.log_C_emp - log_C_cal);
    if (r.log_C_emp > log_C_cal + margin) ++t.violations;
  }
  return t;
}

void write_carleman_csv(const std::string& path, const std::vector<CarlemanReport>& reports) {
  CsvWriter w(path, {"estimate", "lambda", "mu", "m", "seed", "log_lhs", "log_rhs", "log_C_emp"});
  for (const auto& r : reports)
    w.row({to_string(r.id), r.lambda, r.mu, r.m, std::to_string(r.seed), r.log_lhs, r.log_rhs,
           r.log_C_emp});
}

}  // namespace nullctl
