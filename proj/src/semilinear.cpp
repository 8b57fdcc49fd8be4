#include "nullctl/semilinear.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "nullctl/errors.hpp"
#include "nullctl/generators.hpp"
#include "nullctl/seed.hpp"

namespace nullctl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// |a - b|_B in log domain
double log_diff_norm(const AdaptedField& a, const AdaptedField& b, const HumFunctional& f) {
  AdaptedField d = b;
  d *= -1.0;
  d += a;
  return log_source_norm(d, f);
}

double log_diff_norm_unclamped(const AdaptedField& a, const AdaptedField& b,
                               const WeightSystem& sys, const ScenarioTree& tree,
                               const SpatialMesh& mesh) {
  AdaptedField d = b;
  d *= -1.0;
  d += a;
  return log_source_norm_unclamped(d, sys, tree, mesh);
}

// relative residual log(|next - cur| / |next|); -inf when they agree
double log_relative(double log_diff, double log_next) {
  if (log_diff == kNegInf) return kNegInf;
  if (log_next == kNegInf) return kPosInf;
  return log_diff - log_next;
}

AdaptedField source_or_zero(const AdaptedField& phi, const ScenarioTree& tree, int M) {
  if (phi.empty()) return AdaptedField(tree, M);
  if (phi.nodes() != tree.node_count() || phi.width() != M)
    throw ValidationError("semilinear: starting source has the wrong shape");
  return phi;
}

void check_lipschitz(const Nonlinearity& F, const char* what) {
  if (!(F.L >= 0.0) || !std::isfinite(F.L))
    throw ValidationError(std::string("semilinear: ") + what + " Lipschitz constant must be finite and >= 0");
}

struct Loop {
  FixedPointTrace trace;
  AdaptedField source;
  ControlResult control;
  double consistency = 0.0;
};

// Shared Picard loop: `solve` maps a source to a controlled state, `update`
// maps that state to the next source.
template <class Solve, class Update>
Loop run_picard(const AdaptedField& start, const HumConfig& config, const ControlProblem& problem,
                const WeightSystem& system, const ScenarioTree& tree, const SpatialMesh& mesh,
                const PicardOptions& opt, Solve solve, Update update) {
  if (!(opt.tol > 0.0) || opt.max_iters < 1 || opt.divergence_run < 1)
    throw ValidationError("semilinear: tol must be > 0, max_iters and divergence_run >= 1");
  Loop out;
  const auto& p = system.params();
  if (p.lambda < opt.lambda_threshold || p.mu < opt.mu_threshold) {
    std::ostringstream os;
    os << "lambda=" << p.lambda << ", mu=" << p.mu << " below the calibrated contraction threshold ("
       << opt.lambda_threshold << ", " << opt.mu_threshold << ")";
    out.trace.warnings.push_back(os.str());
  }
  // weights only depend on the config, not on the data
  const HumFunctional norm_f(config, problem, system, tree, mesh);

  AdaptedField cur = start;
  double prev_log_diff = kNaN;
  int above = 0;
  for (int k = 1; k <= opt.max_iters; ++k) {
    ControlResult res = solve(cur);
    AdaptedField next = update(res);
    const double ld = log_diff_norm(next, cur, norm_f);
    const double lr = log_relative(ld, log_source_norm(next, norm_f));
    const double ldu = log_diff_norm_unclamped(next, cur, system, tree, mesh);
    const double lru = log_relative(ldu, log_source_norm_unclamped(next, system, tree, mesh));
    const double rho = std::isnan(prev_log_diff) || prev_log_diff == kNegInf
                           ? kNaN
                           : std::exp(ld - prev_log_diff);
    out.trace.steps.push_back({k, lr, rho, res.residual, lru});
    out.trace.iterations = k;
    above = (!std::isnan(rho) && rho > 1.0) ? above + 1 : 0;
    prev_log_diff = ld;

    const bool done = lr == kNegInf || std::exp(lr) < opt.tol;
    if (done) {
      out.trace.converged = true;
      out.consistency = lr == kNegInf ? 0.0 : std::exp(lr);
      out.source = std::move(cur);
      out.control = std::move(res);
      return out;
    }
    if (above >= opt.divergence_run) {
      out.trace.diverged = true;
      out.consistency = std::exp(lr);
      out.source = std::move(cur);
      out.control = std::move(res);
      return out;
    }
    if (k == opt.max_iters) {
      out.consistency = std::exp(lr);
      out.source = std::move(cur);
      out.control = std::move(res);
      return out;
    }
    cur = std::move(next);
  }
  return out;
}

}  // namespace

std::vector<std::string> nonlinearity_names() { return {"zero", "sin-tanh", "linear"}; }

Nonlinearity make_nonlinearity(const std::string& name, double L, bool forward) {
  if (!(L >= 0.0) || !std::isfinite(L))
    throw ValidationError("nonlinearity: L must be finite and >= 0");
  Nonlinearity F;
  F.name = name;
  F.L = L;
  const double yc = forward ? 0.0 : 1.0;
  if (name == "zero") {
    F.f = [](double, double, double, double, double) { return 0.0; };
  } else if (name == "sin-tanh") {
    F.f = [L, yc](double, double, double y, double g, double Y) {
      return 0.5 * L * (std::sin(y) + std::tanh(g) + 0.5 * yc * Y);
    };
  } else if (name == "linear") {
    F.f = [L, yc](double, double, double y, double g, double Y) {
      return L * (y + g + yc * Y) / 3.0;
    };
  } else {
    throw ValidationError("nonlinearity: unknown name '" + name + "'");
  }
  return F;
}

LipschitzAudit audit_nonlinearity(const Nonlinearity& F, double T, int pairs, std::uint64_t seed,
                                  bool forward) {
  if (pairs < 1) throw ValidationError("nonlinearity audit: pairs must be >= 1");
  LipschitzAudit a;
  Rng rng(seed);
  for (int j = 0; j < pairs; ++j) {
    const double t = rng.uniform(0.0, T);
    const double x = rng.uniform();
    if (F(t, x, 0.0, 0.0, 0.0) != 0.0) a.zero_at_zero = false;
    double v[6];
    for (double& e : v) e = rng.uniform(-3.0, 3.0);
    if (forward) v[2] = v[5] = 0.0;
    const double dF = std::abs(F(t, x, v[0], v[1], v[2]) - F(t, x, v[3], v[4], v[5]));
    const double dz = std::abs(v[0] - v[3]) + std::abs(v[1] - v[4]) + std::abs(v[2] - v[5]);
    if (dF == 0.0) continue;
    const double r = F.L > 0.0 && dz > 0.0 ? dF / (F.L * dz) : kPosInf;
    a.max_ratio = std::max(a.max_ratio, r);
  }
  a.pass = a.zero_at_zero && a.max_ratio <= 1.01;
  return a;
}

double log_source_norm(const AdaptedField& phi, const HumFunctional& f) {
  const auto& w = f.weights();
  const int M = f.mesh().size();
  double s = 0.0;
  for (std::size_t k = 0; k < f.tree().interior_count(); ++k) {
    const int n = ScenarioTree::depth(k);
    double d = 0.0;
    for (int i = 0; i < M; ++i) d += w.cell(w.u, n, i) * phi.at(k, i) * phi.at(k, i);
    s += ScenarioTree::probability(k) * d;
  }
  s *= f.tree().dt() * f.mesh().h();
  return s > 0.0 ? 0.5 * std::log(s) : kNegInf;
}

double log_source_norm_unclamped(const AdaptedField& phi, const WeightSystem& system,
                                 const ScenarioTree& tree, const SpatialMesh& mesh) {
  PowerSpec spec = control_weight_spec();
  if (is_regularized(system.params().variant)) spec.xi_reg = spec.theta_reg = true;
  const double l = weighted_expectation_norm(phi, spec, system, tree, mesh);
  return l == kNegInf ? kNegInf : 0.5 * l;
}

AdaptedField apply_nonlinearity(const Nonlinearity& F, const AdaptedField& y, const AdaptedField& Y,
                                const ScenarioTree& tree, const SpatialMesh& mesh) {
  const int M = mesh.size();
  AdaptedField out(tree, M);
  const AdaptedField g = gradient_field(y, mesh);
  for (std::size_t k = 0; k < tree.interior_count(); ++k) {
    const double t = tree.time(ScenarioTree::depth(k));
    for (int i = 0; i < M; ++i) {
      const double Yv = Y.empty() ? 0.0 : Y.at(k, i);
      out.at(k, i) = F(t, mesh.x(i), y.at(k, i), g.at(k, i), Yv);
    }
  }
  return out;
}

PicardResult picard_backward(const Nonlinearity& F, const ControlProblem& problem,
                             const HumConfig& config, const WeightSystem& system,
                             const ScenarioTree& tree, const SpatialMesh& mesh,
                             const PicardOptions& opt) {
  check_lipschitz(F, "F");
  if (config.direction != Direction::Backward)
    throw ValidationError("picard_backward: config direction must be backward");
  const int M = mesh.size();
  ControlProblem work = problem;
  auto solve = [&](const AdaptedField& phi) {
    work.phi = phi;
    return solve_null_control(config, work, system, tree, mesh);
  };
  auto update = [&](const ControlResult& r) {
    return apply_nonlinearity(F, r.state.y, r.state.Y, tree, mesh);
  };
  Loop l = run_picard(source_or_zero(problem.phi, tree, M), config, problem, system, tree, mesh,
                      opt, solve, update);
  PicardResult out;
  out.control = std::move(l.control);
  out.trace = std::move(l.trace);
  out.source = std::move(l.source);
  out.consistency = l.consistency;
  return out;
}

PicardResult picard_forward(const Nonlinearity& F1, const Nonlinearity& F2,
                            const ControlProblem& problem, const HumConfig& config,
                            const WeightSystem& system, const ScenarioTree& tree,
                            const SpatialMesh& mesh, const PicardOptions& opt) {
  check_lipschitz(F1, "F1");
  check_lipschitz(F2, "F2");
  if (config.direction != Direction::Forward)
    throw ValidationError("picard_forward: config direction must be forward");
  const int M = mesh.size();
  const AdaptedField none;
  ControlProblem work = problem;
  auto solve = [&](const AdaptedField& phi) {
    work.phi = phi;
    return solve_null_control(config, work, system, tree, mesh);
  };
  auto update = [&](const ControlResult& r) {
    return apply_nonlinearity(F1, r.state.y, none, tree, mesh);
  };
  Loop l = run_picard(source_or_zero(problem.phi, tree, M), config, problem, system, tree, mesh,
                      opt, solve, update);
  PicardResult out;
  out.control = std::move(l.control);
  out.trace = std::move(l.trace);
  out.source = std::move(l.source);
  out.consistency = l.consistency;
  // the run above has F2 = 0; the diffusion term F2 + U* must equal U
  out.U_star = out.control.control.U;
  const AdaptedField f2 = apply_nonlinearity(F2, out.control.state.y, none, tree, mesh);
  for (std::size_t k = 0; k < tree.interior_count(); ++k)
    for (int i = 0; i < M; ++i) out.U_star.at(k, i) -= f2.at(k, i);
  return out;
}

ProbeTable contraction_probe(const Nonlinearity& F, const ControlProblem& problem,
                             const HumConfig& config, const WeightParams& base,
                             const ScenarioTree& tree, const SpatialMesh& mesh,
                             const std::vector<std::pair<double, double>>& grid, int pairs,
                             std::uint64_t seed, double noise_band) {
  check_lipschitz(F, "F");
  if (pairs < 1) throw ValidationError("contraction probe: pairs must be >= 1");
  if (grid.empty()) throw ValidationError("contraction probe: empty (lambda, mu) grid");
  const bool forward = config.direction == Direction::Forward;

  // pairs of starting sources shared by every cell
  std::vector<std::pair<AdaptedField, AdaptedField>> starts;
  for (int j = 0; j < pairs; ++j) {
    const std::uint64_t s = seed_split(seed, "pair-" + std::to_string(j));
    starts.emplace_back(random_adapted(tree, mesh, seed_split(s, "a"), 1.0, Support::Interior),
                        random_adapted(tree, mesh, seed_split(s, "b"), 1.0, Support::Interior));
  }

  ProbeTable table;
  table.cells.resize(grid.size());
  std::string error;
  bool numerical = false;
  HumConfig cfg = config;
  cfg.scheme.exec = Exec::Serial;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(grid.size()); ++c) {
    ProbeCell cell{grid[c].first, grid[c].second, {}, 0.0};
    try {
      WeightParams wp = base;
      wp.lambda = cell.lambda;
      wp.mu = cell.mu;
      const WeightSystem sys(wp, mesh, tree);
      const HumFunctional norm_f(cfg, problem, sys, tree, mesh);
      const AdaptedField none;
      auto apply = [&](const AdaptedField& phi) {
        ControlProblem work = problem;
        work.phi = phi;
        const ControlResult r = solve_null_control(cfg, work, sys, tree, mesh);
        return apply_nonlinearity(F, r.state.y, forward ? none : r.state.Y, tree, mesh);
      };
      for (const auto& [a, b] : starts) {
        const double lin = log_diff_norm(a, b, norm_f);
        const double lout = log_diff_norm(apply(a), apply(b), norm_f);
        const double r = lout == kNegInf ? 0.0 : std::exp(lout - lin);
        cell.ratios.push_back(r);
        cell.max_ratio = std::max(cell.max_ratio, r);
      }
    } catch (const std::exception& e) {
#pragma omp critical
      {
        if (error.empty()) {
          error = e.what();
          numerical = dynamic_cast<const ValidationError*>(&e) == nullptr;
        }
      }
    }
    table.cells[c] = std::move(cell);
  }
  if (!error.empty()) {
    if (numerical) throw NumericalError("contraction probe: " + error);
    throw ValidationError("contraction probe: " + error);
  }

  // trend along lambda at each fixed mu
  for (std::size_t a = 0; a < table.cells.size(); ++a)
    for (std::size_t b = 0; b < table.cells.size(); ++b) {
      const auto& ca = table.cells[a];
      const auto& cb = table.cells[b];
      if (ca.mu == cb.mu && ca.lambda < cb.lambda &&
          cb.max_ratio > ca.max_ratio * (1.0 + noise_band))
        table.trend_ok = false;
    }
  return table;
}

}  // namespace nullctl
