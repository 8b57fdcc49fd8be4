#include "nullctl/runner.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "json.hpp"
#include "nullctl/carleman.hpp"
#include "nullctl/config.hpp"
#include "nullctl/errors.hpp"
#include "nullctl/generators.hpp"
#include "nullctl/hum.hpp"
#include "nullctl/io.hpp"
#include "nullctl/semilinear.hpp"
#include "nullctl/seed.hpp"

namespace nullctl {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct Context {
  const ExperimentConfig& cfg;
  std::string subcommand;
  fs::path dir;
  std::vector<std::string> files;
  std::vector<std::string> warnings;
  Json summary = Json::object();
  std::ostream& out;

  std::string path(const std::string& name) {
    files.push_back(name);
    return (dir / name).string();
  }
  void warn(const std::string& w) {
    if (std::find(warnings.begin(), warnings.end(), w) == warnings.end()) warnings.push_back(w);
  }
};

long long ll(std::size_t v) { return static_cast<long long>(v); }
long long ll(int v) { return v; }

std::string brief(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// JSON cannot carry inf/nan; store those as strings
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(format_double(v)); }

ControlProblem make_problem(const ExperimentConfig& c, Direction d, const ScenarioTree& tree,
                            const SpatialMesh& mesh) {
  ControlProblem p;
  CoefficientSpec cs = c.coefficients;
  if (d == Direction::Forward) cs.rho2 = 0.0;
  p.coef = make_coefficients(cs, tree, mesh, seed_split(c.seed, "coef"));
  const int M = mesh.size();
  if (d == Direction::Backward) {
    p.terminal = c.data_kind == "zero"
                     ? AdaptedField(tree, M)
                     : random_adapted(tree, mesh, seed_split(c.seed, "data"), c.data_amplitude,
                                      Support::Leaves, false, c.data_modes);
  } else {
    p.initial.assign(M, 0.0);
    if (c.data_kind == "random") {
      Rng rng(seed_split(c.seed, "data"));
      p.initial = smooth_random(mesh, rng, c.data_modes);
      for (double& v : p.initial) v *= c.data_amplitude;
    }
  }
  if (c.source_kind == "random")
    p.phi = random_adapted(tree, mesh, seed_split(c.seed, "source"), c.source_amplitude,
                           Support::Interior, false, c.data_modes);
  return p;
}

HumConfig hum_config(const ExperimentConfig& c, Direction d) {
  HumConfig h = c.hum;
  h.direction = d;
  return h;
}

void write_control(Context& ctx, const std::string& name, Direction d, const WeightParams& wp,
                   double eps, const Control& ctl, const AdaptedField* U_star,
                   const ScenarioTree& tree, const SpatialMesh& mesh) {
  std::vector<std::string> header{"direction", "seed", "lambda", "mu", "kappa", "eps",
                                  "node", "path", "depth", "i", "x", "u"};
  const bool fwd = d == Direction::Forward;
  if (fwd) header.push_back("U");
  if (U_star) header.push_back("U_star");
  CsvWriter w(ctx.path(name), header);
  for (std::size_t k = 0; k < tree.interior_count(); ++k)
    for (int i = 0; i < mesh.size(); ++i) {
      std::vector<CsvCell> row{to_string(d),
                               static_cast<long long>(ctx.cfg.seed),
                               wp.lambda,
                               wp.mu,
                               ctx.cfg.hum.kappa,
                               eps,
                               ll(k),
                               ScenarioTree::path(k),
                               ll(ScenarioTree::depth(k)),
                               ll(i),
                               mesh.x(i),
                               ctl.u.at(k, i)};
      if (fwd) row.emplace_back(ctl.U.at(k, i));
      if (U_star) row.emplace_back(U_star->at(k, i));
      w.row(row);
    }
}

void require_converged(const ControlResult& r, const std::string& what) {
  if (!r.converged) {
    std::ostringstream os;
    os << what << ": CG did not reach cg_tol within " << r.cg_iters << " iterations";
    throw NumericalError(os.str());
  }
}

// ---------------------------------------------------------------- weights

int cmd_weights(Context& ctx) {
  const auto& c = ctx.cfg;
  const ScenarioTree tree = build_tree(c.N, c.T);
  const SpatialMesh mesh = build_mesh(c.a_end, c.b_end, c.M, c.ctrl, c.inner);
  std::vector<GammaVariant> variants;
  if (c.variant == "auto")
    variants = {GammaVariant::Backward, GammaVariant::BackwardRegularized, GammaVariant::Forward,
                GammaVariant::ForwardRegularized};
  else
    variants = {parse_gamma_variant(c.variant)};

  CsvWriter table(ctx.path("weights.csv"),
                  {"variant", "lambda", "mu", "m", "eps", "n", "t", "i", "x", "log_xi", "ell",
                   "log_xi_reg", "ell_reg"});
  CsvWriter junctions(ctx.path("weights_junctions.csv"),
                      {"variant", "m", "eps", "step", "t", "jump_value", "jump_d1", "jump_d2",
                       "jump_half_value", "jump_half_d1", "jump_half_d2", "pass"});
  CsvWriter checks(ctx.path("weights_checks.csv"),
                   {"variant", "lambda", "mu", "m", "eps", "check", "value", "pass"});
  std::vector<Series> profiles;
  int failures = 0;
  for (GammaVariant v : variants) {
    WeightParams wp = c.weights;
    wp.variant = v;
    const WeightSystem ws(wp, mesh, tree);
    for (const auto& w : ws.warnings()) ctx.warn(w);
    const std::string tag = to_string(v);
    const bool reg = is_regularized(v);
    double order = kNegInf;
    for (int n = 0; n <= tree.steps(); ++n)
      for (int i = 0; i < mesh.size(); ++i) {
        const double l = ws.ell_node(n, i);
        std::vector<CsvCell> row{tag,  wp.lambda, wp.mu, wp.m, wp.eps, ll(n), ws.node_time(n),
                                 ll(i), mesh.x(i), ws.log_xi_node(n, i), l};
        if (reg) {
          const double lr = ws.ell_node(n, i, true);
          row.emplace_back(ws.log_xi_node(n, i, true));
          row.emplace_back(lr);
          if (std::isfinite(l)) order = std::max(order, l - lr);
        } else {
          row.emplace_back(std::string());
          row.emplace_back(std::string());
        }
        table.row(row);
      }

    const Gamma& g = reg ? ws.gamma_reg() : ws.gamma();
    const double step = 1e-4 * c.T;
    int bad_junctions = 0;
    for (const auto& j : check_junctions(g, step)) {
      junctions.row({tag, wp.m, wp.eps, step, j.t, j.jump[0], j.jump[1], j.jump[2], j.jump_half[0],
                     j.jump_half[1], j.jump_half[2], ll(j.pass ? 1 : 0)});
      if (!j.pass) ++bad_junctions;
    }
    checks.row({tag, wp.lambda, wp.mu, wp.m, wp.eps, std::string("junction_failures"),
                static_cast<double>(bad_junctions), ll(bad_junctions == 0 ? 1 : 0)});
    failures += bad_junctions;
    if (reg) {
      // gamma_eps <= gamma and log theta - log theta_eps <= 0 on the cached grid
      double excess = kNegInf;
      for (int n = 0; n <= 2 * tree.steps(); ++n) {
        const double t = 0.5 * n * tree.dt();
        if (g.plain_singular_at(t)) continue;
        excess = std::max(excess, g.value(t) - g.eval_plain(t).value * (1 + 1e-14));
      }
      const bool ok1 = excess <= 0.0, ok2 = order <= 0.0;
      checks.row({tag, wp.lambda, wp.mu, wp.m, wp.eps, std::string("gamma_reg_minus_gamma"),
                  excess, ll(ok1 ? 1 : 0)});
      checks.row({tag, wp.lambda, wp.mu, wp.m, wp.eps, std::string("ell_minus_ell_reg"), order,
                  ll(ok2 ? 1 : 0)});
      failures += !ok1 + !ok2;
    }
    Series s{tag, {}, {}};
    for (int j = 0; j <= 400; ++j) {
      const double t = c.T * j / 400.0;
      if (g.singular_at(t)) continue;
      s.x.push_back(t);
      s.y.push_back(g.value(t));
    }
    profiles.push_back(std::move(s));
  }
  if (c.svg)
    write_svg_chart(ctx.path("weights_gamma.svg"), {"time profiles", "t", "gamma", false, true},
                    profiles);
  ctx.summary["check_failures"] = failures;
  if (failures > 0) throw NumericalError("weights: " + std::to_string(failures) + " checks failed");
  return 0;
}

// ---------------------------------------------------------------- carleman

int cmd_carleman(Context& ctx) {
  const auto& c = ctx.cfg;
  std::vector<EstimateId> ids;
  if (c.estimate == "all")
    ids = {EstimateId::C1, EstimateId::C2, EstimateId::C3, EstimateId::CB};
  else
    ids = {parse_estimate(c.estimate)};
  const CarlemanSetup setup = c.carleman_setup();
  const double lambda = c.weights.lambda, mu = c.weights.mu;
  CsvWriter summary(ctx.path("carleman_summary.csv"),
                    {"estimate", "lambda", "mu", "m", "seed_calibrate", "seed_test", "calibrate",
                     "test", "log_C_cal", "iqr", "margin", "violations", "worst_excess",
                     "degenerate"});
  Json js = Json::array();
  for (EstimateId id : ids) {
    const std::string tag = to_string(id);
    const std::uint64_t s1 = seed_split(c.seed, "carleman-calibrate-" + tag);
    const std::uint64_t s2 = seed_split(c.seed, "carleman-test-" + tag);
    const EnsembleResult cal = calibrate_constant(id, setup, c.calibrate, lambda, mu, s1);
    const TestResult tr = test_constant(id, setup, c.test, lambda, mu, s2, cal.log_C_max, c.margin);
    write_carleman_csv(ctx.path("carleman_" + tag + "_calibrate.csv"), cal.reports);
    write_carleman_csv(ctx.path("carleman_" + tag + "_test.csv"), tr.ensemble.reports);
    summary.row({tag, lambda, mu, setup.m, static_cast<long long>(s1), static_cast<long long>(s2),
                 ll(c.calibrate), ll(c.test), cal.log_C_max, cal.iqr, c.margin, ll(tr.violations),
                 tr.worst_excess, ll(cal.degenerate ? 1 : 0)});
    js.push_back({{"estimate", tag},
                  {"log_C_cal", num(cal.log_C_max)},
                  {"violations", tr.violations},
                  {"worst_excess", num(tr.worst_excess)}});
    ctx.out << tag << ": log_C_cal " << brief(cal.log_C_max) << ", violations "
            << tr.violations << "/" << c.test << "\n";
  }
  ctx.summary["estimates"] = js;
  return 0;
}

// ---------------------------------------------------------------- hum

int cmd_hum(Context& ctx, Direction d) {
  const auto& c = ctx.cfg;
  const ScenarioTree tree = build_tree(c.N, c.T);
  const SpatialMesh mesh = build_mesh(c.a_end, c.b_end, c.M, c.ctrl, c.inner);
  const WeightParams wp = c.weights_for(d);
  const WeightSystem ws(wp, mesh, tree);
  for (const auto& w : ws.warnings()) ctx.warn(w);
  const HumConfig hc = hum_config(c, d);
  const ControlProblem p = make_problem(c, d, tree, mesh);
  const std::string dir = to_string(d);

  const ControlResult r = solve_null_control(hc, p, ws, tree, mesh);
  write_control(ctx, "hum_" + dir + "_control.csv", d, wp, hc.eps, r.control, nullptr, tree, mesh);
  {
    CsvWriter w(ctx.path("hum_" + dir + "_trace.csv"),
                {"direction", "seed", "lambda", "mu", "kappa", "eps", "iteration", "rel_residual",
                 "J"});
    for (const auto& s : r.trace)
      w.row({dir, static_cast<long long>(c.seed), wp.lambda, wp.mu, hc.kappa, hc.eps,
             ll(s.iteration), s.rel_residual, s.J});
  }
  ctx.summary["residual"] = num(r.residual);
  ctx.summary["J"] = num(r.J);
  ctx.summary["J0"] = num(r.J0);
  ctx.summary["cg_iters"] = r.cg_iters;
  ctx.summary["converged"] = r.converged;
  ctx.summary["adjoint_gate"] = num(r.gate);
  ctx.summary["log_control_norm"] = num(r.log_control_norm);
  ctx.summary["log_control_norm_unclamped"] = num(r.log_control_norm_unclamped);
  ctx.out << dir << ": residual " << brief(r.residual) << ", J " << brief(r.J)
          << ", cg " << r.cg_iters << (r.converged ? "" : " (not converged)") << "\n";

  if (c.sweep) {
    const SweepResult sw = epsilon_sweep(hc, p, ws, tree, mesh, c.eps_list);
    CsvWriter w(ctx.path("hum_" + dir + "_sweep.csv"),
                {"direction", "seed", "lambda", "mu", "kappa", "eps", "residual", "J", "cg_iters",
                 "converged", "log_control_norm"});
    Series s{"E|y|^2 at the target time", {}, {}};
    for (const auto& row : sw.rows) {
      w.row({dir, static_cast<long long>(c.seed), wp.lambda, wp.mu, hc.kappa, row.eps,
             row.residual, row.J, ll(row.cg_iters), ll(row.converged ? 1 : 0),
             row.log_control_norm});
      s.x.push_back(row.eps);
      s.y.push_back(row.residual);
      if (!row.converged) ctx.warn("sweep point eps=" + format_double(row.eps) + " did not converge");
    }
    ctx.summary["sweep_slope"] = num(sw.slope);
    ctx.summary["sweep_control_ratio"] = num(sw.control_ratio);
    if (c.svg)
      write_svg_chart(ctx.path("hum_" + dir + "_sweep.svg"),
                      {"penalization sweep", "eps", "endpoint residual", true, true}, {s});
  }
  if (c.energy) {
    const EnergyLedger e = verify_energy_estimate(r, p, hc, ws, tree, mesh);
    CsvWriter w(ctx.path("hum_" + dir + "_energy.csv"),
                {"direction", "seed", "lambda", "mu", "eps", "side", "term", "log_value"});
    for (const auto& t : e.lhs)
      w.row({dir, static_cast<long long>(c.seed), wp.lambda, wp.mu, hc.eps, std::string("lhs"),
             t.name, t.log_value});
    for (const auto& t : e.rhs)
      w.row({dir, static_cast<long long>(c.seed), wp.lambda, wp.mu, hc.eps, std::string("rhs"),
             t.name, t.log_value});
    ctx.summary["energy_log_gap"] = num(e.log_gap);
    ctx.summary["energy_log_gap_xi2"] = num(e.log_gap_xi2);
  }
  require_converged(r, "hum-" + dir);
  return 0;
}

// ---------------------------------------------------------------- semilinear

int cmd_semilinear(Context& ctx, Direction d) {
  const auto& c = ctx.cfg;
  const ScenarioTree tree = build_tree(c.N, c.T);
  const SpatialMesh mesh = build_mesh(c.a_end, c.b_end, c.M, c.ctrl, c.inner);
  const WeightParams wp = c.weights_for(d);
  const WeightSystem ws(wp, mesh, tree);
  for (const auto& w : ws.warnings()) ctx.warn(w);
  const HumConfig hc = hum_config(c, d);
  const ControlProblem p = make_problem(c, d, tree, mesh);
  const std::string dir = to_string(d);
  const bool fwd = d == Direction::Forward;

  const Nonlinearity F = make_nonlinearity(c.F, c.L, fwd);
  const Nonlinearity F2 = make_nonlinearity(c.F2, c.L, true);
  const PicardResult r = fwd ? picard_forward(F, F2, p, hc, ws, tree, mesh, c.picard)
                             : picard_backward(F, p, hc, ws, tree, mesh, c.picard);
  for (const auto& w : r.trace.warnings) ctx.warn(w);

  {
    CsvWriter w(ctx.path("semilinear_" + dir + "_picard.csv"),
                {"direction", "seed", "F", "F2", "L", "lambda", "mu", "kappa", "eps", "iteration",
                 "log_residual_B", "rho", "residual_endpoint", "log_residual_B_unclamped"});
    Series s{"log relative residual", {}, {}};
    for (const auto& st : r.trace.steps) {
      w.row({dir, static_cast<long long>(c.seed), c.F, fwd ? c.F2 : std::string(), c.L, wp.lambda,
             wp.mu, hc.kappa, hc.eps, ll(st.iteration), st.log_residual_B, st.rho,
             st.residual_endpoint, st.log_residual_B_unclamped});
      s.x.push_back(st.iteration);
      s.y.push_back(st.log_residual_B);
    }
    if (c.svg)
      write_svg_chart(ctx.path("semilinear_" + dir + "_picard.svg"),
                      {"Picard iteration", "iteration", "log residual", false, false}, {s});
  }
  if (!r.control.control.u.empty())
    write_control(ctx, "semilinear_" + dir + "_control.csv", d, wp, hc.eps, r.control.control,
                  fwd ? &r.U_star : nullptr, tree, mesh);

  const double bound = 2.0 * hc.eps * r.control.J0;
  ctx.summary["converged"] = r.trace.converged;
  ctx.summary["diverged"] = r.trace.diverged;
  ctx.summary["iterations"] = r.trace.iterations;
  ctx.summary["consistency"] = num(r.consistency);
  ctx.summary["residual"] = num(r.control.residual);
  ctx.summary["J0"] = num(r.control.J0);
  ctx.summary["residual_within_2epsJ0"] = r.control.residual <= bound;
  ctx.out << dir << ": " << r.trace.iterations << " Picard iterations, consistency "
          << brief(r.consistency) << ", residual " << brief(r.control.residual)
          << "\n";

  if (r.trace.diverged)
    throw NumericalError("semilinear-" + dir + ": Picard iteration diverged (ratio above one for " +
                         std::to_string(c.picard.divergence_run) + " consecutive iterations)");
  if (!r.trace.converged)
    throw NumericalError("semilinear-" + dir + ": no convergence within " +
                         std::to_string(c.picard.max_iters) + " iterations");
  require_converged(r.control, "semilinear-" + dir);
  return 0;
}

// ---------------------------------------------------------------- probe

int cmd_probe(Context& ctx) {
  const auto& c = ctx.cfg;
  const ScenarioTree tree = build_tree(c.N, c.T);
  const SpatialMesh mesh = build_mesh(c.a_end, c.b_end, c.M, c.ctrl, c.inner);
  const Direction d = Direction::Backward;
  const WeightParams base = c.weights_for(d);
  const HumConfig hc = hum_config(c, d);
  const ControlProblem p = make_problem(c, d, tree, mesh);
  std::vector<std::pair<double, double>> grid;
  for (double mu : c.probe_mus)
    for (double l : c.probe_lambdas) grid.emplace_back(l, mu);
  const std::uint64_t seed = seed_split(c.seed, "probe");
  const ProbeTable t = contraction_probe(make_nonlinearity(c.F, c.L), p, hc, base, tree, mesh,
                                         grid, c.probe_pairs, seed);
  CsvWriter w(ctx.path("probe.csv"),
              {"seed", "F", "L", "kappa", "eps", "lambda", "mu", "pair", "ratio"});
  CsvWriter s(ctx.path("probe_summary.csv"),
              {"seed", "F", "L", "kappa", "lambda", "mu", "max_ratio", "contracting"});
  for (const auto& cell : t.cells) {
    for (std::size_t j = 0; j < cell.ratios.size(); ++j)
      w.row({static_cast<long long>(seed), c.F, c.L, hc.kappa, hc.eps, cell.lambda, cell.mu, ll(j),
             cell.ratios[j]});
    s.row({static_cast<long long>(seed), c.F, c.L, hc.kappa, cell.lambda, cell.mu, cell.max_ratio,
           ll(cell.max_ratio < 1.0 ? 1 : 0)});
    ctx.out << "lambda " << cell.lambda << ", mu " << cell.mu << ": max ratio "
            << brief(cell.max_ratio) << "\n";
  }
  ctx.summary["trend_ok"] = t.trend_ok;
  if (!t.trend_ok) ctx.warn("contraction ratios increase with lambda beyond the noise band");
  return 0;
}

// ---------------------------------------------------------------- selftest

double rel_gap(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

Control shifted(const Control& x, double t, const Control& d) {
  Control out = x, dd = d;
  dd.u *= t;
  out.u += dd.u;
  if (!out.U.empty()) {
    dd.U *= t;
    out.U += dd.U;
  }
  return out;
}

double gradient_check(const HumFunctional& f, std::uint64_t seed, int dirs) {
  const Control x = f.random(seed_split(seed, "x"));
  const Control g = f.gradient(x);
  double worst = 0.0;
  for (int j = 0; j < dirs; ++j) {
    const Control d = f.random(seed_split(seed, "d" + std::to_string(j)));
    const double t = 0.5;
    const double fd = (f.value(shifted(x, t, d)) - f.value(shifted(x, -t, d))) / (2 * t);
    worst = std::max(worst, rel_gap(fd, f.inner(g, d)));
  }
  return worst;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return kPosInf;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const std::vector<double>& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

int cmd_selftest(Context& ctx) {
  const auto& c = ctx.cfg;
  const ScenarioTree tree = build_tree(c.N, c.T);
  const SpatialMesh mesh = build_mesh(c.a_end, c.b_end, c.M, c.ctrl, c.inner);
  const std::uint64_t seed = seed_split(c.seed, "selftest");
  const int M = mesh.size();
  CsvWriter w(ctx.path("selftest.csv"), {"seed", "M", "N", "check", "value", "tolerance", "pass"});
  int failures = 0;
  auto record = [&](const std::string& name, double value, double tol) {
    const bool ok = value <= tol;
    w.row({static_cast<long long>(seed), ll(M), ll(c.N), name, value, tol, ll(ok ? 1 : 0)});
    ctx.out << (ok ? "PASS " : "FAIL ") << name << " " << brief(value) << " (tol "
            << brief(tol) << ")\n";
    if (!ok) ++failures;
  };

  for (Direction d : {Direction::Backward, Direction::Forward}) {
    const std::string dir = to_string(d);
    const WeightParams wp = c.weights_for(d);
    const WeightSystem ws(wp, mesh, tree);
    HumConfig hc = hum_config(c, d);
    hc.gate_pairs = 10;
    hc.gate_seed = seed_split(seed, "gate-" + dir);
    const ControlProblem p = make_problem(c, d, tree, mesh);
    const HumFunctional f(hc, p, ws, tree, mesh);
    record("adjoint-" + dir, f.adjoint_gate(), 1e-11);
    record("gradient-" + dir, gradient_check(f, seed_split(seed, "grad-" + dir), 5), 1e-6);
  }

  // level kernels: serial and parallel loops agree bitwise, and both match
  // the depth-first reference
  {
    const ControlProblem p = make_problem(c, Direction::Backward, tree, mesh);
    BackwardProblem bp;
    bp.coef = p.coef;
    bp.yT = p.terminal;
    bp.phi = random_adapted(tree, mesh, seed_split(seed, "phi"), 1.0, Support::Interior);
    ForwardProblem fp;
    fp.coef = p.coef;
    fp.coef.rho2 = AdaptedField();
    fp.phi1 = random_adapted(tree, mesh, seed_split(seed, "phi1"), 1.0, Support::Interior);
    fp.phi2 = random_adapted(tree, mesh, seed_split(seed, "phi2"), 1.0, Support::Interior);
    Rng rng(seed_split(seed, "z0"));
    fp.z0 = smooth_random(mesh, rng);
    SchemeOptions ser = c.hum.scheme, par = c.hum.scheme;
    ser.exec = Exec::Serial;
    par.exec = Exec::Parallel;
    const StatePair bs = solve_backward(bp, tree, mesh, ser);
    const StatePair bpar = solve_backward(bp, tree, mesh, par);
    const StatePair bref = reference::solve_backward(bp, tree, mesh, ser.theta);
    record("backward-serial-vs-parallel",
           std::max(max_abs_diff(bs.y.raw(), bpar.y.raw()), max_abs_diff(bs.Y.raw(), bpar.Y.raw())),
           0.0);
    record("backward-vs-reference",
           std::max(max_abs_diff(bs.y.raw(), bref.y.raw()) / max_abs(bs.y.raw()),
                    max_abs_diff(bs.Y.raw(), bref.Y.raw()) / max_abs(bs.Y.raw())),
           1e-12);
    const AdaptedField fs_ = solve_forward(fp, tree, mesh, ser);
    const AdaptedField fpar = solve_forward(fp, tree, mesh, par);
    const AdaptedField fref = reference::solve_forward(fp, tree, mesh, ser.theta);
    record("forward-serial-vs-parallel", max_abs_diff(fs_.raw(), fpar.raw()), 0.0);
    record("forward-vs-reference", max_abs_diff(fs_.raw(), fref.raw()) / max_abs(fs_.raw()), 1e-12);
    record("forward-measurability",
           measurability_probe(fs_, tree, forward_transition(fp, tree, mesh, ser)) ? 0.0 : 1.0, 0.0);
  }

  // without coefficients the backward solution is the conditional mean of
  // the terminal data: compare with a direct average over leaves
  {
    BackwardProblem bp;
    bp.yT = random_adapted(tree, mesh, seed_split(seed, "mean"), 1.0, Support::Leaves);
    const StatePair s = solve_backward(bp, tree, mesh);
    double worst = 0.0;
    const int N = tree.steps();
    for (std::size_t k = 0; k < tree.node_count(); ++k) {
      const int d = ScenarioTree::depth(k);
      const std::size_t width = std::size_t{1} << (N - d);
      const std::size_t first = ((k + 1) << (N - d)) - 1;
      for (int i = 0; i < M; ++i) {
        double sum = 0.0;
        for (std::size_t l = first; l < first + width; ++l) sum += bp.yT.at(l, i);
        worst = std::max(worst, std::abs(s.y.at(k, i) - sum / width));
      }
    }
    record("conditional-mean-oracle", worst / std::max(max_abs(bp.yT.raw()), 1e-300), 1e-13);
  }

  // weight profiles
  {
    int bad = 0;
    double order = kNegInf, excess = kNegInf;
    for (GammaVariant v : {GammaVariant::Backward, GammaVariant::BackwardRegularized,
                           GammaVariant::Forward, GammaVariant::ForwardRegularized}) {
      WeightParams wp = c.weights;
      wp.variant = v;
      const WeightSystem ws(wp, mesh, tree);
      const Gamma& g = is_regularized(v) ? ws.gamma_reg() : ws.gamma();
      for (const auto& j : check_junctions(g, 1e-4 * c.T)) bad += !j.pass;
      if (!is_regularized(v)) continue;
      for (int n = 0; n <= tree.steps(); ++n) {
        const double t = ws.node_time(n);
        if (!g.plain_singular_at(t))
          excess = std::max(excess, g.value(t) - g.eval_plain(t).value * (1 + 1e-14));
        for (int i = 0; i < M; ++i) {
          const double l = ws.ell_node(n, i);
          if (std::isfinite(l)) order = std::max(order, l - ws.ell_node(n, i, true));
        }
      }
    }
    record("gamma-junctions-failing", bad, 0.0);
    record("gamma-reg-minus-gamma", excess, 0.0);
    record("ell-minus-ell-reg", order, 0.0);
  }

  for (bool fwd : {false, true}) {
    const Nonlinearity F = make_nonlinearity(fwd ? c.F2 : c.F, c.L, fwd);
    const LipschitzAudit a = audit_nonlinearity(F, c.T, 1000, seed_split(seed, "lipschitz"), fwd);
    record(std::string("lipschitz-") + (fwd ? "F2" : "F"),
           a.zero_at_zero ? a.max_ratio : kPosInf, 1.01);
  }

  ctx.summary["failures"] = failures;
  if (failures > 0) throw NumericalError("selftest: " + std::to_string(failures) + " gates failed");
  return 0;
}

void write_manifest(Context& ctx, const std::string& status, int code, double seconds) {
  Json m;
  m["software"] = "nullctl";
  m["version"] = kSoftwareVersion;
  m["subcommand"] = ctx.subcommand;
  m["status"] = status;
  m["exit_code"] = code;
  m["master_seed"] = ctx.cfg.seed;
  m["config"] = Json::parse(ctx.cfg.resolved_json);
  Json outs = Json::array();
  for (const auto& f : ctx.files) {
    std::error_code ec;
    if (!fs::exists(ctx.dir / f, ec)) continue;
    outs.push_back({{"file", f}, {"checksum", file_checksum((ctx.dir / f).string())}});
  }
  m["outputs"] = outs;
  m["summary"] = ctx.summary;
  m["warnings"] = ctx.warnings;
  // not part of the reproducible record
  m["runtime"] = {{"wall_clock_seconds", seconds}, {"threads", omp_get_max_threads()}};
  write_text((ctx.dir / "manifest.json").string(), m.dump(2) + "\n");
}

}  // namespace

std::vector<std::string> subcommands() {
  return {"weights",         "carleman",           "hum-backward",      "hum-forward",
          "semilinear-backward", "semilinear-forward", "probe-contraction", "selftest"};
}

int run(const RunRequest& request, std::ostream& out, std::ostream& err) {
  const auto names = subcommands();
  if (std::find(names.begin(), names.end(), request.subcommand) == names.end()) {
    err << "error: unknown subcommand '" << request.subcommand << "'\n";
    return 1;
  }
  ExperimentConfig cfg;
  try {
    cfg = load_config(request.config_path, request.overrides);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);

  Context ctx{cfg, request.subcommand, fs::path(cfg.output_dir), {}, {}, Json::object(), out};
  try {
    fs::create_directories(ctx.dir);
  } catch (const std::exception& e) {
    err << "error: cannot create output directory " << cfg.output_dir << ": " << e.what() << "\n";
    return 1;
  }

  const auto t0 = std::chrono::steady_clock::now();
  int code = 0;
  std::string status = "ok";
  try {
    const std::string& s = request.subcommand;
    if (s == "weights") code = cmd_weights(ctx);
    else if (s == "carleman") code = cmd_carleman(ctx);
    else if (s == "hum-backward") code = cmd_hum(ctx, Direction::Backward);
    else if (s == "hum-forward") code = cmd_hum(ctx, Direction::Forward);
    else if (s == "semilinear-backward") code = cmd_semilinear(ctx, Direction::Backward);
    else if (s == "semilinear-forward") code = cmd_semilinear(ctx, Direction::Forward);
    else if (s == "probe-contraction") code = cmd_probe(ctx);
    else code = cmd_selftest(ctx);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    code = 1;
    status = "validation-failure";
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    code = 2;
    status = "numerical-failure";
  } catch (const SingularityError& e) {
    err << "numerical failure: " << e.what() << "\n";
    code = 2;
    status = "numerical-failure";
  }
  for (const auto& w : ctx.warnings) err << "warning: " << w << "\n";
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  try {
    write_manifest(ctx, status, code, secs);
  } catch (const std::exception& e) {
    err << "error: cannot write manifest: " << e.what() << "\n";
    if (code == 0) code = 1;
  }
  return code;
}

}  // namespace nullctl
