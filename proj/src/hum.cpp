#include "nullctl/hum.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nullctl/errors.hpp"
#include "nullctl/generators.hpp"
#include "nullctl/seed.hpp"

namespace nullctl {

namespace {

void axpy(double a, const AdaptedField& x, AdaptedField& y) {
  if (x.empty()) return;
  auto& yr = y.raw();
  const auto& xr = x.raw();
  for (std::size_t j = 0; j < yr.size(); ++j) yr[j] += a * xr[j];
}

void axpy(double a, const Control& x, Control& y) {
  axpy(a, x.u, y.u);
  axpy(a, x.U, y.U);
}

/// out = z + s * out
void xpay(const Control& z, double s, Control& out) {
  auto one = [&](const AdaptedField& zz, AdaptedField& o) {
    if (zz.empty()) return;
    for (std::size_t j = 0; j < o.raw().size(); ++j) o.raw()[j] = zz.raw()[j] + s * o.raw()[j];
  };
  one(z.u, out.u);
  one(z.U, out.U);
}

double rel_gap(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

}  // namespace

std::string to_string(Direction d) { return d == Direction::Backward ? "backward" : "forward"; }

Direction parse_direction(const std::string& s) {
  if (s == "backward") return Direction::Backward;
  if (s == "forward") return Direction::Forward;
  throw ValidationError("hum: unknown direction '" + s + "'");
}

void HumConfig::validate() const {
  if (!(eps > 0.0)) throw ValidationError("hum: eps must be positive");
  if (!(cg_tol > 0.0 && cg_tol < 1.0)) throw ValidationError("hum: cg_tol must be in (0, 1)");
  if (cg_max_iters < 1) throw ValidationError("hum: cg_max_iters must be positive");
  if (!(kappa >= 10.0)) throw ValidationError("hum: kappa must be >= 10");
  if (!(weight_scale > 0.0 && std::isfinite(weight_scale)))
    throw ValidationError("hum: weight_scale must be positive and finite");
  if (gate_pairs < 1) throw ValidationError("hum: gate_pairs must be positive");
}

PowerSpec control_weight_spec() { return PowerSpec{-3, -4, -3, -2}; }
PowerSpec diffusion_control_weight_spec() { return PowerSpec{-2, -2, -3, -2}; }
PowerSpec state_weight_spec() {
  PowerSpec s;
  s.d = -2;
  s.theta_reg = true;
  return s;
}
PowerSpec gradient_weight_spec() {
  PowerSpec s{-2, -2, -3, -2};
  s.theta_reg = true;
  return s;
}

OptimizerWeights optimizer_weights(const HumConfig& config, const WeightSystem& system) {
  OptimizerWeights w;
  w.N = system.steps();
  w.M = system.width();
  auto lu = system.cell_table(control_weight_spec());
  auto lU = system.cell_table(diffusion_control_weight_spec());
  auto ly = system.cell_table(state_weight_spec());
  auto lg = system.cell_table(gradient_weight_spec());
  w.log_shift = *std::max_element(ly.begin(), ly.end());
  const double k = config.kappa;
  auto map = [&](const std::vector<double>& l) {
    std::vector<double> out(l.size());
    for (std::size_t j = 0; j < l.size(); ++j) out[j] = config.weight_scale * std::exp(std::clamp(l[j] - w.log_shift, -k, k));
    return out;
  };
  w.u = map(lu);
  w.U = map(lU);
  w.y = map(ly);
  w.g = map(lg);
  return w;
}

HumFunctional::HumFunctional(const HumConfig& config, const ControlProblem& problem,
                             const WeightSystem& system, const ScenarioTree& tree,
                             const SpatialMesh& mesh)
    : cfg_(config), prob_(problem), sys_(system), tree_(tree), mesh_(mesh) {
  cfg_.validate();
  const GammaVariant v = system.params().variant;
  if (!is_regularized(v))
    throw ValidationError(
        "hum: the state penalty needs the regularized weight; select a regularized variant");
  if (is_forward(v) != (config.direction == Direction::Forward))
    throw ValidationError("hum: weight variant " + to_string(v) + " does not match the " +
                          to_string(config.direction) + " direction");
  if (system.steps() != tree.steps() || system.width() != mesh.size())
    throw ValidationError("hum: weight system built for a different tree or mesh");
  w_ = optimizer_weights(cfg_, sys_);
}

Control HumFunctional::zero() const {
  Control c;
  c.u = AdaptedField(tree_, mesh_.size());
  if (cfg_.direction == Direction::Forward) c.U = AdaptedField(tree_, mesh_.size());
  return c;
}

Control HumFunctional::random(std::uint64_t seed) const {
  Control c;
  c.u = random_rough(tree_, mesh_, seed_split(seed, "u"), Support::Interior, true);
  if (cfg_.direction == Direction::Forward)
    c.U = random_rough(tree_, mesh_, seed_split(seed, "U"), Support::Interior);
  return c;
}

StatePair HumFunctional::state(const Control& c) const {
  if (cfg_.direction == Direction::Backward) {
    BackwardProblem p;
    p.coef = prob_.coef;
    p.yT = prob_.terminal;
    p.phi = prob_.phi;
    p.b = prob_.b;
    p.u = c.u;
    return solve_backward(p, tree_, mesh_, cfg_.scheme);
  }
  ForwardProblem p;
  p.coef = prob_.coef;
  p.z0 = prob_.initial;
  p.b = prob_.b;
  p.phi1 = prob_.phi.empty() ? AdaptedField(tree_, mesh_.size()) : prob_.phi;
  axpy(1.0, c.u, p.phi1);
  p.phi2 = c.U;
  return {solve_forward(p, tree_, mesh_, cfg_.scheme), {}};
}

AdaptedField HumFunctional::linear_state(const Control& c) const {
  if (cfg_.direction == Direction::Backward)
    return backward_control_to_state(prob_.coef, c.u, tree_, mesh_, cfg_.scheme).y;
  return forward_control_to_state(prob_.coef, c.u, c.U, tree_, mesh_, cfg_.scheme);
}

double HumFunctional::endpoint_residual(const AdaptedField& y) const {
  const int M = mesh_.size();
  if (cfg_.direction == Direction::Backward) return l2_norm_sq(y.node(0), mesh_.h());
  const int N = tree_.steps();
  double s = 0.0;
  for (std::size_t k = ScenarioTree::level_begin(N); k < ScenarioTree::level_end(N); ++k)
    s += ScenarioTree::probability(k) * l2_norm_sq(y.node(k), mesh_.h());
  (void)M;
  return s;
}

double HumFunctional::inner(const Control& a, const Control& b) const {
  const int M = mesh_.size();
  double s = 0.0;
  for (std::size_t k = 0; k < tree_.interior_count(); ++k) {
    double d = 0.0;
    for (int i = 0; i < M; ++i) d += a.u.at(k, i) * b.u.at(k, i);
    if (!a.U.empty())
      for (int i = 0; i < M; ++i) d += a.U.at(k, i) * b.U.at(k, i);
    s += ScenarioTree::probability(k) * d;
  }
  return s * tree_.dt() * mesh_.h();
}

double HumFunctional::value_from_state(const Control& c, const AdaptedField& y) const {
  const int M = mesh_.size();
  const double h = mesh_.h();
  std::vector<double> g(M);
  double s = 0.0;
  for (std::size_t k = 0; k < tree_.interior_count(); ++k) {
    const int n = ScenarioTree::depth(k);
    double d = 0.0;
    auto yk = y.node(k);
    for (int i = 0; i < M; ++i) {
      d += w_.cell(w_.u, n, i) * c.u.at(k, i) * c.u.at(k, i);
      d += w_.cell(w_.y, n, i) * yk[i] * yk[i];
    }
    if (!c.U.empty())
      for (int i = 0; i < M; ++i) d += w_.cell(w_.U, n, i) * c.U.at(k, i) * c.U.at(k, i);
    if (cfg_.gradient_penalty) {
      nullctl::gradient(yk, h, g);
      for (int i = 0; i < M; ++i) d += w_.cell(w_.g, n, i) * g[i] * g[i];
    }
    s += ScenarioTree::probability(k) * d;
  }
  return 0.5 * s * tree_.dt() * h + endpoint_residual(y) / (2.0 * cfg_.eps);
}

double HumFunctional::value(const Control& c) const { return value_from_state(c, state(c).y); }

AdaptedField HumFunctional::state_cotangent(const AdaptedField& y) const {
  const int M = mesh_.size();
  const double h = mesh_.h(), dt = tree_.dt();
  const bool fwd = cfg_.direction == Direction::Forward;
  // backward: running-pair density; forward: per-node pairing (scaled by dt h)
  const double scale = fwd ? dt * h : 1.0;
  AdaptedField w(tree_, M);
  std::vector<double> g(M), t(M);
  for (std::size_t k = 0; k < tree_.interior_count(); ++k) {
    const int n = ScenarioTree::depth(k);
    auto yk = y.node(k);
    auto wk = w.node(k);
    for (int i = 0; i < M; ++i) wk[i] = w_.cell(w_.y, n, i) * yk[i];
    if (cfg_.gradient_penalty) {
      nullctl::gradient(yk, h, g);
      for (int i = 0; i < M; ++i) g[i] *= w_.cell(w_.g, n, i);
      nullctl::gradient(g, h, t);  // G^T = -G
      for (int i = 0; i < M; ++i) wk[i] -= t[i];
    }
    for (int i = 0; i < M; ++i) wk[i] *= scale;
  }
  if (fwd) {
    const int N = tree_.steps();
    for (std::size_t k = ScenarioTree::level_begin(N); k < ScenarioTree::level_end(N); ++k)
      for (int i = 0; i < M; ++i) w.at(k, i) = h * y.at(k, i) / cfg_.eps;
  } else {
    for (int i = 0; i < M; ++i) w.at(0, i) += y.at(0, i) / (cfg_.eps * dt);
  }
  return w;
}

Control HumFunctional::pull_back(const AdaptedField& cot) const {
  Control out;
  if (cfg_.direction == Direction::Backward) {
    out.u = apply_adjoint(prob_.coef, cot, tree_, mesh_, cfg_.scheme);
    return out;
  }
  auto c = forward_adjoint_sweep(prob_.coef, cot, tree_, mesh_, cfg_.scheme);
  const double inv = 1.0 / (tree_.dt() * mesh_.h());
  c.u *= inv;
  c.U *= inv;
  out.u = std::move(c.u);
  out.U = std::move(c.U);
  return out;
}

void HumFunctional::add_control_terms(const Control& c, Control& out) const {
  const int M = mesh_.size();
  for (std::size_t k = 0; k < tree_.interior_count(); ++k) {
    const int n = ScenarioTree::depth(k);
    for (int i = 0; i < M; ++i) out.u.at(k, i) += w_.cell(w_.u, n, i) * c.u.at(k, i);
    if (!c.U.empty())
      for (int i = 0; i < M; ++i) out.U.at(k, i) += w_.cell(w_.U, n, i) * c.U.at(k, i);
  }
}

Control HumFunctional::gradient(const Control& c) const {
  return gradient_from_state(c, state(c).y);
}

Control HumFunctional::gradient_from_state(const Control& c, const AdaptedField& y) const {
  Control g = pull_back(state_cotangent(y));
  add_control_terms(c, g);
  return g;
}

Control HumFunctional::hessian(const Control& d) const {
  Control g = pull_back(state_cotangent(linear_state(d)));
  add_control_terms(d, g);
  return g;
}

double HumFunctional::adjoint_gate() const {
  double worst = 0.0;
  const int M = mesh_.size();
  const double dt = tree_.dt(), h = mesh_.h();
  for (int p = 0; p < cfg_.gate_pairs; ++p) {
    const std::uint64_t s = seed_split(cfg_.gate_seed, "gate" + std::to_string(p));
    Control c = random(s);
    if (cfg_.direction == Direction::Backward) {
      auto w = random_rough(tree_, mesh_, seed_split(s, "w"), Support::Interior);
      auto y = linear_state(c);
      auto adj = apply_adjoint(prob_.coef, w, tree_, mesh_, cfg_.scheme);
      double lhs = 0, rhs = 0;
      for (std::size_t k = 0; k < tree_.interior_count(); ++k) {
        double a = 0, b = 0;
        for (int i = 0; i < M; ++i) {
          a += y.at(k, i) * w.at(k, i);
          b += c.u.at(k, i) * adj.at(k, i);
        }
        lhs += ScenarioTree::probability(k) * a;
        rhs += ScenarioTree::probability(k) * b;
      }
      worst = std::max(worst, rel_gap(lhs * dt * h, rhs * dt * h));
    } else {
      auto g = random_rough(tree_, mesh_, seed_split(s, "g"), Support::All);
      auto z = linear_state(c);
      auto cot = forward_adjoint_sweep(prob_.coef, g, tree_, mesh_, cfg_.scheme);
      double lhs = 0, rhs = 0;
      for (std::size_t k = 0; k < tree_.node_count(); ++k) {
        double a = 0, b = 0;
        for (int i = 0; i < M; ++i) {
          a += g.at(k, i) * z.at(k, i);
          if (k < tree_.interior_count())
            b += cot.u.at(k, i) * c.u.at(k, i) + cot.U.at(k, i) * c.U.at(k, i);
        }
        lhs += ScenarioTree::probability(k) * a;
        rhs += ScenarioTree::probability(k) * b;
      }
      worst = std::max(worst, rel_gap(lhs, rhs));
    }
  }
  return worst;
}

namespace {

/// z = P^{-1} r with P the diagonal of the control weights.
void precondition(const HumFunctional& f, const Control& r, Control& z) {
  const auto& w = f.weights();
  const auto& mask = f.mesh().ctrl_mask();
  const int M = f.mesh().size();
  for (std::size_t k = 0; k < f.tree().interior_count(); ++k) {
    const int n = ScenarioTree::depth(k);
    for (int i = 0; i < M; ++i) {
      z.u.at(k, i) = mask[i] ? r.u.at(k, i) / w.cell(w.u, n, i) : 0.0;
      if (!r.U.empty()) z.U.at(k, i) = r.U.at(k, i) / w.cell(w.U, n, i);
    }
  }
}

double log_inner_weighted(const HumFunctional& f, const Control& c) {
  Control pc = f.zero();
  const auto& w = f.weights();
  const int M = f.mesh().size();
  for (std::size_t k = 0; k < f.tree().interior_count(); ++k) {
    const int n = ScenarioTree::depth(k);
    for (int i = 0; i < M; ++i) {
      pc.u.at(k, i) = w.cell(w.u, n, i) * c.u.at(k, i);
      if (!c.U.empty()) pc.U.at(k, i) = w.cell(w.U, n, i) * c.U.at(k, i);
    }
  }
  const double v = f.inner(c, pc);
  return v > 0 ? std::log(v) : kNegInf;
}

}  // namespace

ControlResult solve_null_control(const HumFunctional& f) {
  ControlResult res;
  res.gate = f.adjoint_gate();
  if (!(res.gate <= f.config().gate_tol)) {
    std::ostringstream os;
    os << "hum: adjoint dot-product gate failed (discrepancy " << res.gate << ")";
    throw NumericalError(os.str());
  }
  Control x = f.zero();
  const auto s0 = f.state(x);
  res.J0 = f.value_from_state(x, s0.y);
  Control b = f.gradient_from_state(x, s0.y);
  b.u *= -1.0;
  if (!b.U.empty()) b.U *= -1.0;
  Control r = b;
  Control z = f.zero();
  precondition(f, r, z);
  Control p = z;
  double rz = f.inner(r, z);
  const double norm0 = std::sqrt(std::max(rz, 0.0));
  res.trace.push_back({0, norm0 > 0 ? 1.0 : 0.0, res.J0});
  int it = 0;
  bool converged = norm0 == 0.0;
  while (!converged && it < f.config().cg_max_iters) {
    Control Hp = f.hessian(p);
    const double pHp = f.inner(p, Hp);
    if (!(pHp > 0.0)) break;
    const double alpha = rz / pHp;
    axpy(alpha, p, x);
    axpy(-alpha, Hp, r);
    precondition(f, r, z);
    const double rz_new = f.inner(r, z);
    ++it;
    const double rn = std::sqrt(std::max(rz_new, 0.0));
    const double J = res.J0 - 0.5 * f.inner(b, x) - 0.5 * f.inner(x, r);
    res.trace.push_back({it, rn / norm0, J});
    // preconditioned Hessian is >= 1, so rn bounds the control error
    const double lx = log_inner_weighted(f, x);
    if (rn == 0.0 || (lx > kNegInf && rn <= f.config().cg_tol * std::exp(0.5 * lx))) {
      converged = true;
      break;
    }
    xpay(z, rz_new / rz, p);
    rz = rz_new;
  }
  res.cg_iters = it;
  res.converged = converged;
  res.state = f.state(x);
  res.J = f.value_from_state(x, res.state.y);
  res.residual = f.endpoint_residual(res.state.y);

  // optimality: u = -P^{-1} (dual state pulled back); measure the gap
  Control g = f.gradient_from_state(x, res.state.y);
  Control pg = f.zero();
  precondition(f, g, pg);
  const double gnorm = std::sqrt(std::max(f.inner(g, pg), 0.0));
  const double lx = log_inner_weighted(f, x);
  res.log_control_norm = lx;
  res.dual_residual = lx == kNegInf ? (gnorm == 0.0 ? 0.0 : kPosInf) : gnorm / std::exp(0.5 * lx);
  res.control = std::move(x);
  return res;
}

ControlResult solve_null_control(const HumConfig& config, const ControlProblem& problem,
                                 const WeightSystem& system, const ScenarioTree& tree,
                                 const SpatialMesh& mesh) {
  HumFunctional f(config, problem, system, tree, mesh);
  ControlResult res = solve_null_control(f);
  res.log_control_norm_unclamped =
      weighted_expectation_norm(res.control.u, control_weight_spec(), system, tree, mesh,
                                TimeSupport::Running, Region::Control);
  if (!res.control.U.empty())
    res.log_control_norm_unclamped =
        log_add(res.log_control_norm_unclamped,
                weighted_expectation_norm(res.control.U, diffusion_control_weight_spec(), system,
                                          tree, mesh));
  return res;
}

SweepResult epsilon_sweep(const HumConfig& config_template, const ControlProblem& problem,
                          const WeightSystem& system, const ScenarioTree& tree,
                          const SpatialMesh& mesh, const std::vector<double>& eps_list) {
  if (eps_list.size() < 3) throw ValidationError("epsilon_sweep: need at least 3 values");
  for (std::size_t j = 1; j < eps_list.size(); ++j)
    if (!(eps_list[j] < eps_list[j - 1]))
      throw ValidationError("epsilon_sweep: eps values must be decreasing");
  SweepResult out;
  double lo = kPosInf, hi = 0.0;
  for (double eps : eps_list) {
    HumConfig cfg = config_template;
    cfg.eps = eps;
    auto r = solve_null_control(cfg, problem, system, tree, mesh);
    out.rows.push_back({eps, r.residual, r.J, r.cg_iters, r.converged, r.log_control_norm});
    // norm, not its square
    const double n = r.log_control_norm == kNegInf ? 0.0 : std::exp(0.5 * r.log_control_norm);
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  out.control_ratio = hi == 0.0 ? 1.0 : hi / lo;
  out.slope_defined = true;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& row : out.rows) {
    if (!(row.residual > 0.0)) out.slope_defined = false;
    const double x = std::log(row.eps), y = std::log(row.residual);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(out.rows.size());
  out.slope = out.slope_defined ? (n * sxy - sx * sy) / (n * sxx - sx * sx)
                                : std::numeric_limits<double>::quiet_NaN();
  return out;
}

namespace {


}  // namespace

EnergyLedger verify_energy_estimate(const ControlResult& result, const ControlProblem& problem,
                                    const HumConfig& config, const WeightSystem& system,
                                    const ScenarioTree& tree, const SpatialMesh& mesh) {
  EnergyLedger L;
  const auto& p = system.params();
  const double log_l = std::log(p.lambda), log_m = std::log(p.mu);
  const auto& y = result.state.y;
  auto norm = [&](const AdaptedField& f, PowerSpec s, TimeSupport t = TimeSupport::Running,
                  Region r = Region::Whole) {
    if (f.empty()) return kNegInf;
    return weighted_expectation_norm(f, s, system, tree, mesh, t, r);
  };
  const PowerSpec wy{0, 0, 0, -2};
  const PowerSpec wg{-2, -2, -3, -2};
  const PowerSpec wg2{-2, -2, -2, -2};
  L.lhs.push_back({"state", norm(y, wy)});
  L.lhs.push_back({"gradient", norm(gradient_field(y, mesh), wg)});
  double martingale_xi2 = kNegInf;
  if (config.direction == Direction::Backward) {
    L.lhs.push_back({"martingale", norm(result.state.Y, wg)});
    martingale_xi2 = norm(result.state.Y, wg2);
  } else {
    L.lhs.push_back({"diffusion_control", norm(result.control.U, wg)});
    martingale_xi2 = norm(result.control.U, wg2);
  }
  L.lhs.push_back(
      {"control", norm(result.control.u, control_weight_spec(), TimeSupport::Running, Region::Control)});

  if (config.direction == Direction::Backward) {
    PowerSpec term;
    term.log_const = -log_l - 2 * log_m +
                     4 * p.lambda * p.mu * std::exp(6 * p.mu * (p.m + 1)) - 6 * p.mu * p.m;
    L.rhs.push_back({"terminal", norm(problem.terminal, term, TimeSupport::Terminal)});
  } else {
    PowerSpec init{-1, -2, 0, -2};
    init.log_const = -6 * p.mu * p.m;
    AdaptedField z0(tree, mesh.size());
    if (!problem.initial.empty())
      std::copy(problem.initial.begin(), problem.initial.end(), z0.node(0).begin());
    L.rhs.push_back({"initial", norm(z0, init, TimeSupport::Initial)});
  }
  L.rhs.push_back({"source", norm(problem.phi, PowerSpec{-3, -4, -3, -2})});
  L.rhs.push_back({"divergence_source", norm(problem.b, PowerSpec{-1, -2, -1, -2})});

  L.log_lhs = kNegInf;
  for (const auto& t : L.lhs) L.log_lhs = log_add(L.log_lhs, t.log_value);
  L.log_rhs = kNegInf;
  for (const auto& t : L.rhs) L.log_rhs = log_add(L.log_rhs, t.log_value);
  double lhs_xi2 = kNegInf;
  for (std::size_t j = 0; j < L.lhs.size(); ++j)
    lhs_xi2 = log_add(lhs_xi2, j == 2 ? martingale_xi2 : L.lhs[j].log_value);
  L.degenerate = L.log_lhs == kNegInf || L.log_rhs == kNegInf;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  L.log_gap = L.degenerate ? nan : L.log_lhs - L.log_rhs;
  L.log_gap_xi2 = L.degenerate ? nan : lhs_xi2 - L.log_rhs;
  return L;
}

}  // namespace nullctl
