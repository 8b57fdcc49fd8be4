#include "nullctl/weights.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nullctl/errors.hpp"

namespace nullctl {

WeightBase::WeightBase(const SpatialMesh& mesh)
    : a_(mesh.a_end()), L_(mesh.b_end() - mesh.a_end()) {
  const Interval in = mesh.inner_interval();
  center_ = 0.5 * (in.lo + in.hi);
  // quadratic warps g(s) = s + k s (1 - s), |k| < 1, move the centre to 1/2
  double p = (center_ - a_) / L_;
  constexpr double kMax = 0.9;
  for (int it = 0; it < 64 && p != 0.5; ++it) {
    double k = (0.5 - p) / (p * (1 - p));
    const bool last = std::abs(k) <= kMax;
    if (!last) k = std::copysign(kMax, k);
    warps_.push_back(k);
    p = last ? 0.5 : p + k * p * (1 - p);
    if (last) break;
  }
  const int M = mesh.size();
  beta_grid_.resize(M);
  a0_ = std::numeric_limits<double>::infinity();
  for (int i = 0; i < M; ++i) {
    beta_grid_[i] = beta(mesh.x(i));
    if (!mesh.inner_mask()[i]) a0_ = std::min(a0_, std::abs(beta_prime(mesh.x(i))));
  }
  if (!(a0_ > 1e-10))
    throw ValidationError("weights: gradient floor a0 of the spatial bump vanishes on the grid");
}

void WeightBase::warp(double s, double& g, double& dg) const {
  g = s;
  dg = 1.0;
  for (double k : warps_) {
    dg *= 1 + k * (1 - 2 * g);
    g = g + k * g * (1 - g);
  }
}

double WeightBase::beta(double x) const {
  double g, dg;
  warp((x - a_) / L_, g, dg);
  return 4 * g * (1 - g);
}

double WeightBase::beta_prime(double x) const {
  double g, dg;
  warp((x - a_) / L_, g, dg);
  return 4 * (1 - 2 * g) * dg / L_;
}

double WeightParams::sigma() const { return lambda * mu * mu * std::exp(mu * (6 * m - 4)); }

std::vector<std::string> WeightParams::validate() const {
  std::vector<std::string> warnings;
  if (!(lambda_min >= 0.25) || !(mu_min >= 0.25))
    throw ValidationError("weights: lambda_min and mu_min cannot go below 0.25");
  if (!(lambda >= lambda_min)) throw ValidationError("weights: lambda below lambda_min");
  if (!(mu >= mu_min)) throw ValidationError("weights: mu below mu_min");
  if (!(m >= 1.0)) throw ValidationError("weights: m must be >= 1");
  if (!(T > 0.0 && T < 1.0)) throw ValidationError("weights: T must be in (0, 1)");
  if (!(kappa >= 10.0)) throw ValidationError("weights: kappa must be >= 10");
  if (is_regularized(variant) && !(eps > 0.0 && eps < T / 4))
    throw ValidationError("weights: eps must be in (0, T/4) for regularized variants");
  if (!(sigma() > 2.0)) {
    std::ostringstream os;
    os << "weights: sigma = lambda mu^2 e^{mu(6m-4)} = " << sigma() << " must exceed 2";
    throw ValidationError(os.str());
  }
  if (!(6 * mu * (m + 1) < 700))
    throw ValidationError("weights: mu and m too large for double-precision exponents");
  if (lambda < 1.0 || mu < 1.0)
    warnings.push_back("weights: lambda or mu below 1 leaves the regime where the estimates are stated");
  return warnings;
}

WeightSystem::WeightSystem(const WeightParams& params, const SpatialMesh& mesh,
                           const ScenarioTree& tree)
    : p_((params.validate(), params)),
      base_(mesh),
      plain_(unregularized(params.variant), params.T, params.m, params.sigma()),
      reg_(params.variant, params.T, params.m, params.sigma(), params.eps),
      N_(tree.steps()),
      M_(mesh.size()),
      dt_(tree.dt()) {
  warnings_ = p_.validate();
  if (std::abs(tree.horizon() - p_.T) > 1e-14 * p_.T)
    throw ValidationError("weights: horizon differs from the tree horizon");
  // the plain profile must share the bridges of the regularized one
  plain_ = Gamma(unregularized(p_.variant), p_.T, p_.m, p_.sigma(), 0.0, reg_.main_bridge_kind());
  const double mu = p_.mu, m = p_.m;
  const double log_mu = std::log(mu);
  x_.resize(M_);
  mubeta_.resize(M_);
  K_.resize(M_);
  for (int i = 0; i < M_; ++i) {
    x_[i] = mesh.x(i);
    mubeta_[i] = mu * (base_.beta_grid()[i] + 6 * m);
    // mu e^{6mu(m+1)} - e^{mu(beta+6m)} = -mu e^{6mu(m+1)} expm1(mu(beta+6m) - 6mu(m+1) - log mu)
    const double big = 6 * mu * (m + 1);
    K_[i] = -mu * std::exp(big) * std::expm1(mubeta_[i] - big - log_mu);
    if (!(K_[i] > 0.0)) throw ValidationError("weights: phi must be negative; increase mu");
  }
  auto sample = [&](const Gamma& g, double t) {
    if (g.singular_at(t)) return kPosInf;
    return g.eval(t).value;
  };
  gnode_.resize(N_ + 1);
  gnode_reg_.resize(N_ + 1);
  for (int n = 0; n <= N_; ++n) {
    gnode_[n] = sample(plain_, node_time(n));
    gnode_reg_[n] = sample(reg_, node_time(n));
  }
  gcell_.resize(N_);
  gcell_reg_.resize(N_);
  for (int n = 0; n < N_; ++n) {
    gcell_[n] = sample(plain_, cell_time(n));
    gcell_reg_[n] = sample(reg_, cell_time(n));
  }
}

const Gamma& WeightSystem::gamma_reg() const { return reg_; }

double WeightSystem::combine(double log_gamma_xi, double gamma_theta, bool singular_xi,
                             bool singular_theta, int i, const PowerSpec& s) const {
  double out = s.log_const;
  if (s.a != 0) out += s.a * std::log(p_.lambda);
  if (s.b != 0) out += s.b * std::log(p_.mu);
  if (s.d != 0) {
    if (singular_theta) {
      if (s.d > 0) return kNegInf;
      throw SingularityError(
          "weights: negative theta power at the singular endpoint; use the regularized variant");
    }
    out += s.d * (-p_.lambda * gamma_theta * K_[i]);
  }
  if (s.c != 0) {
    if (singular_xi) return s.c > 0 ? kPosInf : kNegInf;
    out += s.c * (log_gamma_xi + mubeta_[i]);
  }
  return out;
}

namespace {

double log_or_inf(double g) { return std::isinf(g) ? kPosInf : std::log(g); }

}  // namespace

double WeightSystem::log_weight(double t, double x, const PowerSpec& spec) const {
  const Gamma& gx = spec.xi_reg ? reg_ : plain_;
  const Gamma& gt = spec.theta_reg ? reg_ : plain_;
  if ((spec.xi_reg || spec.theta_reg) && !is_regularized(p_.variant))
    throw ValidationError("weights: regularized weight requested from an unregularized system");
  // nearest grid point carries the cached beta; off-grid x uses beta directly
  const double mb = p_.mu * (base_.beta(x) + 6 * p_.m);
  const double big = 6 * p_.mu * (p_.m + 1);
  const double K = -p_.mu * std::exp(big) * std::expm1(mb - big - std::log(p_.mu));
  const bool sx = gx.singular_at(t), st = gt.singular_at(t);
  const double gxv = sx ? kPosInf : gx.eval(t).value;
  const double gtv = st ? kPosInf : gt.eval(t).value;
  double out = spec.log_const;
  if (spec.a != 0) out += spec.a * std::log(p_.lambda);
  if (spec.b != 0) out += spec.b * std::log(p_.mu);
  if (spec.d != 0) {
    if (st) {
      if (spec.d > 0) return kNegInf;
      throw SingularityError(
          "weights: negative theta power at the singular endpoint; use the regularized variant");
    }
    out += spec.d * (-p_.lambda * gtv * K);
  }
  if (spec.c != 0) {
    if (sx) return spec.c > 0 ? kPosInf : kNegInf;
    out += spec.c * (std::log(gxv) + mb);
  }
  return out;
}

double WeightSystem::log_xi(double t, double x, bool reg) const {
  PowerSpec s;
  s.c = 1;
  s.xi_reg = reg;
  return log_weight(t, x, s);
}

double WeightSystem::ell(double t, double x, bool reg) const {
  PowerSpec s;
  s.d = 1;
  s.theta_reg = reg;
  return log_weight(t, x, s);
}

double WeightSystem::log_weight_node(int n, int i, const PowerSpec& spec) const {
  if ((spec.xi_reg || spec.theta_reg) && !is_regularized(p_.variant))
    throw ValidationError("weights: regularized weight requested from an unregularized system");
  const double gx = spec.xi_reg ? gnode_reg_[n] : gnode_[n];
  const double gt = spec.theta_reg ? gnode_reg_[n] : gnode_[n];
  return combine(log_or_inf(gx), gt, std::isinf(gx), std::isinf(gt), i, spec);
}

double WeightSystem::log_weight_cell(int n, int i, const PowerSpec& spec) const {
  if ((spec.xi_reg || spec.theta_reg) && !is_regularized(p_.variant))
    throw ValidationError("weights: regularized weight requested from an unregularized system");
  const double gx = spec.xi_reg ? gcell_reg_[n] : gcell_[n];
  const double gt = spec.theta_reg ? gcell_reg_[n] : gcell_[n];
  return combine(log_or_inf(gx), gt, std::isinf(gx), std::isinf(gt), i, spec);
}

double WeightSystem::log_xi_node(int n, int i, bool reg) const {
  PowerSpec s;
  s.c = 1;
  s.xi_reg = reg;
  return log_weight_node(n, i, s);
}

double WeightSystem::ell_node(int n, int i, bool reg) const {
  PowerSpec s;
  s.d = 1;
  s.theta_reg = reg;
  return log_weight_node(n, i, s);
}

double WeightSystem::log_xi_cell(int n, int i, bool reg) const {
  PowerSpec s;
  s.c = 1;
  s.xi_reg = reg;
  return log_weight_cell(n, i, s);
}

double WeightSystem::ell_cell(int n, int i, bool reg) const {
  PowerSpec s;
  s.d = 1;
  s.theta_reg = reg;
  return log_weight_cell(n, i, s);
}

std::vector<double> WeightSystem::cell_table(const PowerSpec& spec) const {
  std::vector<double> out(static_cast<std::size_t>(N_) * M_);
  for (int n = 0; n < N_; ++n)
    for (int i = 0; i < M_; ++i) out[static_cast<std::size_t>(n) * M_ + i] = log_weight_cell(n, i, spec);
  return out;
}

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a == kPosInf || b == kPosInf) return kPosInf;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

double log_sum(const std::vector<double>& terms) {
  double acc = kNegInf;
  for (double t : terms) acc = log_add(acc, t);
  return acc;
}

namespace {

/// Streaming log-sum-exp: keeps max and the sum of exp(term - max).
struct LogAccumulator {
  double mx = kNegInf;
  double sum = 0.0;
  void add(double t) {
    if (t == kNegInf) return;
    if (t == kPosInf) {
      mx = kPosInf;
      return;
    }
    if (mx == kPosInf) return;
    if (t <= mx) {
      sum += std::exp(t - mx);
    } else {
      sum = sum * std::exp(mx - t) + 1.0;
      mx = t;
    }
  }
  double value() const {
    if (mx == kNegInf || mx == kPosInf) return mx;
    return mx + std::log(sum);
  }
};

}  // namespace

double weighted_expectation_norm(const AdaptedField& field, const PowerSpec& spec,
                                 const WeightSystem& system, const ScenarioTree& tree,
                                 const SpatialMesh& mesh, TimeSupport support, Region region) {
  const int M = mesh.size();
  if (field.width() != M || field.nodes() != tree.node_count())
    throw ValidationError("weighted_expectation_norm: field does not match tree and mesh");
  const auto& mask = mesh.ctrl_mask();
  const double log_h = std::log(mesh.h());
  LogAccumulator acc;
  auto add_level = [&](int depth, double log_measure, auto&& weight_of) {
    std::vector<double> w(M);
    for (int i = 0; i < M; ++i) w[i] = weight_of(i);
    const double log_prob = -depth * std::log(2.0);
    for (std::size_t k = ScenarioTree::level_begin(depth); k < ScenarioTree::level_end(depth); ++k) {
      auto v = field.node(k);
      for (int i = 0; i < M; ++i) {
        if (region == Region::Control && !mask[i]) continue;
        if (v[i] == 0.0) continue;
        acc.add(log_prob + log_measure + w[i] + 2.0 * std::log(std::abs(v[i])));
      }
    }
  };
  switch (support) {
    case TimeSupport::Running: {
      const double lm = log_h + std::log(tree.dt());
      for (int n = 0; n < tree.steps(); ++n)
        add_level(n, lm, [&](int i) { return system.log_weight_cell(n, i, spec); });
      break;
    }
    case TimeSupport::Initial:
      add_level(0, log_h, [&](int i) { return system.log_weight_node(0, i, spec); });
      break;
    case TimeSupport::Terminal: {
      const int N = tree.steps();
      add_level(N, log_h, [&](int i) { return system.log_weight_node(N, i, spec); });
      break;
    }
  }
  return acc.value();
}

void write_weights_csv(const WeightSystem& system, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open " + path);
  os << "t,x,log_xi,ell\r\n";
  const bool reg = is_regularized(system.params().variant);
  char line[160];
  for (int n = 0; n <= system.steps(); ++n) {
    for (int i = 0; i < system.width(); ++i) {
      const double lx = system.log_xi_node(n, i, reg);
      const double l = system.ell_node(n, i, reg);
      if (std::isinf(lx) || std::isinf(l)) continue;
      std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g\r\n", system.node_time(n),
                    system.x(i), lx, l);
      os << line;
    }
  }
}

}  // namespace nullctl
