#include "nullctl/spde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nullctl/errors.hpp"

namespace nullctl {

namespace {

/// Per-node diffusion operator: factorized A = I - theta dt D and the
/// explicit part E = I + (1 - theta) dt D.
class NodeOp {
 public:
  void setup(std::span<const double> a, int M, double theta, double dt, double h) {
    M_ = M;
    theta_ = theta;
    r_ = dt / (h * h);
    diffusion_ = !a.empty();
    if (!diffusion_) return;
    f_.resize(M + 1);
    f_[0] = a[0];
    f_[M] = a[M - 1];
    for (int k = 1; k < M; ++k) f_[k] = 0.5 * (a[k - 1] + a[k]);
    cp_.resize(M);
    den_.resize(M);
    const double s = theta * r_;
    for (int i = 0; i < M; ++i) {
      const double d = 1.0 + s * (f_[i] + f_[i + 1]);
      const double lower = i > 0 ? -s * f_[i] : 0.0;
      den_[i] = d - (i > 0 ? lower * cp_[i - 1] : 0.0);
      cp_[i] = (i + 1 < M) ? -s * f_[i + 1] / den_[i] : 0.0;
    }
  }

  /// out = E v (out may alias nothing).
  void explicit_part(std::span<const double> v, std::span<double> out) const {
    if (!diffusion_ || theta_ == 1.0) {
      std::copy(v.begin(), v.end(), out.begin());
      return;
    }
    const double s = (1.0 - theta_) * r_;
    for (int i = 0; i < M_; ++i) {
      const double left = i > 0 ? v[i - 1] : 0.0;
      const double right = i + 1 < M_ ? v[i + 1] : 0.0;
      out[i] = v[i] + s * (f_[i + 1] * (right - v[i]) - f_[i] * (v[i] - left));
    }
  }

  /// out = A^{-1} rhs; out may alias rhs.
  void solve(std::span<const double> rhs, std::span<double> out) const {
    if (!diffusion_) {
      if (out.data() != rhs.data()) std::copy(rhs.begin(), rhs.end(), out.begin());
      return;
    }
    const double s = theta_ * r_;
    double prev = 0.0;
    for (int i = 0; i < M_; ++i) {
      const double lower = i > 0 ? -s * f_[i] : 0.0;
      prev = (rhs[i] - lower * prev) / den_[i];
      out[i] = prev;
    }
    for (int i = M_ - 2; i >= 0; --i) out[i] -= cp_[i] * out[i + 1];
  }

 private:
  int M_ = 0;
  double theta_ = 1.0;
  double r_ = 0.0;
  bool diffusion_ = false;
  std::vector<double> f_, cp_, den_;
};

struct Scratch {
  NodeOp op;
  std::vector<double> a, b, c, d;
  void ensure(int M) {
    if (static_cast<int>(a.size()) != M) {
      a.assign(M, 0.0);
      b.assign(M, 0.0);
      c.assign(M, 0.0);
      d.assign(M, 0.0);
    }
  }
};

Scratch& scratch(int M) {
  thread_local Scratch s;
  s.ensure(M);
  return s;
}

template <class F>
void for_level(int depth, Exec exec, F&& f) {
  const std::ptrdiff_t b = static_cast<std::ptrdiff_t>(ScenarioTree::level_begin(depth));
  const std::ptrdiff_t e = static_cast<std::ptrdiff_t>(ScenarioTree::level_end(depth));
  if (exec == Exec::Parallel && e - b > 1) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = b; k < e; ++k) f(static_cast<std::size_t>(k));
  } else {
    for (std::ptrdiff_t k = b; k < e; ++k) f(static_cast<std::size_t>(k));
  }
}

std::span<const double> node_or_empty(const AdaptedField& f, std::size_t k) {
  if (f.empty()) return {};
  return f.node(k);
}

/// out += s * (drift * grad(v) + alpha * v)
void add_lower_order(const Coefficients& c, std::size_t k, std::span<const double> v, double h,
                     double s, std::span<double> grad_buf, std::span<double> out) {
  const int M = static_cast<int>(v.size());
  if (!c.drift.empty()) {
    gradient(v, h, grad_buf);
    auto dr = c.drift.node(k);
    for (int i = 0; i < M; ++i) out[i] += s * dr[i] * grad_buf[i];
  }
  if (!c.alpha.empty()) {
    auto al = c.alpha.node(k);
    for (int i = 0; i < M; ++i) out[i] += s * al[i] * v[i];
  }
}

/// out += s * L^T v = s * (-gradient(drift * v) + alpha * v)
void add_lower_order_transpose(const Coefficients& c, std::size_t k, std::span<const double> v,
                               double h, double s, std::span<double> buf, std::span<double> buf2,
                               std::span<double> out) {
  const int M = static_cast<int>(v.size());
  if (!c.drift.empty()) {
    auto dr = c.drift.node(k);
    for (int i = 0; i < M; ++i) buf[i] = dr[i] * v[i];
    gradient(buf, h, buf2);
    for (int i = 0; i < M; ++i) out[i] -= s * buf2[i];
  }
  if (!c.alpha.empty()) {
    auto al = c.alpha.node(k);
    for (int i = 0; i < M; ++i) out[i] += s * al[i] * v[i];
  }
}

void check_shape(const AdaptedField& f, const ScenarioTree& tree, int M, const char* name) {
  if (f.empty()) return;
  if (f.nodes() != tree.node_count() || f.width() != M) {
    std::ostringstream os;
    os << "spde: field '" << name << "' does not match the tree and mesh";
    throw ValidationError(os.str());
  }
}

double max_abs(const AdaptedField& f, std::size_t end_node) {
  double m = 0.0;
  if (f.empty()) return m;
  for (std::size_t j = 0; j < end_node * f.width(); ++j) m = std::max(m, std::abs(f.raw()[j]));
  return m;
}

void check_finite(const AdaptedField& f, const char* name) {
  for (double v : f.raw())
    if (!std::isfinite(v)) throw ValidationError(std::string("spde: non-finite entry in ") + name);
}

void check_control_support(const AdaptedField& u, const SpatialMesh& mesh) {
  if (u.empty()) return;
  const auto& mask = mesh.ctrl_mask();
  for (std::size_t k = 0; k < u.nodes(); ++k)
    for (int i = 0; i < u.width(); ++i)
      if (!mask[i] && u.at(k, i) != 0.0)
        throw ValidationError("spde: control does not vanish off the control region");
}

}  // namespace

double check_coefficients(const Coefficients& coef, const ScenarioTree& tree,
                          const SpatialMesh& mesh, const SchemeOptions& opt) {
  const int M = mesh.size();
  if (!(opt.theta >= 0.5 && opt.theta <= 1.0))
    throw ValidationError("spde: theta must be in [1/2, 1]");
  check_shape(coef.a, tree, M, "a");
  check_shape(coef.drift, tree, M, "drift");
  check_shape(coef.alpha, tree, M, "alpha");
  check_shape(coef.rho2, tree, M, "rho2");
  const std::size_t interior = tree.interior_count();
  double a_min = 0.0;
  if (!coef.a.empty()) {
    a_min = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < interior * M; ++j) a_min = std::min(a_min, coef.a.raw()[j]);
    if (!(a_min > 0.0) || !(a_min >= coef.c0)) {
      std::ostringstream os;
      os << "spde: ellipticity violated (min a = " << a_min << ", c0 = " << coef.c0 << ")";
      throw ValidationError(os.str());
    }
  }
  const double dt = tree.dt(), h = mesh.h();
  const double number = dt * max_abs(coef.alpha, interior) +
                        tree.sqrt_dt() * max_abs(coef.rho2, interior) +
                        dt * max_abs(coef.drift, interior) /
                            (h * (1.0 + 2.0 * opt.theta * dt * a_min / (h * h)));
  if (!(number <= opt.stability_limit)) {
    std::ostringstream os;
    os << "spde: explicit lower-order terms violate the stability guard (" << number << " > "
       << opt.stability_limit << ")";
    throw ValidationError(os.str());
  }
  return number;
}

AdaptedField solve_forward(const ForwardProblem& p, const ScenarioTree& tree,
                           const SpatialMesh& mesh, const SchemeOptions& opt) {
  const int M = mesh.size();
  check_coefficients(p.coef, tree, mesh, opt);
  check_shape(p.phi1, tree, M, "phi1");
  check_shape(p.b, tree, M, "b");
  check_shape(p.phi2, tree, M, "phi2");
  for (const auto* f : {&p.phi1, &p.b, &p.phi2}) check_finite(*f, "forward source");
  if (!p.z0.empty() && static_cast<int>(p.z0.size()) != M)
    throw ValidationError("spde: z0 has the wrong length");
  AdaptedField z(tree, M);
  if (!p.z0.empty()) std::copy(p.z0.begin(), p.z0.end(), z.node(0).begin());
  const double dt = tree.dt(), h = mesh.h(), sq = tree.sqrt_dt();
  for (int d = 0; d < tree.steps(); ++d) {
    for_level(d, opt.exec, [&](std::size_t k) {
      Scratch& s = scratch(M);
      s.op.setup(node_or_empty(p.coef.a, k), M, opt.theta, dt, h);
      auto zk = z.node(k);
      s.op.explicit_part(zk, s.a);
      add_lower_order(p.coef, k, zk, h, dt, s.b, s.a);
      if (!p.phi1.empty()) {
        auto f = p.phi1.node(k);
        for (int i = 0; i < M; ++i) s.a[i] += dt * f[i];
      }
      if (!p.b.empty()) {
        gradient(p.b.node(k), h, s.b);
        for (int i = 0; i < M; ++i) s.a[i] += dt * s.b[i];
      }
      auto up = z.node(ScenarioTree::up(k));
      auto dn = z.node(ScenarioTree::down(k));
      s.op.solve(s.a, up);
      if (!p.phi2.empty()) {
        auto f = p.phi2.node(k);
        for (int i = 0; i < M; ++i) s.c[i] = sq * f[i];
        s.op.solve(s.c, s.c);
        for (int i = 0; i < M; ++i) {
          dn[i] = up[i] - s.c[i];
          up[i] = up[i] + s.c[i];
        }
      } else {
        std::copy(up.begin(), up.end(), dn.begin());
      }
    });
  }
  return z;
}

ProbeStep forward_transition(const ForwardProblem& p, const ScenarioTree& tree,
                             const SpatialMesh& mesh, const SchemeOptions& opt) {
  return [&p, &tree, &mesh, opt](std::span<const double> zk, std::size_t child,
                                 std::span<double> out) {
    const int M = mesh.size();
    const std::size_t k = ScenarioTree::parent(child);
    const double dt = tree.dt(), h = mesh.h();
    NodeOp op;
    op.setup(node_or_empty(p.coef.a, k), M, opt.theta, dt, h);
    std::vector<double> rhs(M), buf(M);
    op.explicit_part(zk, rhs);
    add_lower_order(p.coef, k, zk, h, dt, buf, rhs);
    if (!p.phi1.empty())
      for (int i = 0; i < M; ++i) rhs[i] += dt * p.phi1.at(k, i);
    if (!p.b.empty()) {
      gradient(p.b.node(k), h, buf);
      for (int i = 0; i < M; ++i) rhs[i] += dt * buf[i];
    }
    if (!p.phi2.empty())
      for (int i = 0; i < M; ++i) rhs[i] += tree.increment(child) * p.phi2.at(k, i);
    op.solve(rhs, out);
  };
}

StatePair solve_backward(const BackwardProblem& p, const ScenarioTree& tree,
                         const SpatialMesh& mesh, const SchemeOptions& opt) {
  const int M = mesh.size();
  check_coefficients(p.coef, tree, mesh, opt);
  check_shape(p.yT, tree, M, "yT");
  check_shape(p.phi, tree, M, "phi");
  check_shape(p.b, tree, M, "b");
  check_shape(p.u, tree, M, "u");
  check_control_support(p.u, mesh);
  for (const auto* f : {&p.yT, &p.phi, &p.b, &p.u}) check_finite(*f, "backward data");
  StatePair out{AdaptedField(tree, M), AdaptedField(tree, M)};
  const int N = tree.steps();
  if (!p.yT.empty())
    for (std::size_t k = ScenarioTree::level_begin(N); k < ScenarioTree::level_end(N); ++k)
      std::copy(p.yT.node(k).begin(), p.yT.node(k).end(), out.y.node(k).begin());
  const double dt = tree.dt(), h = mesh.h(), sq = tree.sqrt_dt();
  for (int d = N - 1; d >= 0; --d) {
    for_level(d, opt.exec, [&](std::size_t k) {
      Scratch& s = scratch(M);
      s.op.setup(node_or_empty(p.coef.a, k), M, opt.theta, dt, h);
      auto up = out.y.node(ScenarioTree::up(k));
      auto dn = out.y.node(ScenarioTree::down(k));
      auto Yk = out.Y.node(k);
      for (int i = 0; i < M; ++i) s.d[i] = 0.5 * (up[i] + dn[i]);
      martingale_coefficient(up, dn, sq, Yk);
      s.op.explicit_part(s.d, s.a);
      add_lower_order(p.coef, k, s.d, h, -dt, s.b, s.a);
      if (!p.coef.rho2.empty()) {
        auto r = p.coef.rho2.node(k);
        for (int i = 0; i < M; ++i) s.a[i] -= dt * r[i] * Yk[i];
      }
      if (!p.phi.empty()) {
        auto f = p.phi.node(k);
        for (int i = 0; i < M; ++i) s.a[i] -= dt * f[i];
      }
      if (!p.b.empty()) {
        gradient(p.b.node(k), h, s.b);
        for (int i = 0; i < M; ++i) s.a[i] -= dt * s.b[i];
      }
      if (!p.u.empty()) {
        auto f = p.u.node(k);
        for (int i = 0; i < M; ++i) s.a[i] -= dt * f[i];
      }
      s.op.solve(s.a, out.y.node(k));
    });
  }
  return out;
}

StatePair backward_control_to_state(const Coefficients& coef, const AdaptedField& u,
                                    const ScenarioTree& tree, const SpatialMesh& mesh,
                                    const SchemeOptions& opt) {
  BackwardProblem p;
  p.coef = coef;
  p.u = u;
  return solve_backward(p, tree, mesh, opt);
}

AdaptedField backward_adjoint_sweep(const Coefficients& coef, const AdaptedField& g,
                                    const ScenarioTree& tree, const SpatialMesh& mesh,
                                    const SchemeOptions& opt) {
  const int M = mesh.size();
  check_shape(g, tree, M, "cotangent");
  const double dt = tree.dt(), h = mesh.h(), sq = tree.sqrt_dt();
  const auto& mask = mesh.ctrl_mask();
  AdaptedField mu(tree, M);
  AdaptedField c(tree, M);
  std::copy(g.node(0).begin(), g.node(0).end(), mu.node(0).begin());
  const int N = tree.steps();
  for (int d = 0; d < N; ++d) {
    for_level(d, opt.exec, [&](std::size_t k) {
      Scratch& s = scratch(M);
      s.op.setup(node_or_empty(coef.a, k), M, opt.theta, dt, h);
      // q = A^{-1} mu_k
      s.op.solve(mu.node(k), s.d);
      auto ck = c.node(k);
      for (int i = 0; i < M; ++i) ck[i] = mask[i] ? -dt * s.d[i] : 0.0;
      // cotangent of the conditional mean: E q - dt L^T q
      s.op.explicit_part(s.d, s.a);
      add_lower_order_transpose(coef, k, s.d, h, -dt, s.b, s.c, s.a);
      const std::size_t cu = ScenarioTree::up(k), cd = ScenarioTree::down(k);
      auto mu_up = mu.node(cu);
      auto mu_dn = mu.node(cd);
      const bool leaf_children = d + 1 == N;
      for (int i = 0; i < M; ++i) {
        const double noise = coef.rho2.empty() ? 0.0 : -sq * coef.rho2.at(k, i) * s.d[i];
        const double gu = leaf_children ? 0.0 : g.at(cu, i);
        const double gd = leaf_children ? 0.0 : g.at(cd, i);
        mu_up[i] = gu + s.a[i] + noise;
        mu_dn[i] = gd + s.a[i] - noise;
      }
    });
  }
  return c;
}

AdaptedField apply_adjoint(const Coefficients& coef, const AdaptedField& w,
                           const ScenarioTree& tree, const SpatialMesh& mesh,
                           const SchemeOptions& opt) {
  return backward_adjoint_sweep(coef, w, tree, mesh, opt);
}

AdaptedField forward_control_to_state(const Coefficients& coef, const AdaptedField& u,
                                      const AdaptedField& U, const ScenarioTree& tree,
                                      const SpatialMesh& mesh, const SchemeOptions& opt) {
  check_control_support(u, mesh);
  ForwardProblem p;
  p.coef = coef;
  p.phi1 = u;
  p.phi2 = U;
  return solve_forward(p, tree, mesh, opt);
}

ForwardCotangent forward_adjoint_sweep(const Coefficients& coef, const AdaptedField& g,
                                       const ScenarioTree& tree, const SpatialMesh& mesh,
                                       const SchemeOptions& opt) {
  const int M = mesh.size();
  check_shape(g, tree, M, "cotangent");
  const double dt = tree.dt(), h = mesh.h(), sq = tree.sqrt_dt();
  const auto& mask = mesh.ctrl_mask();
  const int N = tree.steps();
  AdaptedField mu = g;
  ForwardCotangent out{AdaptedField(tree, M), AdaptedField(tree, M)};
  for (int d = N - 1; d >= 0; --d) {
    for_level(d, opt.exec, [&](std::size_t k) {
      Scratch& s = scratch(M);
      s.op.setup(node_or_empty(coef.a, k), M, opt.theta, dt, h);
      auto up = mu.node(ScenarioTree::up(k));
      auto dn = mu.node(ScenarioTree::down(k));
      for (int i = 0; i < M; ++i) s.d[i] = 0.5 * (up[i] + dn[i]);
      martingale_coefficient(up, dn, sq, s.c);
      s.op.solve(s.d, s.d);  // r = A^{-1} mean
      s.op.solve(s.c, s.c);  // A^{-1} martingale part
      auto cu = out.u.node(k);
      auto cU = out.U.node(k);
      for (int i = 0; i < M; ++i) {
        cu[i] = mask[i] ? dt * s.d[i] : 0.0;
        cU[i] = dt * s.c[i];
      }
      // mu_k = g_k + E r + dt L^T r
      s.op.explicit_part(s.d, s.a);
      add_lower_order_transpose(coef, k, s.d, h, dt, s.b, s.c, s.a);
      auto mk = mu.node(k);
      for (int i = 0; i < M; ++i) mk[i] += s.a[i];
    });
  }
  return out;
}

AdaptedField gradient_field(const AdaptedField& f, const SpatialMesh& mesh) {
  AdaptedField g(f.nodes(), f.width());
  for (std::size_t k = 0; k < f.nodes(); ++k) gradient(f.node(k), mesh.h(), g.node(k));
  return g;
}

}  // namespace nullctl
