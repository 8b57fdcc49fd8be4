#include <cmath>

#include "nullctl/spde.hpp"

namespace nullctl::reference {

namespace {

struct Ctx {
  const ScenarioTree& tree;
  const SpatialMesh& mesh;
  double theta;
};

double coef(const AdaptedField& f, std::size_t k, int i) { return f.empty() ? 0.0 : f.at(k, i); }

std::vector<double> faces(const AdaptedField& a, std::size_t k, int M) {
  std::vector<double> f(M + 1, 0.0);
  if (a.empty()) return f;
  for (int j = 0; j <= M; ++j) {
    if (j == 0) f[j] = a.at(k, 0);
    else if (j == M) f[j] = a.at(k, M - 1);
    else f[j] = 0.5 * (a.at(k, j - 1) + a.at(k, j));
  }
  return f;
}

/// D v with the given faces, scaled by dt.
std::vector<double> diffuse(const std::vector<double>& f, const std::vector<double>& v, double r) {
  const int M = static_cast<int>(v.size());
  std::vector<double> out(M);
  for (int i = 0; i < M; ++i) {
    const double l = i ? v[i - 1] : 0.0, rr = i + 1 < M ? v[i + 1] : 0.0;
    out[i] = r * (f[i + 1] * (rr - v[i]) - f[i] * (v[i] - l));
  }
  return out;
}

/// Solves (I - s D') x = b by Gaussian elimination without pivoting.
std::vector<double> implicit(const std::vector<double>& f, std::vector<double> b, double s) {
  const int M = static_cast<int>(b.size());
  std::vector<double> diag(M), lo(M), hi(M);
  for (int i = 0; i < M; ++i) {
    diag[i] = 1.0 + s * (f[i] + f[i + 1]);
    lo[i] = -s * f[i];
    hi[i] = -s * f[i + 1];
  }
  for (int i = 1; i < M; ++i) {
    const double w = lo[i] / diag[i - 1];
    diag[i] -= w * hi[i - 1];
    b[i] -= w * b[i - 1];
  }
  std::vector<double> x(M);
  for (int i = M - 1; i >= 0; --i) x[i] = (b[i] - (i + 1 < M ? hi[i] * x[i + 1] : 0.0)) / diag[i];
  return x;
}

std::vector<double> grad(const std::vector<double>& v, double h) {
  const int M = static_cast<int>(v.size());
  std::vector<double> g(M);
  for (int i = 0; i < M; ++i) g[i] = ((i + 1 < M ? v[i + 1] : 0.0) - (i ? v[i - 1] : 0.0)) / (2 * h);
  return g;
}

std::vector<double> node_vec(const AdaptedField& f, std::size_t k, int M) {
  if (f.empty()) return std::vector<double>(M, 0.0);
  return {f.node(k).begin(), f.node(k).end()};
}

void forward_rec(const Ctx& c, const ForwardProblem& p, std::size_t k, AdaptedField& z) {
  if (ScenarioTree::depth(k) == c.tree.steps()) return;
  const int M = c.mesh.size();
  const double dt = c.tree.dt(), h = c.mesh.h(), r = dt / (h * h);
  const auto f = faces(p.coef.a, k, M);
  const auto zk = node_vec(z, k, M);
  const auto dz = diffuse(f, zk, (1 - c.theta) * r);
  const auto gz = grad(zk, h);
  const auto gb = grad(node_vec(p.b, k, M), h);
  for (std::size_t ch : {ScenarioTree::up(k), ScenarioTree::down(k)}) {
    std::vector<double> rhs(M);
    for (int i = 0; i < M; ++i)
      rhs[i] = zk[i] + dz[i] +
               dt * (coef(p.coef.drift, k, i) * gz[i] + coef(p.coef.alpha, k, i) * zk[i] +
                     coef(p.phi1, k, i) + gb[i]) +
               coef(p.phi2, k, i) * c.tree.increment(ch);
    const auto zc = implicit(f, rhs, c.theta * r);
    std::copy(zc.begin(), zc.end(), z.node(ch).begin());
    forward_rec(c, p, ch, z);
  }
}

void backward_rec(const Ctx& c, const BackwardProblem& p, std::size_t k, StatePair& s) {
  const int M = c.mesh.size();
  if (ScenarioTree::depth(k) == c.tree.steps()) {
    const auto v = node_vec(p.yT, k, M);
    std::copy(v.begin(), v.end(), s.y.node(k).begin());
    return;
  }
  const std::size_t cu = ScenarioTree::up(k), cd = ScenarioTree::down(k);
  backward_rec(c, p, cu, s);
  backward_rec(c, p, cd, s);
  const double dt = c.tree.dt(), h = c.mesh.h(), r = dt / (h * h);
  std::vector<double> mean(M), Z(M);
  for (int i = 0; i < M; ++i) {
    mean[i] = 0.5 * (s.y.at(cu, i) + s.y.at(cd, i));
    Z[i] = (s.y.at(cu, i) - s.y.at(cd, i)) / (2 * c.tree.sqrt_dt());
    s.Y.at(k, i) = Z[i];
  }
  const auto f = faces(p.coef.a, k, M);
  const auto dm = diffuse(f, mean, (1 - c.theta) * r);
  const auto gm = grad(mean, h);
  const auto gb = grad(node_vec(p.b, k, M), h);
  std::vector<double> rhs(M);
  for (int i = 0; i < M; ++i)
    rhs[i] = mean[i] + dm[i] -
             dt * (coef(p.coef.drift, k, i) * gm[i] + coef(p.coef.alpha, k, i) * mean[i] +
                   coef(p.coef.rho2, k, i) * Z[i] + coef(p.phi, k, i) + gb[i] + coef(p.u, k, i));
  const auto yk = implicit(f, rhs, c.theta * r);
  std::copy(yk.begin(), yk.end(), s.y.node(k).begin());
}

}  // namespace

AdaptedField solve_forward(const ForwardProblem& p, const ScenarioTree& tree,
                           const SpatialMesh& mesh, double theta) {
  AdaptedField z(tree, mesh.size());
  if (!p.z0.empty()) std::copy(p.z0.begin(), p.z0.end(), z.node(0).begin());
  forward_rec({tree, mesh, theta}, p, 0, z);
  return z;
}

StatePair solve_backward(const BackwardProblem& p, const ScenarioTree& tree,
                         const SpatialMesh& mesh, double theta) {
  StatePair s{AdaptedField(tree, mesh.size()), AdaptedField(tree, mesh.size())};
  backward_rec({tree, mesh, theta}, p, 0, s);
  return s;
}

}  // namespace nullctl::reference
