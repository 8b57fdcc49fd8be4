#include "nullctl/mesh.hpp"

#include <cmath>
#include <sstream>

#include "nullctl/errors.hpp"

namespace nullctl {

namespace {

std::vector<std::uint8_t> interval_mask(double a, double h, int M, Interval iv) {
  const double tol = 1e-9 * h;
  std::vector<std::uint8_t> mask(M, 0);
  for (int i = 0; i < M; ++i) {
    const double x = a + (i + 1) * h;
    mask[i] = (x > iv.lo - tol && x < iv.hi - tol) ? 1 : 0;
  }
  return mask;
}

std::string fmt_interval(Interval iv) {
  std::ostringstream os;
  os << "(" << iv.lo << ", " << iv.hi << ")";
  return os.str();
}

}  // namespace

SpatialMesh::SpatialMesh(double a_end, double b_end, int M, Interval ctrl, Interval inner)
    : a_(a_end), b_(b_end), M_(M), ctrl_(ctrl), inner_(inner) {
  if (!(a_end < b_end)) throw ValidationError("mesh: a_end must be smaller than b_end");
  if (M < 5) throw ValidationError("mesh: M must be at least 5");
  if (!(ctrl.lo < ctrl.hi) || !(inner.lo < inner.hi))
    throw ValidationError("mesh: intervals must satisfy lo < hi");
  if (!(a_end < ctrl.lo && ctrl.hi < b_end))
    throw ValidationError("mesh: control interval " + fmt_interval(ctrl) +
                          " must lie strictly inside the domain");
  if (!(ctrl.lo < inner.lo && inner.hi < ctrl.hi))
    throw ValidationError("mesh: nesting violated, inner interval " + fmt_interval(inner) +
                          " must lie strictly inside control interval " + fmt_interval(ctrl));
  h_ = (b_end - a_end) / (M + 1);
  ctrl_mask_ = interval_mask(a_, h_, M_, ctrl_);
  inner_mask_ = interval_mask(a_, h_, M_, inner_);
  if (ctrl_count() < 3)
    throw ValidationError("mesh: control interval covers fewer than 3 grid points");
  if (inner_count() < 1) throw ValidationError("mesh: inner interval covers no grid point");
  for (int i = 0; i < M_; ++i)
    if (inner_mask_[i] && !ctrl_mask_[i])
      throw ValidationError("mesh: nesting violated on the grid");
}

int SpatialMesh::ctrl_count() const {
  int n = 0;
  for (auto v : ctrl_mask_) n += v;
  return n;
}

int SpatialMesh::inner_count() const {
  int n = 0;
  for (auto v : inner_mask_) n += v;
  return n;
}

SpatialMesh build_mesh(double a_end, double b_end, int M, Interval ctrl, Interval inner) {
  return SpatialMesh(a_end, b_end, M, ctrl, inner);
}

void gradient(std::span<const double> u, double h, std::span<double> out) {
  const std::size_t M = u.size();
  const double s = 0.5 / h;
  for (std::size_t i = 0; i < M; ++i) {
    const double left = i > 0 ? u[i - 1] : 0.0;
    const double right = i + 1 < M ? u[i + 1] : 0.0;
    out[i] = s * (right - left);
  }
}

SpatialField gradient(const SpatialField& u, const SpatialMesh& mesh) {
  if (static_cast<int>(u.size()) != mesh.size()) throw ValidationError("gradient: shape mismatch");
  SpatialField out(u.size());
  gradient(u, mesh.h(), out);
  return out;
}

void stiffness(std::span<const double> a, std::span<double> diag, std::span<double> off) {
  const std::size_t M = a.size();
  // face k sits between points k-1 and k, k = 0..M
  auto face = [&](std::size_t k) {
    if (k == 0) return a[0];
    if (k == M) return a[M - 1];
    return 0.5 * (a[k - 1] + a[k]);
  };
  for (std::size_t i = 0; i < M; ++i) {
    diag[i] = face(i) + face(i + 1);
    if (i + 1 < M) off[i] = -face(i + 1);
  }
}

void div_a_grad(std::span<const double> a, std::span<const double> u, double h,
                std::span<double> out) {
  const std::size_t M = u.size();
  const double s = 1.0 / (h * h);
  double flux_left = a[0] * (u[0] - 0.0);
  for (std::size_t i = 0; i < M; ++i) {
    double flux_right;
    if (i + 1 < M)
      flux_right = 0.5 * (a[i] + a[i + 1]) * (u[i + 1] - u[i]);
    else
      flux_right = a[M - 1] * (0.0 - u[i]);
    out[i] = s * (flux_right - flux_left);
    flux_left = flux_right;
  }
}

SpatialField div_a_grad(const SpatialField& a, const SpatialField& u, const SpatialMesh& mesh,
                        double c0) {
  if (static_cast<int>(u.size()) != mesh.size() || a.size() != u.size())
    throw ValidationError("div_a_grad: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i] >= c0)) {
      std::ostringstream os;
      os << "div_a_grad: ellipticity violated at grid index " << i << " (a=" << a[i]
         << " < c0=" << c0 << ")";
      throw ValidationError(os.str());
    }
  SpatialField out(u.size());
  div_a_grad(a, u, mesh.h(), out);
  return out;
}

double l2_norm_sq(std::span<const double> u, double h) {
  double s = 0.0;
  for (double v : u) s += v * v;
  return h * s;
}

double l2_inner(const SpatialField& u, const SpatialField& v, const SpatialMesh& mesh) {
  if (u.size() != v.size() || static_cast<int>(u.size()) != mesh.size())
    throw ValidationError("l2_inner: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return mesh.h() * s;
}

double h1_seminorm_sq(const SpatialField& u, const SpatialMesh& mesh) {
  const std::size_t M = u.size();
  double s = 0.0;
  for (std::size_t k = 0; k <= M; ++k) {
    const double left = k > 0 ? u[k - 1] : 0.0;
    const double right = k < M ? u[k] : 0.0;
    s += (right - left) * (right - left);
  }
  return s / mesh.h();
}

double h1_seminorm(const SpatialField& u, const SpatialMesh& mesh) {
  return std::sqrt(h1_seminorm_sq(u, mesh));
}

}  // namespace nullctl
