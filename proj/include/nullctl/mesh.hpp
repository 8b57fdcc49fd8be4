#pragma once

/// Uniform 1-D grid with homogeneous Dirichlet boundary, difference
/// operators and the h-weighted quadrature used everywhere else.

#include <cstdint>
#include <span>
#include <vector>

namespace nullctl {

/// Values at the M interior points; boundary values are implicitly zero.
using SpatialField = std::vector<double>;

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

class SpatialMesh {
 public:
  /// Masks flag grid points x with lo <= x < hi (half-open, tolerant to
  /// rounding of x). Throws ValidationError on bad nesting or empty masks.
  SpatialMesh(double a_end, double b_end, int M, Interval ctrl, Interval inner);

  double a_end() const { return a_; }
  double b_end() const { return b_; }
  int size() const { return M_; }
  double h() const { return h_; }
  double x(int i) const { return a_ + (i + 1) * h_; }
  const Interval& ctrl_interval() const { return ctrl_; }
  const Interval& inner_interval() const { return inner_; }
  const std::vector<std::uint8_t>& ctrl_mask() const { return ctrl_mask_; }
  const std::vector<std::uint8_t>& inner_mask() const { return inner_mask_; }
  int ctrl_count() const;
  int inner_count() const;

 private:
  double a_;
  double b_;
  int M_;
  double h_;
  Interval ctrl_;
  Interval inner_;
  std::vector<std::uint8_t> ctrl_mask_;
  std::vector<std::uint8_t> inner_mask_;
};

SpatialMesh build_mesh(double a_end, double b_end, int M, Interval ctrl, Interval inner);

/// Central difference of the zero-extended field. The operator is
/// antisymmetric in the mesh inner product, so it doubles as the discrete
/// divergence of a point-valued vector field (div = -gradient^T).
void gradient(std::span<const double> u, double h, std::span<double> out);
SpatialField gradient(const SpatialField& u, const SpatialMesh& mesh);

/// (a u')' with face coefficient (a_i + a_{i+1})/2; the two boundary faces
/// use the adjacent interior value.
void div_a_grad(std::span<const double> a, std::span<const double> u, double h,
                std::span<double> out);
SpatialField div_a_grad(const SpatialField& a, const SpatialField& u,
                        const SpatialMesh& mesh, double c0);

/// Symmetric tridiagonal coefficients of -(a u')' scaled by h^2:
/// row i reads off[i-1] u_{i-1} + diag[i] u_i + off[i] u_{i+1}.
void stiffness(std::span<const double> a, std::span<double> diag, std::span<double> off);

double l2_inner(const SpatialField& u, const SpatialField& v, const SpatialMesh& mesh);
double l2_norm_sq(std::span<const double> u, double h);
/// h * sum over the M+1 faces of ((u_{i+1}-u_i)/h)^2.
double h1_seminorm_sq(const SpatialField& u, const SpatialMesh& mesh);
double h1_seminorm(const SpatialField& u, const SpatialMesh& mesh);

}  // namespace nullctl
