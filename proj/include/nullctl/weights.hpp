#pragma once

/// Carleman-type weight system: spatial bump beta, temporal profiles gamma,
/// and log-domain evaluation of lambda^a mu^b xi^c theta^d.

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nullctl/mesh.hpp"
#include "nullctl/scenario.hpp"

namespace nullctl {

/// Polynomial bump beta = 4 G (1 - G) where G is a composition of monotone
/// quadratic warps of s = (x-a)/(b-a) chosen so G = 1/2 at the centre of the
/// inner interval. beta vanishes at both ends, peaks at 1 there, and has no
/// other critical point.
class WeightBase {
 public:
  explicit WeightBase(const SpatialMesh& mesh);

  double beta(double x) const;
  double beta_prime(double x) const;
  double a0() const { return a0_; }
  double center() const { return center_; }
  const std::vector<double>& beta_grid() const { return beta_grid_; }
  std::size_t warp_count() const { return warps_.size(); }

 private:
  void warp(double s, double& g, double& dg) const;

  double a_;
  double L_;
  double center_;
  std::vector<double> warps_;
  std::vector<double> beta_grid_;
  double a0_ = 0.0;
};

enum class GammaVariant { Backward, BackwardRegularized, Forward, ForwardRegularized };

std::string to_string(GammaVariant v);
GammaVariant parse_gamma_variant(const std::string& s);
bool is_regularized(GammaVariant v);
bool is_forward(GammaVariant v);
/// The unregularized profile paired with a variant.
GammaVariant unregularized(GammaVariant v);

struct GammaValue {
  double value;
  double d1;
  double d2;
};

/// Thrown when gamma is requested at the endpoint where it blows up.
class SingularityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class BridgeKind { Quintic, Smoothstep };

/// One time profile. Junction bridges are quintic Hermite interpolants when
/// those are monotone (and keep the regularized profile below the plain one);
/// otherwise smoothstep blends of the neighbouring closed forms.
class Gamma {
 public:
  /// `force_main` pins the kind of the shared [T/4, T/2] bridge.
  Gamma(GammaVariant variant, double T, double m, double sigma, double eps = 0.0,
        std::optional<BridgeKind> force_main = std::nullopt);

  GammaVariant variant() const { return variant_; }
  GammaValue eval(double t) const;
  double value(double t) const { return eval(t).value; }
  /// The unregularized partner profile built from the same bridges.
  GammaValue eval_plain(double t) const;
  bool singular_at(double t) const;
  bool plain_singular_at(double t) const;
  std::vector<double> junctions() const;
  BridgeKind main_bridge_kind() const { return main_.kind; }
  BridgeKind reg_bridge_kind() const { return fwd_reg_.kind; }
  double horizon() const { return T_; }

 private:
  struct Bridge {
    double t0 = 0.0, t1 = 0.0;
    BridgeKind kind = BridgeKind::Quintic;
    double c[6] = {0, 0, 0, 0, 0, 0};
    bool increasing = false;
  };

  GammaValue backward(double t) const;
  GammaValue forward(double t) const;
  GammaValue backward_reg(double t) const;
  GammaValue forward_reg(double t) const;
  GammaValue head_power(double t) const;     // t^{-m}
  GammaValue fwd_reg_power(double t) const;  // (T - t + eps)^{-m}
  GammaValue tail(double t) const;           // 1 + (4t/T - 3)^sigma
  GammaValue eval_bridge(const Bridge& b, double t) const;
  Bridge make_bridge(double t0, double t1, GammaValue left, GammaValue right, BridgeKind kind,
                     bool increasing) const;
  bool bridge_monotone(const Bridge& b) const;
  bool regularized_below_plain() const;

  GammaVariant variant_;
  double T_, m_, sigma_, eps_;
  Bridge main_;     // [T/4, T/2], decreasing, shared by all variants
  Bridge fwd_reg_;  // [T/2 + eps, 3T/4], increasing
};

struct WeightParams {
  double lambda = 1.0;
  double mu = 1.0;
  double m = 1.0;
  double T = 0.5;
  GammaVariant variant = GammaVariant::BackwardRegularized;
  double eps = 0.01;
  double kappa = 30.0;
  double lambda_min = 1.0;
  double mu_min = 1.0;

  double sigma() const;
  /// Throws ValidationError; returns warnings for the conditioning-study range.
  std::vector<std::string> validate() const;
};

/// log(lambda^a mu^b xi^c theta^d) + log_const. The flags pick the
/// regularized xi or theta of a regularized system.
struct PowerSpec {
  double a = 0, b = 0, c = 0, d = 0;
  double log_const = 0;
  bool xi_reg = false;
  bool theta_reg = false;
};

enum class TimeSupport { Running, Initial, Terminal };
enum class Region { Whole, Control };

class WeightSystem {
 public:
  WeightSystem(const WeightParams& params, const SpatialMesh& mesh, const ScenarioTree& tree);

  const WeightParams& params() const { return p_; }
  const WeightBase& base() const { return base_; }
  const Gamma& gamma() const { return plain_; }
  const Gamma& gamma_reg() const;
  int steps() const { return N_; }
  int width() const { return M_; }
  double dt() const { return dt_; }
  double x(int i) const { return x_[i]; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Time grid nodes t_n = n dt (n = 0..N) and cell midpoints (n+1/2) dt.
  double node_time(int n) const { return n * dt_; }
  double cell_time(int n) const { return (n + 0.5) * dt_; }

  /// log xi and ell = lambda phi at (t, x) for arbitrary t (plain or
  /// regularized profile). ell = -inf / log xi = +inf at a singular endpoint.
  double log_xi(double t, double x, bool reg = false) const;
  double ell(double t, double x, bool reg = false) const;
  double log_weight(double t, double x, const PowerSpec& spec) const;

  /// Cached versions: on node times (n = 0..N) or cell midpoints (n < N).
  double log_xi_node(int n, int i, bool reg = false) const;
  double ell_node(int n, int i, bool reg = false) const;
  double log_xi_cell(int n, int i, bool reg = false) const;
  double ell_cell(int n, int i, bool reg = false) const;
  double log_weight_node(int n, int i, const PowerSpec& spec) const;
  double log_weight_cell(int n, int i, const PowerSpec& spec) const;
  /// Full table over cells (row-major N x M).
  std::vector<double> cell_table(const PowerSpec& spec) const;

  /// Positive phi scale: phi = -gamma * phi_scale(i).
  double phi_scale(int i) const { return K_[i]; }

 private:
  double combine(double log_gamma_xi, double gamma_theta, bool singular_xi, bool singular_theta,
                 int i, const PowerSpec& spec) const;

  WeightParams p_;
  WeightBase base_;
  Gamma plain_;
  Gamma reg_;
  int N_, M_;
  double dt_;
  std::vector<double> x_;
  std::vector<double> mubeta_;  // mu (beta + 6m)
  std::vector<double> K_;       // mu e^{6mu(m+1)} - e^{mu(beta+6m)} > 0
  std::vector<double> gnode_, gnode_reg_, gcell_, gcell_reg_;
  std::vector<std::string> warnings_;
};

/// log(E integral of w * field^2) by streaming log-sum-exp in a fixed order.
/// Running: sum over depths n < N with weights at the cell midpoint and dt;
/// Initial: the root slab at t = 0; Terminal: the leaf slab at t = T.
/// Returns -inf for a zero field.
double weighted_expectation_norm(const AdaptedField& field, const PowerSpec& spec,
                                 const WeightSystem& system, const ScenarioTree& tree,
                                 const SpatialMesh& mesh, TimeSupport support = TimeSupport::Running,
                                 Region region = Region::Whole);

/// One named term of a weighted inequality, in log domain.
struct LogTerm {
  std::string name;
  double log_value;
};

/// log(exp(a) + exp(b)) with -inf handling.
double log_add(double a, double b);
double log_sum(const std::vector<double>& terms);

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kPosInf = std::numeric_limits<double>::infinity();

/// One-sided finite-difference estimates of (value, d1, d2) at a junction,
/// second-order accurate in `step`.
struct JunctionCheck {
  double t;
  double jump[3];      // |left - right| at the requested step
  double jump_half[3]; // same at step / 2
  bool pass;
};
std::vector<JunctionCheck> check_junctions(const Gamma& g, double step);

/// CSV with columns t,x,log_xi,ell over node times (singular rows skipped).
void write_weights_csv(const WeightSystem& system, const std::string& path);

}  // namespace nullctl
