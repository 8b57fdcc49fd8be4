#pragma once

/// Penalized HUM null-control synthesis by preconditioned conjugate gradient
/// on the discrete quadratic functional, with adjoint gradients.
///
/// Backward direction (control of the backward equation toward y(0) = 0):
///   J(u) = 1/2 <u, Wu u> + 1/2 <y, Wy y> + 1/2 <grad y, Wg grad y> + 1/(2 eps) E|y(0)|^2
/// Forward direction (stacked control (u, U) of the forward equation toward z(T) = 0):
///   J(u, U) = 1/2 <u, Wu u> + 1/2 <U, WU U> + 1/2 <z, Wy z> + 1/2 <grad z, Wg grad z>
///             + 1/(2 eps) E|z(T)|^2
/// Brackets are E sum_n dt h sum_i over depths n < N, weights taken at cell
/// midpoints:
///   Wu = lambda^-3 mu^-4 xi^-3 theta^-2,  WU = lambda^-2 mu^-2 xi^-3 theta^-2,
///   Wy = theta_eps^-2,                    Wg = lambda^-2 mu^-2 xi^-3 theta_eps^-2.
/// Inside the functional all log weights are shifted by a common offset
/// (the largest log Wy over the cells) and clamped to [-kappa, kappa].

#include <cstdint>
#include <string>
#include <vector>

#include "nullctl/mesh.hpp"
#include "nullctl/scenario.hpp"
#include "nullctl/spde.hpp"
#include "nullctl/weights.hpp"

namespace nullctl {

enum class Direction { Backward, Forward };

std::string to_string(Direction d);
Direction parse_direction(const std::string& s);

struct HumConfig {
  double eps = 1e-2;
  /// Stop when the preconditioned gradient is below cg_tol times the
  /// clamped control norm of the iterate.
  double cg_tol = 1e-10;
  int cg_max_iters = 2000;
  double kappa = 30.0;
  /// Common factor on all clamped weights. Scaling it by c and eps by 1/c
  /// leaves the minimizer unchanged.
  double weight_scale = 1.0;
  Direction direction = Direction::Backward;
  /// Include the weighted gradient penalty on the state (off gives the
  /// functional without it).
  bool gradient_penalty = true;
  /// Adjoint dot-product gate run before every solve.
  double gate_tol = 1e-9;
  int gate_pairs = 2;
  std::uint64_t gate_seed = 0x5eed;
  /// Fully implicit diffusion: the 0.6 step leaves grid-scale modes at
  /// amplification -2/3 and the penalized residual stalls on them.
  SchemeOptions scheme{1.0};

  void validate() const;
};

/// Data of a control problem; the direction decides which endpoint is used.
struct ControlProblem {
  Coefficients coef;
  AdaptedField terminal;  // backward direction: y_T at the leaves
  SpatialField initial;   // forward direction: z_0
  AdaptedField phi;
  AdaptedField b;
};

/// Drift control u (control region) and, for the forward direction, the
/// diffusion control U. Both live on depths < N.
struct Control {
  AdaptedField u;
  AdaptedField U;
};

/// Clamped linear-domain weights per cell (row-major N x M).
struct OptimizerWeights {
  int N = 0, M = 0;
  double log_shift = 0.0;
  std::vector<double> u, U, y, g;
  double cell(const std::vector<double>& w, int n, int i) const {
    return w[static_cast<std::size_t>(n) * M + i];
  }
};

/// Power specs of the functional's weights (see the header comment).
PowerSpec control_weight_spec();
PowerSpec diffusion_control_weight_spec();
PowerSpec state_weight_spec();
PowerSpec gradient_weight_spec();

OptimizerWeights optimizer_weights(const HumConfig& config, const WeightSystem& system);

class HumFunctional {
 public:
  /// Throws ValidationError when the weight variant does not match the
  /// direction or is not regularized.
  HumFunctional(const HumConfig& config, const ControlProblem& problem, const WeightSystem& system,
                const ScenarioTree& tree, const SpatialMesh& mesh);

  const OptimizerWeights& weights() const { return w_; }
  const HumConfig& config() const { return cfg_; }
  Control zero() const;
  /// Random control supported where controls live.
  Control random(std::uint64_t seed) const;

  /// Controlled state; for the forward direction Y is empty.
  StatePair state(const Control& c) const;
  double value(const Control& c) const;
  double value_from_state(const Control& c, const AdaptedField& y) const;
  /// Gradient in the inner product `inner`.
  Control gradient(const Control& c) const;
  Control gradient_from_state(const Control& c, const AdaptedField& y) const;
  /// Linear part: Hessian applied to a direction.
  Control hessian(const Control& d) const;
  double inner(const Control& a, const Control& b) const;
  /// E|y(0)|^2 (backward) or E|z(T)|^2 (forward) of a state.
  double endpoint_residual(const AdaptedField& y) const;
  /// Largest relative dot-product discrepancy over the gate pairs.
  double adjoint_gate() const;

  const ScenarioTree& tree() const { return tree_; }
  const SpatialMesh& mesh() const { return mesh_; }

 private:
  AdaptedField linear_state(const Control& c) const;
  /// Gradient of the state terms with respect to the state, as the sweep
  /// expects it.
  AdaptedField state_cotangent(const AdaptedField& y) const;
  Control pull_back(const AdaptedField& cot) const;
  void add_control_terms(const Control& c, Control& out) const;

  HumConfig cfg_;
  const ControlProblem& prob_;
  const WeightSystem& sys_;
  const ScenarioTree& tree_;
  const SpatialMesh& mesh_;
  OptimizerWeights w_;
};

struct CgStep {
  int iteration;
  double rel_residual;
  double J;
};

struct ControlResult {
  Control control;
  StatePair state;
  double residual = 0.0;  // E|y(0)|^2 or E|z(T)|^2
  double J = 0.0;
  double J0 = 0.0;
  int cg_iters = 0;
  bool converged = false;
  std::vector<CgStep> trace;
  double gate = 0.0;
  /// Relative gap between the control and the weight-scaled dual state,
  /// in the clamped control norm.
  double dual_residual = 0.0;
  /// log of the clamped weighted control norm <u, Wu u> (+ <U, WU U>).
  double log_control_norm = kNegInf;
  /// Same with unclamped, unshifted weights.
  double log_control_norm_unclamped = kNegInf;
};

/// Jacobi-preconditioned CG. Throws NumericalError if the adjoint gate fails;
/// non-convergence is flagged in the result, not thrown.
ControlResult solve_null_control(const HumConfig& config, const ControlProblem& problem,
                                 const WeightSystem& system, const ScenarioTree& tree,
                                 const SpatialMesh& mesh);
/// Same, reusing an assembled functional.
ControlResult solve_null_control(const HumFunctional& functional);

struct SweepRow {
  double eps;
  double residual;
  double J;
  int cg_iters;
  bool converged;
  double log_control_norm;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  /// Least-squares slope of log residual against log eps; NaN when a
  /// residual is zero.
  double slope;
  bool slope_defined;
  /// max / min of the clamped weighted control norm (square root of the
  /// quadratic form) across the sweep.
  double control_ratio;
};

SweepResult epsilon_sweep(const HumConfig& config_template, const ControlProblem& problem,
                          const WeightSystem& system, const ScenarioTree& tree,
                          const SpatialMesh& mesh, const std::vector<double>& eps_list);

struct EnergyLedger {
  std::vector<LogTerm> lhs;
  std::vector<LogTerm> rhs;
  double log_lhs = kNegInf;
  double log_rhs = kNegInf;
  /// log_lhs - log_rhs with the martingale term weighted by xi^-3, and the
  /// same with xi^-2.
  double log_gap = 0.0;
  double log_gap_xi2 = 0.0;
  bool degenerate = false;
};

/// Both sides of the weighted energy estimate for the computed control,
/// with unclamped weights of the unregularized profile.
EnergyLedger verify_energy_estimate(const ControlResult& result, const ControlProblem& problem,
                                    const HumConfig& config, const WeightSystem& system,
                                    const ScenarioTree& tree, const SpatialMesh& mesh);

}  // namespace nullctl
