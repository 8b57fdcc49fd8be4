#pragma once

/// Forward and backward SPDE integrators on the scenario tree, and the exact
/// transposes of their control-to-state maps.
///
/// One step on the branch from node k (depth n) to child c reads
///   forward:  A_k z_c = E_k z_k + dt (L_k z_k + phi1_k + div b_k) + phi2_k dW_c
///   backward: A_k y_k = E_k yhat_k - dt (L_k yhat_k + rho2_k Y_k + phi_k + div b_k + 1_O' u_k)
/// with A_k = I - theta dt D_k, E_k = I + (1-theta) dt D_k, D_k = (a_k .')',
/// L_k = drift_k * gradient + alpha_k, and yhat_k, Y_k the conditional mean
/// and martingale coefficient of the children. Coefficients are frozen at k.

#include <vector>

#include "nullctl/mesh.hpp"
#include "nullctl/scenario.hpp"

namespace nullctl {

enum class Exec { Serial, Parallel };

struct SchemeOptions {
  /// Implicitness of the diffusion step, in [1/2, 1].
  double theta = 0.6;
  /// Upper bound on dt |alpha| + sqrt(dt) |rho2| + dt |drift| / (h (1 + 2 theta dt a_min / h^2)).
  double stability_limit = 1.0;
  Exec exec = Exec::Parallel;
};

/// Coefficients shared by both directions. Empty fields mean zero; an empty
/// `a` means no diffusion at all.
struct Coefficients {
  AdaptedField a;
  AdaptedField drift;
  AdaptedField alpha;
  AdaptedField rho2;  // backward only: coefficient of the martingale component
  double c0 = 0.0;    // ellipticity floor checked when `a` is present
};

struct ForwardProblem {
  Coefficients coef;
  AdaptedField phi1;
  AdaptedField b;
  AdaptedField phi2;
  SpatialField z0;
};

struct BackwardProblem {
  Coefficients coef;
  AdaptedField yT;  // read at the leaves only
  AdaptedField phi;
  AdaptedField b;
  AdaptedField u;  // must vanish off the control mask
};

struct StatePair {
  AdaptedField y;
  AdaptedField Y;  // defined at nodes of depth < N; zero at the leaves
};

AdaptedField solve_forward(const ForwardProblem& problem, const ScenarioTree& tree,
                           const SpatialMesh& mesh, const SchemeOptions& opt = {});
StatePair solve_backward(const BackwardProblem& problem, const ScenarioTree& tree,
                         const SpatialMesh& mesh, const SchemeOptions& opt = {});

/// Stability number of the explicit part; throws ValidationError above the
/// limit, or if `a` violates the ellipticity floor.
double check_coefficients(const Coefficients& coef, const ScenarioTree& tree,
                          const SpatialMesh& mesh, const SchemeOptions& opt);

/// Control-to-state map of the backward system, u -> y(u) with y_T = 0 and
/// no sources.
StatePair backward_control_to_state(const Coefficients& coef, const AdaptedField& u,
                                    const ScenarioTree& tree, const SpatialMesh& mesh,
                                    const SchemeOptions& opt = {});

/// Reverse sweep: for F(y) = sum_k pi_k <g_k, y_k> over depths < N, returns
/// c with dF/du_k = pi_k c_k (supported on the control mask, depths < N).
AdaptedField backward_adjoint_sweep(const Coefficients& coef, const AdaptedField& g,
                                    const ScenarioTree& tree, const SpatialMesh& mesh,
                                    const SchemeOptions& opt = {});

/// Transpose of u -> y(u) in the inner product
/// <f, g> = sum_{depth < N} pi_k dt h sum_i f g.
AdaptedField apply_adjoint(const Coefficients& coef, const AdaptedField& w,
                           const ScenarioTree& tree, const SpatialMesh& mesh,
                           const SchemeOptions& opt = {});

/// Forward system with a drift control on the control mask and a diffusion
/// control everywhere: (u, U) -> z with z_0 = 0 and no other sources.
AdaptedField forward_control_to_state(const Coefficients& coef, const AdaptedField& u,
                                      const AdaptedField& U, const ScenarioTree& tree,
                                      const SpatialMesh& mesh, const SchemeOptions& opt = {});

/// Reverse sweep for F(z) = sum_k pi_k <g_k, z_k> over all depths; returns
/// (c_u, c_U) with dF/du_k = pi_k c_u_k and dF/dU_k = pi_k c_U_k.
struct ForwardCotangent {
  AdaptedField u;
  AdaptedField U;
};
ForwardCotangent forward_adjoint_sweep(const Coefficients& coef, const AdaptedField& g,
                                       const ScenarioTree& tree, const SpatialMesh& mesh,
                                       const SchemeOptions& opt = {});

/// One forward step from a parent value to `child`, for measurability_probe.
/// The problem, tree and mesh must outlive the returned callable.
ProbeStep forward_transition(const ForwardProblem& problem, const ScenarioTree& tree,
                             const SpatialMesh& mesh, const SchemeOptions& opt = {});

namespace reference {

/// Depth-first serial re-implementations kept for cross-checking the level
/// kernels above.
AdaptedField solve_forward(const ForwardProblem& problem, const ScenarioTree& tree,
                           const SpatialMesh& mesh, double theta);
StatePair solve_backward(const BackwardProblem& problem, const ScenarioTree& tree,
                         const SpatialMesh& mesh, double theta);

}  // namespace reference

/// Per-node central-difference gradient of a field.
AdaptedField gradient_field(const AdaptedField& f, const SpatialMesh& mesh);

}  // namespace nullctl
