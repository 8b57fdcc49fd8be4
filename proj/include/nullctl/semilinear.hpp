#pragma once

/// Picard iteration for the semilinear control problems: the nonlinearity
/// is frozen into the source, the linear problem is solved by penalized HUM,
/// and the source is updated from the controlled state.
///
/// Iterates are compared in the weighted source norm
///   |phi|_B^2 = E sum_n dt h sum_i Wu(n, i) phi^2
/// with the clamped control weight of the functional, taken over the whole
/// domain. Residuals are relative: |phi_{k+1} - phi_k|_B / |phi_{k+1}|_B.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nullctl/hum.hpp"

namespace nullctl {

/// Backward nonlinearity F(t, x, y, grad y, Y), or a forward one
/// F(t, x, y, grad y) with Y ignored.
struct Nonlinearity {
  std::string name = "zero";
  double L = 0.0;
  std::function<double(double t, double x, double y, double g, double Y)> f;

  double operator()(double t, double x, double y, double g, double Y) const {
    return f ? f(t, x, y, g, Y) : 0.0;
  }
};

/// Built-ins, each Lipschitz with constant L in |dy| + |dg| + |dY|:
///   zero      F = 0
///   sin-tanh  F = L (sin y + tanh g + Y / 2) / 2
///   linear    F = L (y + g + Y) / 3
/// For forward use the Y argument is dropped.
Nonlinearity make_nonlinearity(const std::string& name, double L, bool forward = false);
std::vector<std::string> nonlinearity_names();

struct LipschitzAudit {
  bool zero_at_zero = true;
  /// max |dF| / (L (|dy| + |dg| + |dY|)) over the sample.
  double max_ratio = 0.0;
  bool pass = true;
};

/// Random argument pairs from `seed`; passes when F vanishes at zero at every
/// sampled (t, x) and max_ratio <= 1.01.
LipschitzAudit audit_nonlinearity(const Nonlinearity& F, double T, int pairs, std::uint64_t seed,
                                  bool forward = false);

struct PicardOptions {
  double tol = 1e-8;
  int max_iters = 50;
  /// Consecutive ratios above one that count as divergence.
  int divergence_run = 5;
  /// Calibrated contraction floor; below it the driver warns and still runs.
  double lambda_threshold = 2.0;
  double mu_threshold = 2.0;
};

struct PicardStep {
  int iteration;
  double log_residual_B;  // log of the relative residual
  double rho;             // residual ratio (NaN on the first step)
  double residual_endpoint;
  double log_residual_B_unclamped;
};

struct FixedPointTrace {
  std::vector<PicardStep> steps;
  bool converged = false;
  bool diverged = false;
  int iterations = 0;
  std::vector<std::string> warnings;
};

struct PicardResult {
  ControlResult control;
  FixedPointTrace trace;
  /// Source the returned control was computed with.
  AdaptedField source;
  /// |F(state) - source|_B / |F(state)|_B on the returned state.
  double consistency = 0.0;
  /// Forward only: U* = U - F2(y, grad y).
  AdaptedField U_star;
};

/// Source norm in log domain: clamped weights (the functional's) or the
/// unclamped control weight.
double log_source_norm(const AdaptedField& phi, const HumFunctional& f);
double log_source_norm_unclamped(const AdaptedField& phi, const WeightSystem& system,
                                 const ScenarioTree& tree, const SpatialMesh& mesh);

/// F evaluated on a state at every node of depth < N (leaves stay zero).
AdaptedField apply_nonlinearity(const Nonlinearity& F, const AdaptedField& y,
                                const AdaptedField& Y, const ScenarioTree& tree,
                                const SpatialMesh& mesh);

/// Backward problem: `problem.phi` is the starting source (empty = zero).
PicardResult picard_backward(const Nonlinearity& F, const ControlProblem& problem,
                             const HumConfig& config, const WeightSystem& system,
                             const ScenarioTree& tree, const SpatialMesh& mesh,
                             const PicardOptions& opt = {});

/// Forward problem with the diffusion nonlinearity absorbed into U.
PicardResult picard_forward(const Nonlinearity& F1, const Nonlinearity& F2,
                            const ControlProblem& problem, const HumConfig& config,
                            const WeightSystem& system, const ScenarioTree& tree,
                            const SpatialMesh& mesh, const PicardOptions& opt = {});

struct ProbeCell {
  double lambda, mu;
  /// |K phi_a - K phi_b|_B / |phi_a - phi_b|_B, one per pair.
  std::vector<double> ratios;
  double max_ratio;
};

struct ProbeTable {
  std::vector<ProbeCell> cells;
  /// Along each mu, ratios nonincreasing in lambda up to the noise band.
  bool trend_ok = true;
};

/// Two-point contraction ratios of one Picard map application over a
/// (lambda, mu) grid. Weights are rebuilt per cell from `base` (same variant,
/// m, T, eps). Cells run in parallel.
ProbeTable contraction_probe(const Nonlinearity& F, const ControlProblem& problem,
                             const HumConfig& config, const WeightParams& base,
                             const ScenarioTree& tree, const SpatialMesh& mesh,
                             const std::vector<std::pair<double, double>>& grid, int pairs,
                             std::uint64_t seed, double noise_band = 0.10);

}  // namespace nullctl
