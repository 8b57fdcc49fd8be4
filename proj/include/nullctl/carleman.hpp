#pragma once

/// Both sides of the four weighted energy (Carleman-type) inequalities,
/// evaluated on solved trajectories in log domain, and the empirical
/// constant protocol: calibrate on one ensemble, test on a fresh one.
///
///   C1  forward equation, L2 sources, b = 0, weights from the plain profile
///   C2  forward equation with a divergence source b
///   C3  backward equation with a divergence source b, mirrored profile
///   CB  backward equation, b = 0, mirrored profile

#include <cstdint>
#include <string>
#include <vector>

#include "nullctl/generators.hpp"
#include "nullctl/mesh.hpp"
#include "nullctl/scenario.hpp"
#include "nullctl/spde.hpp"
#include "nullctl/weights.hpp"

namespace nullctl {

enum class EstimateId { C1, C2, C3, CB };

/// "C1-forward-L2", "C2-forward-Hminus1", "C3-backward-Hminus1", "CB-backward-L2".
std::string to_string(EstimateId id);
/// Accepts the full tag or its first two characters.
EstimateId parse_estimate(const std::string& s);
bool is_backward(EstimateId id);
/// Profile the weights must be built from (unregularized).
GammaVariant estimate_variant(EstimateId id);

/// A solved trajectory with its data. Forward estimates read z, phi1, phi2,
/// b; backward ones read z, Z (martingale part), phi1 (the source) and b.
struct EstimateInputs {
  AdaptedField z;
  AdaptedField Z;
  AdaptedField phi1;
  AdaptedField phi2;
  AdaptedField b;
};

struct CarlemanReport {
  EstimateId id = EstimateId::C1;
  double lambda = 1, mu = 1, m = 1;
  std::uint64_t seed = 0;
  std::vector<LogTerm> lhs, rhs;
  double log_lhs = kNegInf;
  double log_rhs = kNegInf;
  /// log_lhs - log_rhs; -inf for the zero solution.
  double log_C_emp = kNegInf;
  bool degenerate = false;
};

/// Throws ValidationError when the data break the estimate's hypotheses
/// (b nonzero for C1 / CB) or the weights come from the wrong profile.
CarlemanReport eval_estimate(EstimateId id, const EstimateInputs& in, const WeightSystem& system,
                             const ScenarioTree& tree, const SpatialMesh& mesh);

/// Random problem generators for the ensembles.
struct CarlemanSetup {
  int M = 31;
  int N = 8;
  double T = 0.5;
  Interval ctrl{0.25, 0.45};
  Interval inner{0.30, 0.40};
  double m = 1.0;
  CoefficientSpec coefficients;
  /// Amplitude of the smooth random data (initial / terminal values and
  /// sources).
  double data_amplitude = 1.0;
  SchemeOptions scheme;
};

/// Draws coefficients and data from `seed` and solves. Children of `seed`:
/// "coef", "z0" / "zT", "phi1", "phi2", "b".
EstimateInputs sample_estimate_problem(EstimateId id, const CarlemanSetup& setup,
                                       const ScenarioTree& tree, const SpatialMesh& mesh,
                                       std::uint64_t seed);

struct EnsembleResult {
  EstimateId id = EstimateId::C1;
  double lambda = 1, mu = 1;
  std::vector<CarlemanReport> reports;
  /// Max and interquartile range of log_C_emp over nondegenerate members.
  double log_C_max = kNegInf;
  double iqr = 0.0;
  /// Every member was degenerate.
  bool degenerate = false;
};

/// Member j uses seed_split(seed, "member-" + j). Members run in parallel;
/// results do not depend on the thread count. Throws ValidationError for
/// fewer than 10 members.
EnsembleResult run_ensemble(EstimateId id, const CarlemanSetup& setup, int size, double lambda,
                            double mu, std::uint64_t seed);

/// run_ensemble with log_C_cal = log_C_max.
EnsembleResult calibrate_constant(EstimateId id, const CarlemanSetup& setup, int size,
                                  double lambda, double mu, std::uint64_t seed);

struct TestResult {
  EnsembleResult ensemble;
  double log_C_cal = kNegInf;
  double margin = 0.0;
  int violations = 0;
  /// max over members of log_C_emp - log_C_cal.
  double worst_excess = kNegInf;
};

/// Counts members with log_C_emp > log_C_cal + margin.
TestResult test_constant(EstimateId id, const CarlemanSetup& setup, int size, double lambda,
                         double mu, std::uint64_t seed, double log_C_cal, double margin);

/// Columns estimate,lambda,mu,m,seed,log_lhs,log_rhs,log_C_emp.
void write_carleman_csv(const std::string& path, const std::vector<CarlemanReport>& reports);

}  // namespace nullctl
