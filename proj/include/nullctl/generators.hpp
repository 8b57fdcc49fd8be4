#pragma once

/// Random problem data: coefficients satisfying the ellipticity and
/// boundedness assumptions, smooth adapted sources and terminal data.
/// Every generator is a pure function of its seed.

#include <cstdint>

#include "nullctl/mesh.hpp"
#include "nullctl/scenario.hpp"
#include "nullctl/seed.hpp"
#include "nullctl/spde.hpp"

namespace nullctl {

struct CoefficientSpec {
  double c0 = 0.5;
  double c1 = 1.5;
  /// Path dependence of the diffusion coefficient (0 = deterministic a).
  double roughness = 0.5;
  /// Sup bounds of the lower-order fields; 0 leaves the field empty.
  double drift = 0.5;
  double alpha = 0.5;
  double rho2 = 0.5;
  /// Freeze everything: a = base profile, lower-order fields constant in
  /// the path (only x-dependent).
  bool deterministic = false;
};

/// Field seeds are derived with seed_split(seed, "a" / "drift" / ...).
Coefficients make_coefficients(const CoefficientSpec& spec, const ScenarioTree& tree,
                               const SpatialMesh& mesh, std::uint64_t seed);

/// sum_{j=1..modes} z_j / j * sin(j pi s), z_j standard normal.
SpatialField smooth_random(const SpatialMesh& mesh, Rng& rng, int modes = 6);

enum class Support { All, Interior, Leaves };

/// An independent smooth_random draw per node (in node order), scaled by
/// `amplitude`; nodes outside `support` stay zero. `ctrl_only` zeroes the
/// points outside the control region.
AdaptedField random_adapted(const ScenarioTree& tree, const SpatialMesh& mesh, std::uint64_t seed,
                            double amplitude = 1.0, Support support = Support::All,
                            bool ctrl_only = false, int modes = 6);

/// Pointwise i.i.d. normal entries (not smooth); used by the dot-product tests.
AdaptedField random_rough(const ScenarioTree& tree, const SpatialMesh& mesh, std::uint64_t seed,
                          Support support = Support::All, bool ctrl_only = false);

}  // namespace nullctl
