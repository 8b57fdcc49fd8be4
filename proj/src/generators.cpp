#include "nullctl/generators.hpp"

#include <cmath>
#include <numbers>

#include "nullctl/seed.hpp"

namespace nullctl {

namespace {

/// amplitude * (1/2) sum_j tanh(s_j W + d_j t) sin(j pi x + p_j) on every node;
/// with `frozen` the path factor is replaced by a fixed constant.
AdaptedField bounded_field(const ScenarioTree& tree, const SpatialMesh& mesh, std::uint64_t seed,
                           double amplitude, bool frozen) {
  AdaptedField f(tree, mesh.size());
  if (amplitude == 0.0) return {};
  Rng rng(seed);
  constexpr int kModes = 2;
  double s[kModes], d[kModes], p[kModes], c[kModes];
  for (int j = 0; j < kModes; ++j) {
    s[j] = rng.uniform(-2.0, 2.0);
    d[j] = rng.uniform(-2.0, 2.0);
    p[j] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    c[j] = rng.uniform(-1.0, 1.0);
  }
  const double L = mesh.b_end() - mesh.a_end();
  for (std::size_t k = 0; k < tree.node_count(); ++k) {
    const double w = tree.path_value(k);
    const double t = tree.time(ScenarioTree::depth(k));
    auto out = f.node(k);
    for (int i = 0; i < mesh.size(); ++i) {
      const double x = (mesh.x(i) - mesh.a_end()) / L;
      double v = 0.0;
      for (int j = 0; j < kModes; ++j) {
        const double g = frozen ? c[j] : std::tanh(s[j] * w + d[j] * t);
        v += g * std::sin((j + 1) * std::numbers::pi * x + p[j]);
      }
      out[i] = amplitude * 0.5 * v;
    }
  }
  return f;
}

bool in_support(std::size_t k, const ScenarioTree& tree, Support support) {
  switch (support) {
    case Support::All: return true;
    case Support::Interior: return k < tree.interior_count();
    case Support::Leaves: return k >= tree.interior_count();
  }
  return true;
}

}  // namespace

Coefficients make_coefficients(const CoefficientSpec& spec, const ScenarioTree& tree,
                               const SpatialMesh& mesh, std::uint64_t seed) {
  Coefficients c;
  c.c0 = spec.c0;
  const double rough = spec.deterministic ? 0.0 : spec.roughness;
  c.a = sample_adapted_coefficients(tree, mesh, seed_split(seed, "a"), spec.c0, spec.c1, rough);
  c.drift = bounded_field(tree, mesh, seed_split(seed, "drift"), spec.drift, spec.deterministic);
  c.alpha = bounded_field(tree, mesh, seed_split(seed, "alpha"), spec.alpha, spec.deterministic);
  c.rho2 = bounded_field(tree, mesh, seed_split(seed, "rho2"), spec.rho2, spec.deterministic);
  return c;
}

SpatialField smooth_random(const SpatialMesh& mesh, Rng& rng, int modes) {
  SpatialField out(mesh.size(), 0.0);
  const double L = mesh.b_end() - mesh.a_end();
  for (int j = 1; j <= modes; ++j) {
    const double z = rng.normal() / j;
    for (int i = 0; i < mesh.size(); ++i)
      out[i] += z * std::sin(j * std::numbers::pi * (mesh.x(i) - mesh.a_end()) / L);
  }
  return out;
}

AdaptedField random_adapted(const ScenarioTree& tree, const SpatialMesh& mesh, std::uint64_t seed,
                            double amplitude, Support support, bool ctrl_only, int modes) {
  AdaptedField f(tree, mesh.size());
  Rng rng(seed);
  const auto& mask = mesh.ctrl_mask();
  for (std::size_t k = 0; k < tree.node_count(); ++k) {
    if (!in_support(k, tree, support)) continue;
    auto v = smooth_random(mesh, rng, modes);
    auto out = f.node(k);
    for (int i = 0; i < mesh.size(); ++i) out[i] = (ctrl_only && !mask[i]) ? 0.0 : amplitude * v[i];
  }
  return f;
}

AdaptedField random_rough(const ScenarioTree& tree, const SpatialMesh& mesh, std::uint64_t seed,
                          Support support, bool ctrl_only) {
  AdaptedField f(tree, mesh.size());
  Rng rng(seed);
  const auto& mask = mesh.ctrl_mask();
  for (std::size_t k = 0; k < tree.node_count(); ++k) {
    if (!in_support(k, tree, support)) continue;
    for (int i = 0; i < mesh.size(); ++i) {
      const double z = rng.normal();
      f.at(k, i) = (ctrl_only && !mask[i]) ? 0.0 : z;
    }
  }
  return f;
}

}  // namespace nullctl
