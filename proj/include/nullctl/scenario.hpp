#pragma once

/// Non-recombining binary Brownian tree and node-indexed (adapted) fields.
///
/// Nodes use heap order: root 0, children of k are 2k+1 (increment +sqrt(dt))
/// and 2k+2 (increment -sqrt(dt)); depth d occupies [2^d - 1, 2^{d+1} - 1).

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nullctl/mesh.hpp"

namespace nullctl {

class ScenarioTree {
 public:
  ScenarioTree(int N, double T);

  int steps() const { return N_; }
  double horizon() const { return T_; }
  double dt() const { return dt_; }
  double sqrt_dt() const { return sqrt_dt_; }
  std::size_t node_count() const { return (std::size_t{1} << (N_ + 1)) - 1; }
  /// Nodes with depth < N, i.e. the ones that own a time step.
  std::size_t interior_count() const { return (std::size_t{1} << N_) - 1; }
  static std::size_t level_begin(int d) { return (std::size_t{1} << d) - 1; }
  static std::size_t level_end(int d) { return (std::size_t{1} << (d + 1)) - 1; }
  static std::size_t up(std::size_t k) { return 2 * k + 1; }
  static std::size_t down(std::size_t k) { return 2 * k + 2; }
  static std::size_t parent(std::size_t k) { return (k - 1) / 2; }
  static int depth(std::size_t k);
  /// Brownian increment on the branch entering node k (k > 0).
  double increment(std::size_t k) const { return (k % 2 == 1) ? sqrt_dt_ : -sqrt_dt_; }
  /// Probability of reaching node k: 2^{-depth}.
  static double probability(std::size_t k);
  double time(int depth) const { return depth * dt_; }
  /// Brownian path value W(t_depth) at node k.
  double path_value(std::size_t k) const;
  /// 'u'/'d' string from the root; the root is "".
  static std::string path(std::size_t k);

 private:
  int N_;
  double T_;
  double dt_;
  double sqrt_dt_;
};

ScenarioTree build_tree(int N, double T);

/// One spatial vector per tree node, stored contiguously.
class AdaptedField {
 public:
  AdaptedField() = default;
  AdaptedField(std::size_t nodes, int M, double value = 0.0)
      : nodes_(nodes), M_(M), data_(nodes * static_cast<std::size_t>(M), value) {}
  AdaptedField(const ScenarioTree& tree, int M, double value = 0.0)
      : AdaptedField(tree.node_count(), M, value) {}

  bool empty() const { return data_.empty(); }
  std::size_t nodes() const { return nodes_; }
  int width() const { return M_; }
  std::span<double> node(std::size_t k) { return {data_.data() + k * M_, static_cast<std::size_t>(M_)}; }
  std::span<const double> node(std::size_t k) const {
    return {data_.data() + k * M_, static_cast<std::size_t>(M_)};
  }
  double& at(std::size_t k, int i) { return data_[k * M_ + i]; }
  double at(std::size_t k, int i) const { return data_[k * M_ + i]; }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const AdaptedField& o) const { return nodes_ == o.nodes_ && M_ == o.M_; }

  AdaptedField& operator+=(const AdaptedField& o);
  AdaptedField& operator*=(double s);

 private:
  std::size_t nodes_ = 0;
  int M_ = 0;
  std::vector<double> data_;
};

/// Probability-weighted average over depth `depth`, computed by repeated
/// sibling averaging. The summation order is fixed, and the tower property
/// holds bit-for-bit.
SpatialField expectation(const AdaptedField& field, const ScenarioTree& tree, int depth);

/// Conditional expectation at node k of the values at depth `depth` > depth(k).
SpatialField conditional_expectation(const AdaptedField& field, std::size_t k, int depth);

/// Z with X_up = (X_up+X_down)/2 + Z sqrt(dt), X_down = ... - Z sqrt(dt).
SpatialField martingale_coefficient(std::span<const double> up, std::span<const double> down,
                                    double dt);
void martingale_coefficient(std::span<const double> up, std::span<const double> down,
                            double sqrt_dt, std::span<double> out);

/// clamp(base(x) + roughness*(c1-c0)/2 * s(path, x), c0, c1); s is built from
/// three trigonometric modes whose amplitudes are tanh of seed-dependent
/// affine functions of (W_t, t).
AdaptedField sample_adapted_coefficients(const ScenarioTree& tree, const SpatialMesh& mesh,
                                         std::uint64_t seed, double c0, double c1,
                                         double roughness);

/// Transition rule of a forward recursion: fills the child value from the
/// parent value. `child` is the child's node index.
using ProbeStep =
    std::function<void(std::span<const double> parent, std::size_t child, std::span<double> out)>;

/// Recomputes every child from its parent's stored value with `step` and
/// compares to the stored descendant values (relative tolerance `tol`).
/// Passes iff every subtree re-run reproduces the stored field.
bool measurability_probe(const AdaptedField& field, const ScenarioTree& tree,
                         const ProbeStep& step, double tol = 1e-12);
/// Identity transition: a field passes iff it is constant along every path.
bool measurability_probe(const AdaptedField& field, const ScenarioTree& tree);

/// CSV with header node,path,depth,index,value.
void write_adapted_csv(const AdaptedField& field, const ScenarioTree& tree, const std::string& path);

}  // namespace nullctl
