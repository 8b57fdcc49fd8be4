#include "nullctl/scenario.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "nullctl/errors.hpp"
#include "nullctl/seed.hpp"

namespace nullctl {

ScenarioTree::ScenarioTree(int N, double T) : N_(N), T_(T) {
  if (N < 1 || N > 16) throw ValidationError("tree: N must be in [1, 16]");
  if (!(T > 0.0 && T < 1.0)) throw ValidationError("tree: horizon T must be in (0, 1)");
  dt_ = T / N;
  sqrt_dt_ = std::sqrt(dt_);
}

ScenarioTree build_tree(int N, double T) { return ScenarioTree(N, T); }

int ScenarioTree::depth(std::size_t k) { return std::bit_width(k + 1) - 1; }

double ScenarioTree::probability(std::size_t k) { return std::ldexp(1.0, -depth(k)); }

double ScenarioTree::path_value(std::size_t k) const {
  double w = 0.0;
  // accumulate root to node so the sum order is the time order
  const int d = depth(k);
  for (int j = d - 1; j >= 0; --j) {
    const std::size_t anc = ((k + 1) >> j) - 1;
    w += increment(anc);
  }
  return w;
}

std::string ScenarioTree::path(std::size_t k) {
  const int d = depth(k);
  std::string s(d, 'u');
  for (int j = d - 1; j >= 0; --j) {
    const std::size_t anc = ((k + 1) >> j) - 1;
    s[d - 1 - j] = (anc % 2 == 1) ? 'u' : 'd';
  }
  return s;
}

AdaptedField& AdaptedField::operator+=(const AdaptedField& o) {
  if (!same_shape(o)) throw ValidationError("AdaptedField: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

AdaptedField& AdaptedField::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

namespace {

/// Sibling-averages `count` consecutive node vectors (count a power of two)
/// down to one.
SpatialField pairwise_mean(const AdaptedField& field, std::size_t first, std::size_t count) {
  const int M = field.width();
  std::vector<double> buf(count * M);
  for (std::size_t j = 0; j < count; ++j) {
    auto src = field.node(first + j);
    std::copy(src.begin(), src.end(), buf.begin() + j * M);
  }
  while (count > 1) {
    const std::size_t half = count / 2;
    for (std::size_t j = 0; j < half; ++j)
      for (int i = 0; i < M; ++i)
        buf[j * M + i] = 0.5 * (buf[(2 * j) * M + i] + buf[(2 * j + 1) * M + i]);
    count = half;
  }
  buf.resize(M);
  return buf;
}

}  // namespace

SpatialField expectation(const AdaptedField& field, const ScenarioTree& tree, int depth) {
  if (depth < 0 || depth > tree.steps()) throw ValidationError("expectation: depth out of range");
  return pairwise_mean(field, ScenarioTree::level_begin(depth), std::size_t{1} << depth);
}

SpatialField conditional_expectation(const AdaptedField& field, std::size_t k, int depth) {
  const int dk = ScenarioTree::depth(k);
  if (depth < dk) throw ValidationError("conditional_expectation: depth above node");
  const std::size_t span = std::size_t{1} << (depth - dk);
  const std::size_t first = (k + 1) * span - 1;
  return pairwise_mean(field, first, span);
}

void martingale_coefficient(std::span<const double> up, std::span<const double> down,
                            double sqrt_dt, std::span<double> out) {
  const double s = 0.5 / sqrt_dt;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * (up[i] - down[i]);
}

SpatialField martingale_coefficient(std::span<const double> up, std::span<const double> down,
                                    double dt) {
  if (!(dt > 0.0)) throw ValidationError("martingale_coefficient: dt must be positive");
  if (up.size() != down.size()) throw ValidationError("martingale_coefficient: shape mismatch");
  SpatialField out(up.size());
  martingale_coefficient(up, down, std::sqrt(dt), out);
  return out;
}

AdaptedField sample_adapted_coefficients(const ScenarioTree& tree, const SpatialMesh& mesh,
                                         std::uint64_t seed, double c0, double c1,
                                         double roughness) {
  if (!(c0 > 0.0 && c0 < c1)) throw ValidationError("coefficients: need 0 < c0 < c1");
  Rng rng(seed);
  constexpr int kModes = 3;
  double slope[kModes], drift[kModes], phase[kModes];
  for (int k = 0; k < kModes; ++k) {
    slope[k] = rng.uniform(-2.0, 2.0);
    drift[k] = rng.uniform(-2.0, 2.0);
    phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double width = c1 - c0;
  const double amplitude = roughness * 0.5 * width;
  const int M = mesh.size();
  const double L = mesh.b_end() - mesh.a_end();
  AdaptedField a(tree, M);
  for (std::size_t k = 0; k < tree.node_count(); ++k) {
    const double w = tree.path_value(k);
    const double t = tree.time(ScenarioTree::depth(k));
    double g[kModes];
    for (int j = 0; j < kModes; ++j) g[j] = std::tanh(slope[j] * w + drift[j] * t);
    auto out = a.node(k);
    for (int i = 0; i < M; ++i) {
      const double s = (mesh.x(i) - mesh.a_end()) / L;
      const double base = c0 + width * (0.5 + 0.25 * std::cos(2.0 * std::numbers::pi * s));
      double pert = 0.0;
      for (int j = 0; j < kModes; ++j)
        pert += g[j] * std::sin((j + 1) * std::numbers::pi * s + phase[j]);
      out[i] = std::clamp(base + amplitude * pert / kModes, c0, c1);
    }
  }
  return a;
}

bool measurability_probe(const AdaptedField& field, const ScenarioTree& tree,
                         const ProbeStep& step, double tol) {
  const int M = field.width();
  std::vector<double> buf(M);
  for (std::size_t k = 0; k < tree.interior_count(); ++k) {
    for (std::size_t c : {ScenarioTree::up(k), ScenarioTree::down(k)}) {
      step(field.node(k), c, buf);
      auto stored = field.node(c);
      for (int i = 0; i < M; ++i) {
        const double scale = std::max({1.0, std::abs(buf[i]), std::abs(stored[i])});
        if (!(std::abs(buf[i] - stored[i]) <= tol * scale)) return false;
      }
    }
  }
  return true;
}

bool measurability_probe(const AdaptedField& field, const ScenarioTree& tree) {
  return measurability_probe(
      field, tree,
      [](std::span<const double> parent, std::size_t, std::span<double> out) {
        std::copy(parent.begin(), parent.end(), out.begin());
      },
      0.0);
}

void write_adapted_csv(const AdaptedField& field, const ScenarioTree& tree, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open " + path);
  os << "node,path,depth,index,value\r\n";
  char num[32];
  for (std::size_t k = 0; k < field.nodes(); ++k) {
    const std::string p = ScenarioTree::path(k);
    for (int i = 0; i < field.width(); ++i) {
      std::snprintf(num, sizeof num, "%.17g", field.at(k, i));
      os << k << ',' << p << ',' << ScenarioTree::depth(k) << ',' << i << ',' << num << "\r\n";
    }
  }
  (void)tree;
}

}  // namespace nullctl
