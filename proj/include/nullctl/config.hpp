#pragma once

/// Experiment configuration: one JSON file with a strict schema. Every key
/// must exist in the defaults below and carry the same type; leaf overrides
/// are "dotted.key=value" with a JSON value (bare words are taken as
/// strings). Environment: THREADS sets the OpenMP thread count and
/// OUTPUT_DIR replaces output.dir; --set overrides still win.

#include <cstdint>
#include <string>
#include <vector>

#include "nullctl/carleman.hpp"
#include "nullctl/generators.hpp"
#include "nullctl/hum.hpp"
#include "nullctl/mesh.hpp"
#include "nullctl/semilinear.hpp"
#include "nullctl/weights.hpp"

namespace nullctl {

constexpr int kConfigVersion = 1;

struct ExperimentConfig {
  std::uint64_t seed = 0;

  double a_end = 0.0, b_end = 1.0;
  int M = 41;
  Interval ctrl{0.25, 0.45};
  Interval inner{0.30, 0.40};

  int N = 8;
  double T = 0.5;

  /// "auto" picks the regularized profile of the subcommand's direction.
  std::string variant = "auto";
  WeightParams weights;

  CoefficientSpec coefficients;
  /// Terminal (backward) or initial (forward) data: "random" or "zero".
  std::string data_kind = "random";
  double data_amplitude = 1.0;
  int data_modes = 6;
  /// Starting source of the Picard iteration / fixed source of the linear
  /// solves: "zero" or "random".
  std::string source_kind = "zero";
  double source_amplitude = 1.0;
  std::string F = "sin-tanh";
  std::string F2 = "sin-tanh";
  double L = 1.0;

  HumConfig hum;
  std::vector<double> eps_list;
  bool sweep = true;
  bool energy = true;

  /// "all" or one estimate tag.
  std::string estimate = "all";
  int calibrate = 100;
  int test = 100;
  double margin = 0.0;
  double carleman_amplitude = 1.0;

  PicardOptions picard;

  std::vector<double> probe_lambdas, probe_mus;
  int probe_pairs = 3;

  std::string output_dir = "out";
  bool svg = true;
  int threads = 0;  // 0 = OpenMP default

  /// Resolved document (defaults + file + environment + overrides).
  std::string resolved_json;

  /// Weight parameters with the variant resolved for a direction.
  WeightParams weights_for(Direction d) const;
  CarlemanSetup carleman_setup() const;
};

std::string default_config_json();

/// Throws ValidationError on malformed JSON, unknown keys, type mismatches
/// or any invariant of the constituent modules.
ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides,
                              bool use_env = true);
/// Empty path means the defaults.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                             bool use_env = true);

}  // namespace nullctl
