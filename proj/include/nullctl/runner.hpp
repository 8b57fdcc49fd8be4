#pragma once

/// Subcommand dispatch for the command-line tool. Each run writes its CSVs,
/// optional SVG charts and manifest.json into the output directory.
///
/// Exit status: 0 success, 1 validation failure, 2 numerical failure
/// (non-convergence, divergence, a failed selftest gate). Outputs computed
/// before a numerical failure are still written.

#include <ostream>
#include <string>
#include <vector>

namespace nullctl {

constexpr const char* kSoftwareVersion = "1.0.0";

struct RunRequest {
  std::string subcommand;
  std::string config_path;  // empty = defaults
  std::vector<std::string> overrides;
};

std::vector<std::string> subcommands();

int run(const RunRequest& request, std::ostream& out, std::ostream& err);

}  // namespace nullctl
