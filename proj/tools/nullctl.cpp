// Command-line front end: nullctl <subcommand> [--config FILE] [--set key=value]...

#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "nullctl/config.hpp"
#include "nullctl/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Null-control experiments on a binary scenario tree"};
  app.set_version_flag("--version", nullctl::kSoftwareVersion);
  std::string config;
  std::vector<std::string> overrides;
  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults, "Print the default configuration and exit");

  const std::map<std::string, std::string> about{
      {"weights", "Tabulate the weight profiles and check their junctions"},
      {"carleman", "Calibrate and test the empirical Carleman constants"},
      {"hum-backward", "Null control of the backward equation, with penalty sweep"},
      {"hum-forward", "Null control of the forward equation (drift and diffusion controls)"},
      {"semilinear-backward", "Picard iteration on the backward HUM solver"},
      {"semilinear-forward", "Picard iteration on the forward HUM solver"},
      {"probe-contraction", "Contraction ratios of the fixed-point map over (lambda, mu)"},
      {"selftest", "Adjoint, gradient, determinism and weight gates"}};
  for (const auto& name : nullctl::subcommands()) {
    auto* sub = app.add_subcommand(name, about.at(name));
    sub->add_option("-c,--config", config, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("-s,--set", overrides, "Override a leaf key, e.g. hum.eps=1e-3");
  }
  app.require_subcommand(1, 1);
  // --print-defaults works without a subcommand
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--print-defaults") {
      std::cout << nullctl::default_config_json() << "\n";
      return 0;
    }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  nullctl::RunRequest req;
  req.subcommand = app.get_subcommands().front()->get_name();
  req.config_path = config;
  req.overrides = overrides;
  return nullctl::run(req, std::cout, std::cerr);
}
