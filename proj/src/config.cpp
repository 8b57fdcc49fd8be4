#include "nullctl/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "nullctl/errors.hpp"
#include "nullctl/scenario.hpp"

namespace nullctl {

namespace {

using Json = nlohmann::ordered_json;

const char* kDefaults = R"({
  "version": 1,
  "seed": 20261016,
  "mesh": {"M": 41, "a": 0.0, "b": 1.0, "ctrl": [0.25, 0.45], "inner": [0.30, 0.40]},
  "tree": {"N": 8, "T": 0.5},
  "weights": {"lambda": 1.0, "mu": 1.0, "m": 1.0, "variant": "auto", "eps": 0.01,
              "kappa": 30.0, "lambda_min": 1.0, "mu_min": 1.0},
  "problem": {
    "coefficients": {"c0": 0.5, "c1": 1.5, "roughness": 0.5, "drift": 0.5, "alpha": 0.5,
                     "rho2": 0.5, "deterministic": false},
    "data": {"kind": "random", "amplitude": 1.0, "modes": 6},
    "source": {"kind": "zero", "amplitude": 1.0},
    "nonlinearity": {"F": "sin-tanh", "F2": "sin-tanh", "L": 1.0}
  },
  "hum": {"eps": 0.01, "eps_list": [0.1, 0.01, 0.001, 0.0001], "cg_tol": 1e-10,
          "cg_max_iters": 2000, "theta": 1.0, "gradient_penalty": true, "gate_tol": 1e-9,
          "sweep": true, "energy": true},
  "carleman": {"estimate": "all", "calibrate": 100, "test": 100, "margin": 2.302585092994046,
               "amplitude": 1.0},
  "picard": {"tol": 1e-8, "max_iters": 50, "divergence_run": 5, "lambda_threshold": 2.0,
             "mu_threshold": 2.0},
  "probe": {"lambdas": [1.0, 2.0, 4.0], "mus": [1.0, 2.0], "pairs": 3},
  "output": {"dir": "out", "svg": true}
})";

std::string type_name(const Json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

void check_type(const Json& def, const Json& val, const std::string& key) {
  bool ok = false;
  if (def.is_boolean()) ok = val.is_boolean();
  else if (def.is_number_integer()) ok = val.is_number_integer();
  else if (def.is_number()) ok = val.is_number();
  else if (def.is_string()) ok = val.is_string();
  else if (def.is_array()) {
    ok = val.is_array();
    if (ok)
      for (const auto& e : val) ok = ok && e.is_number();
  }
  if (!ok)
    throw ValidationError("config: '" + key + "' expects " + type_name(def) +
                          (def.is_array() ? " of numbers" : "") + ", got " + type_name(val));
}

void merge(Json& base, const Json& user, const std::string& prefix) {
  if (!user.is_object()) throw ValidationError("config: '" + prefix + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ValidationError("config: unknown key '" + key + "'");
    Json& slot = base[it.key()];
    if (slot.is_object()) {
      merge(slot, it.value(), key);
    } else {
      check_type(slot, it.value(), key);
      slot = it.value();
    }
  }
}

void apply_override(Json& doc, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("config: override '" + spec + "' is not key=value");
  const std::string key = spec.substr(0, eq);
  const std::string text = spec.substr(eq + 1);
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(part))
      throw ValidationError("config: unknown key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ValidationError("config: '" + key + "' is a section, not a leaf");
  Json val = Json::parse(text, nullptr, false);
  if (val.is_discarded()) val = text;
  check_type(*node, val, key);
  *node = val;
}

Interval interval(const Json& v, const std::string& key) {
  if (v.size() != 2) throw ValidationError("config: '" + key + "' must be [lo, hi]");
  return {v[0].get<double>(), v[1].get<double>()};
}

std::vector<double> numbers(const Json& v) {
  std::vector<double> out;
  for (const auto& e : v) out.push_back(e.get<double>());
  return out;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError("config: " + msg);
}

bool finite_positive(double v) { return std::isfinite(v) && v > 0.0; }

}  // namespace

std::string default_config_json() { return Json::parse(kDefaults).dump(2); }

WeightParams ExperimentConfig::weights_for(Direction d) const {
  WeightParams p = weights;
  if (variant == "auto")
    p.variant = d == Direction::Forward ? GammaVariant::ForwardRegularized
                                        : GammaVariant::BackwardRegularized;
  else
    p.variant = parse_gamma_variant(variant);
  return p;
}

CarlemanSetup ExperimentConfig::carleman_setup() const {
  CarlemanSetup s;
  s.M = M;
  s.N = N;
  s.T = T;
  s.ctrl = ctrl;
  s.inner = inner;
  s.m = weights.m;
  s.coefficients = coefficients;
  s.data_amplitude = carleman_amplitude;
  s.scheme = hum.scheme;
  return s;
}

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides,
                              bool use_env) {
  Json doc = Json::parse(kDefaults);
  Json user;
  try {
    user = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("config: malformed JSON: ") + e.what());
  }
  merge(doc, user, "");

  ExperimentConfig c;
  if (use_env) {
    if (const char* dir = std::getenv("OUTPUT_DIR"); dir && *dir) doc["output"]["dir"] = dir;
    if (const char* th = std::getenv("THREADS"); th && *th) {
      char* end = nullptr;
      const long n = std::strtol(th, &end, 10);
      require(*end == '\0' && n >= 1 && n <= 1024, "THREADS must be a positive integer");
      c.threads = static_cast<int>(n);
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);

  require(doc["version"].get<int>() == kConfigVersion,
          "unsupported version " + doc["version"].dump() + " (expected 1)");
  require(doc["seed"].is_number_unsigned() || doc["seed"].get<long long>() >= 0,
          "seed must be a nonnegative integer");
  c.seed = doc["seed"].get<std::uint64_t>();

  const Json& mesh = doc["mesh"];
  c.M = mesh["M"].get<int>();
  c.a_end = mesh["a"].get<double>();
  c.b_end = mesh["b"].get<double>();
  c.ctrl = interval(mesh["ctrl"], "mesh.ctrl");
  c.inner = interval(mesh["inner"], "mesh.inner");
  const SpatialMesh sm = build_mesh(c.a_end, c.b_end, c.M, c.ctrl, c.inner);

  c.N = doc["tree"]["N"].get<int>();
  c.T = doc["tree"]["T"].get<double>();
  const ScenarioTree tree = build_tree(c.N, c.T);

  const Json& w = doc["weights"];
  c.variant = w["variant"].get<std::string>();
  if (c.variant != "auto") parse_gamma_variant(c.variant);
  c.weights.lambda = w["lambda"].get<double>();
  c.weights.mu = w["mu"].get<double>();
  c.weights.m = w["m"].get<double>();
  c.weights.eps = w["eps"].get<double>();
  c.weights.kappa = w["kappa"].get<double>();
  c.weights.lambda_min = w["lambda_min"].get<double>();
  c.weights.mu_min = w["mu_min"].get<double>();
  c.weights.T = c.T;
  {
    const WeightParams p = c.weights_for(Direction::Backward);
    p.validate();
    const WeightSystem ws(p, sm, tree);
  }

  const Json& pr = doc["problem"];
  const Json& co = pr["coefficients"];
  c.coefficients.c0 = co["c0"].get<double>();
  c.coefficients.c1 = co["c1"].get<double>();
  c.coefficients.roughness = co["roughness"].get<double>();
  c.coefficients.drift = co["drift"].get<double>();
  c.coefficients.alpha = co["alpha"].get<double>();
  c.coefficients.rho2 = co["rho2"].get<double>();
  c.coefficients.deterministic = co["deterministic"].get<bool>();
  require(c.coefficients.c0 > 0.0 && c.coefficients.c0 < c.coefficients.c1,
          "problem.coefficients needs 0 < c0 < c1");
  for (const char* k : {"roughness", "drift", "alpha", "rho2"})
    require(co[k].get<double>() >= 0.0 && std::isfinite(co[k].get<double>()),
            std::string("problem.coefficients.") + k + " must be finite and >= 0");

  c.data_kind = pr["data"]["kind"].get<std::string>();
  c.data_amplitude = pr["data"]["amplitude"].get<double>();
  c.data_modes = pr["data"]["modes"].get<int>();
  require(c.data_kind == "random" || c.data_kind == "zero",
          "problem.data.kind must be 'random' or 'zero'");
  require(std::isfinite(c.data_amplitude), "problem.data.amplitude must be finite");
  require(c.data_modes >= 1, "problem.data.modes must be >= 1");
  c.source_kind = pr["source"]["kind"].get<std::string>();
  c.source_amplitude = pr["source"]["amplitude"].get<double>();
  require(c.source_kind == "random" || c.source_kind == "zero",
          "problem.source.kind must be 'random' or 'zero'");
  require(std::isfinite(c.source_amplitude), "problem.source.amplitude must be finite");
  c.F = pr["nonlinearity"]["F"].get<std::string>();
  c.F2 = pr["nonlinearity"]["F2"].get<std::string>();
  c.L = pr["nonlinearity"]["L"].get<double>();
  make_nonlinearity(c.F, c.L);
  make_nonlinearity(c.F2, c.L, true);

  const Json& h = doc["hum"];
  c.hum.eps = h["eps"].get<double>();
  c.hum.cg_tol = h["cg_tol"].get<double>();
  c.hum.cg_max_iters = h["cg_max_iters"].get<int>();
  c.hum.scheme.theta = h["theta"].get<double>();
  c.hum.gradient_penalty = h["gradient_penalty"].get<bool>();
  c.hum.gate_tol = h["gate_tol"].get<double>();
  c.hum.kappa = c.weights.kappa;
  c.hum.validate();
  require(c.hum.scheme.theta >= 0.5 && c.hum.scheme.theta <= 1.0, "hum.theta must be in [0.5, 1]");
  require(finite_positive(c.hum.gate_tol), "hum.gate_tol must be positive");
  c.eps_list = numbers(h["eps_list"]);
  require(c.eps_list.size() >= 3, "hum.eps_list needs at least 3 values");
  for (double e : c.eps_list) require(finite_positive(e), "hum.eps_list entries must be positive");
  c.sweep = h["sweep"].get<bool>();
  c.energy = h["energy"].get<bool>();

  const Json& ca = doc["carleman"];
  c.estimate = ca["estimate"].get<std::string>();
  if (c.estimate != "all") parse_estimate(c.estimate);
  c.calibrate = ca["calibrate"].get<int>();
  c.test = ca["test"].get<int>();
  c.margin = ca["margin"].get<double>();
  c.carleman_amplitude = ca["amplitude"].get<double>();
  require(c.calibrate >= 10 && c.test >= 10, "carleman ensembles need at least 10 samples");
  require(c.margin >= 0.0 && std::isfinite(c.margin), "carleman.margin must be finite and >= 0");
  require(finite_positive(c.carleman_amplitude), "carleman.amplitude must be positive");

  const Json& pi = doc["picard"];
  c.picard.tol = pi["tol"].get<double>();
  c.picard.max_iters = pi["max_iters"].get<int>();
  c.picard.divergence_run = pi["divergence_run"].get<int>();
  c.picard.lambda_threshold = pi["lambda_threshold"].get<double>();
  c.picard.mu_threshold = pi["mu_threshold"].get<double>();
  require(finite_positive(c.picard.tol), "picard.tol must be positive");
  require(c.picard.max_iters >= 1 && c.picard.divergence_run >= 1,
          "picard.max_iters and picard.divergence_run must be >= 1");

  const Json& pb = doc["probe"];
  c.probe_lambdas = numbers(pb["lambdas"]);
  c.probe_mus = numbers(pb["mus"]);
  c.probe_pairs = pb["pairs"].get<int>();
  require(!c.probe_lambdas.empty() && !c.probe_mus.empty(), "probe grids must not be empty");
  for (double l : c.probe_lambdas)
    require(l >= c.weights.lambda_min, "probe.lambdas entries must be >= weights.lambda_min");
  for (double m : c.probe_mus)
    require(m >= c.weights.mu_min, "probe.mus entries must be >= weights.mu_min");
  require(c.probe_pairs >= 1, "probe.pairs must be >= 1");

  c.output_dir = doc["output"]["dir"].get<std::string>();
  c.svg = doc["output"]["svg"].get<bool>();
  require(!c.output_dir.empty(), "output.dir must not be empty");

  c.resolved_json = doc.dump(2);
  return c;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                             bool use_env) {
  if (path.empty()) return parse_config("{}", overrides, use_env);
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str(), overrides, use_env);
}

}  // namespace nullctl
