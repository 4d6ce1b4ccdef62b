#pragma once

// Run configuration. The file format is JSON with // and /* */ comments
// allowed. Unknown keys are rejected so that typos fail loudly.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ringtc/measurement.hpp"

namespace ringtc::harness {

using Json = nlohmann::ordered_json;

inline const std::array<std::string, 8> kExperiments = {
    "ground", "correlation", "sweep-tc", "measure-fraction", "sweep-td", "gpe", "clt", "convergence"};

struct TimeGrid {
  double t_max = kRotationPeriod;
  double dt = kRotationPeriod / 40.0;
};

struct ConvergenceConfig {
  int max_modes = 15;
  double rel_tol = 1e-8;
  std::size_t max_dim = 4'000'000;
};

struct RunConfig {
  std::string experiment = "correlation";

  // Model. The coupling is fixed through g0 (N - 1) so that sweeps over N
  // stay at one mean-field point.
  double gN = -15.0;
  int N = 20;
  double alpha = 0.0;
  ModeWindow window{-2, 4};
  std::optional<int> momentum;  // sector of the initial ground state, default N
  std::vector<int> sectors;     // for `ground`, default {momentum}

  double x1 = 0.5;
  std::size_t grid_size = kDefaultGridSize;
  TimeGrid times{};
  std::vector<double> epsilons{0.2};

  std::uint64_t master_seed = 0;
  int seed_count = 1;
  std::vector<std::uint64_t> seeds;  // explicit; overrides master_seed/seed_count

  std::vector<int> sweep_N{10, 15, 20, 25, 30};
  int sweep_workers = 0;  // 0: hardware concurrency

  std::string output_dir = "ringtc_out";
  PropagatorConfig propagator = [] {
    PropagatorConfig p;
    p.method = PropagatorMethod::kKrylov;
    return p;
  }();
  bool cache = true;

  double eigen_tol = 1e-9;
  double gpe_tol = 1e-13;
  std::optional<double> stop_contrast;  // correlation runs stop once C drops below
  double stop_width_ratio = 0.6;        // sweep-td stops once CM std exceeds this times sigma
  ConvergenceConfig convergence{};

  ModelParams params(int particles) const {
    return ModelParams::from_gN(gN, particles, window, alpha);
  }
  ModelParams params() const { return params(N); }
  int sector(int particles) const { return momentum ? *momentum : particles; }

  /// Seeds used by stochastic experiments, in worker order.
  std::vector<std::uint64_t> resolved_seeds() const {
    if (!seeds.empty()) return seeds;
    std::vector<std::uint64_t> s;
    for (int i = 0; i < seed_count; ++i) s.push_back(stream_seed(master_seed, static_cast<std::uint64_t>(i)));
    return s;
  }

  int workers() const {
    if (sweep_workers > 0) return sweep_workers;
    return std::max(1u, std::thread::hardware_concurrency());
  }
};

inline std::string method_name(PropagatorMethod m) {
  switch (m) {
    case PropagatorMethod::kAuto: return "auto";
    case PropagatorMethod::kEigenbasis: return "eigenbasis";
    case PropagatorMethod::kKrylov: return "krylov";
  }
  return "auto";
}

inline Json to_json(const RunConfig& c) {
  Json j;
  j["experiment"] = c.experiment;
  j["params"] = {{"gN", c.gN}, {"N", c.N}, {"alpha", c.alpha}, {"window", {c.window.l_min, c.window.l_max}}};
  j["momentum"] = c.momentum ? Json(*c.momentum) : Json(nullptr);
  j["sectors"] = c.sectors;
  j["x1"] = c.x1;
  j["grid_size"] = c.grid_size;
  j["times"] = {{"t_max", c.times.t_max}, {"dt", c.times.dt}};
  j["epsilon"] = c.epsilons;
  j["master_seed"] = c.master_seed;
  j["seed_count"] = c.seed_count;
  j["seeds"] = c.seeds;
  j["sweep"] = {{"N", c.sweep_N}, {"workers", c.sweep_workers}};
  j["output_dir"] = c.output_dir;
  j["propagator"] = {{"method", method_name(c.propagator.method)},
                     {"krylov_dim", c.propagator.krylov_dim},
                     {"step", c.propagator.step},
                     {"tol", c.propagator.tol},
                     {"eigen_max_dim", c.propagator.eigen_max_dim},
                     {"sparse_budget", c.propagator.sparse_budget},
                     {"workers", c.propagator.workers}};
  j["cache"] = c.cache;
  j["eigen_tol"] = c.eigen_tol;
  j["gpe_tol"] = c.gpe_tol;
  j["stop_contrast"] = c.stop_contrast ? Json(*c.stop_contrast) : Json(nullptr);
  j["stop_width_ratio"] = c.stop_width_ratio;
  j["convergence"] = {{"max_modes", c.convergence.max_modes},
                      {"rel_tol", c.convergence.rel_tol},
                      {"max_dim", c.convergence.max_dim}};
  return j;
}

namespace detail {

inline std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// Best-effort source line of a dotted field path: each component is searched
// as a quoted key after the previous one.
inline std::optional<std::size_t> field_line(const std::string& text, const std::string& path) {
  std::size_t pos = 0;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    const auto bracket = part.find('[');
    if (bracket != std::string::npos) part = part.substr(0, bracket);
    const auto found = text.find('"' + part + '"', pos);
    if (found == std::string::npos) return std::nullopt;
    pos = found + 1;
  }
  return line_col(text, pos).first;
}

class Reader {
 public:
  explicit Reader(std::string text) : text_(std::move(text)) {}

  [[noreturn]] void fail(const std::string& path, const std::string& what) const {
    std::string msg = "config field '" + path + "': " + what;
    if (auto line = field_line(text_, path)) msg += " (line " + std::to_string(*line) + ")";
    throw ConfigError(msg);
  }

  void check_keys(const Json& obj, const std::string& path, std::initializer_list<const char*> allowed) const {
    if (!obj.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
    for (const auto& [k, v] : obj.items()) {
      const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; });
      if (!ok) fail(path.empty() ? k : path + "." + k, "unknown key");
    }
  }

  double number(const Json& v, const std::string& path) const {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
  }
  std::int64_t integer(const Json& v, const std::string& path) const {
    if (!v.is_number_integer()) fail(path, "expected an integer");
    return v.get<std::int64_t>();
  }
  std::uint64_t unsigned_integer(const Json& v, const std::string& path) const {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    fail(path, "expected a non-negative integer");
  }
  bool boolean(const Json& v, const std::string& path) const {
    if (!v.is_boolean()) fail(path, "expected true or false");
    return v.get<bool>();
  }
  std::string string(const Json& v, const std::string& path) const {
    if (!v.is_string()) fail(path, "expected a string");
    return v.get<std::string>();
  }
  const Json& array(const Json& v, const std::string& path) const {
    if (!v.is_array()) fail(path, "expected an array");
    return v;
  }

 private:
  std::string text_;
};

}  // namespace detail

/// Parses and validates a configuration over the defaults. `text` is the raw
/// file content, used for error line numbers.
inline RunConfig parse_config(const std::string& text, RunConfig c = {}) {
  Json root;
  try {
    root = Json::parse(text, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    // The parser message already carries the line and column.
    throw ConfigError(std::string("config ") + e.what());
  }
  detail::Reader r(text);
  r.check_keys(root, "",
               {"experiment", "params", "momentum", "sectors", "x1", "grid_size", "times", "epsilon",
                "master_seed", "seed_count", "seeds", "sweep", "output_dir", "propagator", "cache",
                "eigen_tol", "gpe_tol", "stop_contrast", "stop_width_ratio", "convergence"});

  if (root.contains("experiment")) c.experiment = r.string(root["experiment"], "experiment");
  if (root.contains("params")) {
    const auto& p = root["params"];
    r.check_keys(p, "params", {"gN", "N", "alpha", "window"});
    if (p.contains("gN")) c.gN = r.number(p["gN"], "params.gN");
    if (p.contains("N")) c.N = static_cast<int>(r.integer(p["N"], "params.N"));
    if (p.contains("alpha")) c.alpha = r.number(p["alpha"], "params.alpha");
    if (p.contains("window")) {
      const auto& w = r.array(p["window"], "params.window");
      if (w.size() != 2) r.fail("params.window", "expected [l_min, l_max]");
      c.window = {static_cast<int>(r.integer(w[0], "params.window")),
                  static_cast<int>(r.integer(w[1], "params.window"))};
    }
  }
  if (root.contains("momentum")) {
    c.momentum = root["momentum"].is_null() ? std::nullopt
                                            : std::optional<int>(static_cast<int>(r.integer(root["momentum"], "momentum")));
  }
  if (root.contains("sectors")) {
    c.sectors.clear();
    for (const auto& v : r.array(root["sectors"], "sectors")) c.sectors.push_back(static_cast<int>(r.integer(v, "sectors")));
  }
  if (root.contains("x1")) c.x1 = r.number(root["x1"], "x1");
  if (root.contains("grid_size")) c.grid_size = static_cast<std::size_t>(r.unsigned_integer(root["grid_size"], "grid_size"));
  if (root.contains("times")) {
    const auto& t = root["times"];
    r.check_keys(t, "times", {"t_max", "dt", "unit"});
    double scale = 1.0;
    if (t.contains("unit")) {
      const auto u = r.string(t["unit"], "times.unit");
      if (u == "period") {
        scale = kRotationPeriod;
      } else if (u != "absolute") {
        r.fail("times.unit", "expected \"absolute\" or \"period\"");
      }
    }
    if (t.contains("t_max")) c.times.t_max = scale * r.number(t["t_max"], "times.t_max");
    if (t.contains("dt")) c.times.dt = scale * r.number(t["dt"], "times.dt");
  }
  if (root.contains("epsilon")) {
    c.epsilons.clear();
    const auto& e = root["epsilon"];
    if (e.is_array()) {
      for (const auto& v : e) c.epsilons.push_back(r.number(v, "epsilon"));
    } else {
      c.epsilons.push_back(r.number(e, "epsilon"));
    }
  }
  if (root.contains("master_seed")) c.master_seed = r.unsigned_integer(root["master_seed"], "master_seed");
  if (root.contains("seed_count")) c.seed_count = static_cast<int>(r.integer(root["seed_count"], "seed_count"));
  if (root.contains("seeds")) {
    c.seeds.clear();
    for (const auto& v : r.array(root["seeds"], "seeds")) c.seeds.push_back(r.unsigned_integer(v, "seeds"));
  }
  if (root.contains("sweep")) {
    const auto& s = root["sweep"];
    r.check_keys(s, "sweep", {"N", "workers"});
    if (s.contains("N")) {
      c.sweep_N.clear();
      for (const auto& v : r.array(s["N"], "sweep.N")) c.sweep_N.push_back(static_cast<int>(r.integer(v, "sweep.N")));
    }
    if (s.contains("workers")) c.sweep_workers = static_cast<int>(r.integer(s["workers"], "sweep.workers"));
  }
  if (root.contains("output_dir")) c.output_dir = r.string(root["output_dir"], "output_dir");
  if (root.contains("propagator")) {
    const auto& p = root["propagator"];
    r.check_keys(p, "propagator",
                 {"method", "krylov_dim", "step", "tol", "eigen_max_dim", "sparse_budget", "workers"});
    if (p.contains("method")) {
      const auto m = r.string(p["method"], "propagator.method");
      if (m == "auto") {
        c.propagator.method = PropagatorMethod::kAuto;
      } else if (m == "eigenbasis") {
        c.propagator.method = PropagatorMethod::kEigenbasis;
      } else if (m == "krylov") {
        c.propagator.method = PropagatorMethod::kKrylov;
      } else {
        r.fail("propagator.method", "expected \"auto\", \"eigenbasis\" or \"krylov\"");
      }
    }
    if (p.contains("krylov_dim")) c.propagator.krylov_dim = static_cast<int>(r.integer(p["krylov_dim"], "propagator.krylov_dim"));
    if (p.contains("step")) c.propagator.step = r.number(p["step"], "propagator.step");
    if (p.contains("tol")) c.propagator.tol = r.number(p["tol"], "propagator.tol");
    if (p.contains("eigen_max_dim")) c.propagator.eigen_max_dim = r.unsigned_integer(p["eigen_max_dim"], "propagator.eigen_max_dim");
    if (p.contains("sparse_budget")) c.propagator.sparse_budget = r.unsigned_integer(p["sparse_budget"], "propagator.sparse_budget");
    if (p.contains("workers")) c.propagator.workers = static_cast<int>(r.integer(p["workers"], "propagator.workers"));
  }
  if (root.contains("cache")) c.cache = r.boolean(root["cache"], "cache");
  if (root.contains("eigen_tol")) c.eigen_tol = r.number(root["eigen_tol"], "eigen_tol");
  if (root.contains("gpe_tol")) c.gpe_tol = r.number(root["gpe_tol"], "gpe_tol");
  if (root.contains("stop_contrast")) {
    c.stop_contrast = root["stop_contrast"].is_null()
                          ? std::nullopt
                          : std::optional<double>(r.number(root["stop_contrast"], "stop_contrast"));
  }
  if (root.contains("stop_width_ratio")) c.stop_width_ratio = r.number(root["stop_width_ratio"], "stop_width_ratio");
  if (root.contains("convergence")) {
    const auto& v = root["convergence"];
    r.check_keys(v, "convergence", {"max_modes", "rel_tol", "max_dim"});
    if (v.contains("max_modes")) c.convergence.max_modes = static_cast<int>(r.integer(v["max_modes"], "convergence.max_modes"));
    if (v.contains("rel_tol")) c.convergence.rel_tol = r.number(v["rel_tol"], "convergence.rel_tol");
    if (v.contains("max_dim")) c.convergence.max_dim = r.unsigned_integer(v["max_dim"], "convergence.max_dim");
  }

  // Semantic checks, all before any compute.
  auto bad = [&](const std::string& path, const std::string& what) { r.fail(path, what); };
  if (std::find(kExperiments.begin(), kExperiments.end(), c.experiment) == kExperiments.end()) {
    bad("experiment", "unknown experiment '" + c.experiment + "'");
  }
  if (c.gN > 0) bad("params.gN", "must be <= 0 (attractive or free gas)");
  if (c.N < 2 || c.N > kMaxParticles) bad("params.N", "must lie in [2, " + std::to_string(kMaxParticles) + "]");
  if (c.window.l_min > c.window.l_max || c.window.size() > kMaxModes) {
    bad("params.window", "needs l_min <= l_max and at most " + std::to_string(kMaxModes) + " modes");
  }
  if (!(c.x1 >= 0.0 && c.x1 < 1.0)) bad("x1", "must lie in [0, 1)");
  if (c.grid_size < 8) bad("grid_size", "must be >= 8");
  if (!(c.times.dt > 0.0) || c.times.t_max < 0.0) bad("times", "needs dt > 0 and t_max >= 0");
  if (c.epsilons.empty()) bad("epsilon", "must not be empty");
  for (double e : c.epsilons) {
    if (!(e > 0.0 && e < 1.0)) bad("epsilon", "values must lie in (0, 1)");
  }
  if (c.seed_count < 1) bad("seed_count", "must be >= 1");
  if (c.sweep_N.empty()) bad("sweep.N", "must not be empty");
  for (int n : c.sweep_N) {
    if (n < 2 || n > kMaxParticles) bad("sweep.N", "values must lie in [2, " + std::to_string(kMaxParticles) + "]");
  }
  if (c.sweep_workers < 0) bad("sweep.workers", "must be >= 0");
  if (c.output_dir.empty()) bad("output_dir", "must not be empty");
  try {
    c.propagator.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()));
  }
  if (!(c.eigen_tol > 0)) bad("eigen_tol", "must be > 0");
  if (!(c.gpe_tol > 0)) bad("gpe_tol", "must be > 0");
  if (c.stop_contrast && !(*c.stop_contrast > 0 && *c.stop_contrast < 1)) bad("stop_contrast", "must lie in (0, 1)");
  if (!(c.stop_width_ratio > 0)) bad("stop_width_ratio", "must be > 0");
  if (c.convergence.max_modes < c.window.size() || c.convergence.max_modes > kMaxModes) {
    bad("convergence.max_modes", "must lie in [window size, " + std::to_string(kMaxModes) + "]");
  }
  if (!(c.convergence.rel_tol > 0)) bad("convergence.rel_tol", "must be > 0");
  return c;
}

inline RunConfig load_config(const std::string& path, RunConfig defaults = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(defaults));
}

}  // namespace ringtc::harness
