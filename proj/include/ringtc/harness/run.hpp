#pragma once

#include "ringtc/harness/experiments.hpp"

namespace ringtc::harness {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitCompute = 3 };

struct RunOutcome {
  Json summary;
  std::filesystem::path output_dir;
  std::vector<ManifestEntry> files;
};

/// Runs the configured experiment end to end: outputs, summary.json, then
/// manifest.json. Throws ConfigError or ComputeError.
inline RunOutcome run(const RunConfig& cfg) {
  const auto started = std::chrono::system_clock::now();
  const auto t0 = std::chrono::steady_clock::now();
  apply_cache_setting(cfg);
  OutputDir out(cfg.output_dir);
  Json summary;
  const auto& e = cfg.experiment;
  if (e == "ground") {
    summary = run_ground(cfg, out);
  } else if (e == "correlation") {
    summary = run_correlation(cfg, out);
  } else if (e == "sweep-tc") {
    summary = run_sweep_tc(cfg, out);
  } else if (e == "measure-fraction") {
    summary = run_measure_fraction(cfg, out);
  } else if (e == "sweep-td") {
    summary = run_sweep_td(cfg, out);
  } else if (e == "gpe") {
    summary = run_gpe(cfg, out);
  } else if (e == "clt") {
    summary = run_clt(cfg, out);
  } else if (e == "convergence") {
    summary = run_convergence(cfg, out);
  } else {
    throw ConfigError("config field 'experiment': unknown experiment '" + e + "'");
  }
  Json s = {{"experiment", e}, {"version", kVersion}};
  for (auto& [k, v] : summary.items()) s[k] = v;
  out.write("summary.json", s);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const Json manifest = make_manifest(cfg, out, started, wall);
  {
    std::ofstream m(out.root() / "manifest.json", std::ios::binary | std::ios::trunc);
    m << manifest.dump(2) << '\n';
    if (!m) throw ComputeError("cannot write manifest.json");
  }
  return {s, out.root(), out.entries()};
}

inline std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const MeasurementAtNode*>(&e)) return "MeasurementAtNode";
  if (dynamic_cast<const NonConvergence*>(&e)) return "NonConvergence";
  if (dynamic_cast<const BudgetExceeded*>(&e)) return "BudgetExceeded";
  if (dynamic_cast<const EmptyState*>(&e)) return "EmptyState";
  if (dynamic_cast<const InvalidWindow*>(&e)) return "InvalidWindow";
  if (dynamic_cast<const ContractViolation*>(&e)) return "ContractViolation";
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const ComputeError*>(&e)) return "ComputeError";
  return "InternalError";
}

/// {"error": {...}} document for a failed run.
inline Json error_json(const std::exception& e, int code) {
  return {{"error", {{"exit_code", code}, {"category", code == kExitConfig ? "config" : "compute"},
                     {"kind", error_kind(e)}, {"message", e.what()}}}};
}

inline int exit_code_for(const std::exception& e) {
  return dynamic_cast<const ConfigError*>(&e) ? kExitConfig : kExitCompute;
}

}  // namespace ringtc::harness
