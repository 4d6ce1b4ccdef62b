#pragma once

#include <cstdlib>
#include <map>
#include <set>

#include "ringtc/harness/output.hpp"
#include "ringtc/meanfield.hpp"
#include "ringtc/observables.hpp"

namespace ringtc::harness {

// ---------------------------------------------------------------------------
// Caching

/// Cache location: $RINGTC_CACHE_DIR, else $XDG_CACHE_HOME/ringtc, else
/// $HOME/.cache/ringtc, else ./.ringtc_cache.
inline std::filesystem::path default_cache_dir() {
  if (auto env = cache_dir_from_env()) return *env;
  if (const char* x = std::getenv("XDG_CACHE_HOME"); x && *x) return std::filesystem::path(x) / "ringtc";
  if (const char* h = std::getenv("HOME"); h && *h) return std::filesystem::path(h) / ".cache" / "ringtc";
  return ".ringtc_cache";
}

inline std::optional<std::filesystem::path> cache_dir(const RunConfig& cfg) {
  if (!cfg.cache) return std::nullopt;
  return default_cache_dir();
}

/// Points the process-wide basis registry at the run's cache setting.
inline void apply_cache_setting(const RunConfig& cfg) {
  BasisRegistry::instance().set_disk_dir(cache_dir(cfg));
}

inline EigenResult ground_state(const RunConfig& cfg, int particles) {
  const auto p = cfg.params(particles);
  const int k = cfg.sector(particles);
  log_info("ground state N=" + std::to_string(particles) + " K=" + std::to_string(k) + " gN=" + fmt(cfg.gN));
  return cached_ground_of_sector(p, k, cfg.eigen_tol, cache_dir(cfg));
}

inline Json params_json(const RunConfig& cfg, int particles) {
  const auto p = cfg.params(particles);
  return {{"N", particles},
          {"gN", cfg.gN},
          {"g0", p.g0},
          {"alpha", p.alpha},
          {"window", {p.window.l_min, p.window.l_max}},
          {"momentum", cfg.sector(particles)}};
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline std::string suffix_N(int n) { return "_N" + std::to_string(n); }

// ---------------------------------------------------------------------------
// ground

inline Json run_ground(const RunConfig& cfg, OutputDir& out) {
  std::vector<int> sectors = cfg.sectors;
  if (sectors.empty()) sectors.push_back(cfg.sector(cfg.N));
  Csv csv({"K", "dim", "energy", "residual", "iterations"});
  Json list = Json::array();
  for (int k : sectors) {
    RunConfig c = cfg;
    c.momentum = k;
    const auto e = ground_state(c, cfg.N);
    const std::size_t dim = e.vector.total_dim();
    csv.row(k, dim, e.energy, e.residual, e.iterations);
    list.push_back({{"K", k}, {"dim", dim}, {"energy", e.energy}, {"residual", e.residual}});
  }
  out.write("ground.csv", csv);
  return {{"params", params_json(cfg, cfg.N)}, {"sectors", list}};
}

// ---------------------------------------------------------------------------
// correlation and sweep-tc

struct CorrelationRun {
  int N = 0;
  double ground_energy = 0.0;
  CorrelationSeries series;
  ContrastTrack contrast;
  PeakTrack peaks;
};

inline CorrelationRun correlation_point(const RunConfig& cfg, int particles) {
  CorrelationRun r;
  r.N = particles;
  const auto g = ground_state(cfg, particles);
  r.ground_energy = g.energy;
  CorrelationOptions opt;
  opt.grid_size = cfg.grid_size;
  opt.propagator = cfg.propagator;
  if (cfg.stop_contrast) {
    const double level = *cfg.stop_contrast;
    opt.stop = [level](double, const std::vector<double>& s) { return contrast(s) < level; };
  }
  const auto times = uniform_times(cfg.times.t_max, cfg.times.dt);
  r.series = correlation_evolution(g.vector, cfg.params(particles), cfg.x1, times, opt);
  r.contrast = contrast_track(r.series);
  r.peaks = peak_track(r.series);
  return r;
}

/// Circular distance between the peak at t = 0 and at the sample closest to
/// one rotation period, if the series reaches it.
inline std::optional<double> period_return_offset(const PeakTrack& p) {
  if (p.times.empty() || p.times.back() + 1e-12 < kRotationPeriod) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.times.size(); ++i) {
    if (std::abs(p.times[i] - kRotationPeriod) < std::abs(p.times[best] - kRotationPeriod)) best = i;
  }
  double d = p.positions[best] - p.positions.front();
  d -= std::round(d);
  return std::abs(d);
}

inline void write_correlation_files(const CorrelationRun& r, OutputDir& out, const std::string& sfx) {
  Csv rho({"t", "x", "rho2"});
  for (std::size_t i = 0; i < r.series.times.size(); ++i) {
    for (std::size_t j = 0; j < r.series.grid.size(); ++j) {
      rho.row(r.series.times[i], r.series.grid[j], r.series.rho2[i][j]);
    }
  }
  out.write("rho2" + sfx + ".csv", rho);
  Csv c({"t", "C"});
  for (std::size_t i = 0; i < r.contrast.times.size(); ++i) c.row(r.contrast.times[i], r.contrast.C[i]);
  out.write("contrast" + sfx + ".csv", c);
  Csv p({"t", "x_peak", "x_unwrapped"});
  for (std::size_t i = 0; i < r.peaks.times.size(); ++i) {
    p.row(r.peaks.times[i], r.peaks.positions[i], r.peaks.unwrapped[i]);
  }
  out.write("peaks" + sfx + ".csv", p);
}

inline Json correlation_summary(const RunConfig& cfg, const CorrelationRun& r) {
  const auto v = r.peaks.velocity;
  return {{"params", params_json(cfg, r.N)},
          {"x1", cfg.x1},
          {"ground_energy", r.ground_energy},
          {"samples", r.series.times.size()},
          {"t_c", optional_json(r.contrast.t_c)},
          {"t_c_over_T", optional_json(r.contrast.t_c ? std::optional(*r.contrast.t_c / kRotationPeriod) : std::nullopt)},
          {"velocity", optional_json(v)},
          {"velocity_over_2pi", optional_json(v ? std::optional(*v / kTwoPi) : std::nullopt)},
          {"period_return_offset", optional_json(period_return_offset(r.peaks))}};
}

inline Json run_correlation(const RunConfig& cfg, OutputDir& out) {
  const auto r = correlation_point(cfg, cfg.N);
  write_correlation_files(r, out, "");
  return correlation_summary(cfg, r);
}

inline Json run_sweep_tc(const RunConfig& cfg, OutputDir& out) {
  std::vector<CorrelationRun> runs(cfg.sweep_N.size());
  ringtc::detail::parallel_for(runs.size(), cfg.workers(),
                               [&](std::size_t i) { runs[i] = correlation_point(cfg, cfg.sweep_N[i]); });
  Csv tc({"N", "t_c", "t_c_over_T", "samples"});
  std::vector<double> xs;
  std::vector<double> ys;
  Json points = Json::array();
  for (const auto& r : runs) {
    Csv c({"t", "C"});
    for (std::size_t i = 0; i < r.contrast.times.size(); ++i) c.row(r.contrast.times[i], r.contrast.C[i]);
    out.write("contrast" + suffix_N(r.N) + ".csv", c);
    const auto t = r.contrast.t_c;
    tc.row(r.N, t, t ? std::optional(*t / kRotationPeriod) : std::nullopt, r.series.times.size());
    if (t) {
      xs.push_back(r.N);
      ys.push_back(*t);
    }
    points.push_back(correlation_summary(cfg, r));
  }
  out.write("tc_vs_N.csv", tc);
  Json fit = nullptr;
  if (xs.size() >= 2) {
    const auto f = linear_fit(xs, ys);
    fit = {{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}};
  }
  return {{"points", points}, {"linear_fit", fit}, {"missing_t_c", runs.size() - xs.size()}};
}

// ---------------------------------------------------------------------------
// measure-fraction

inline Json record_json(const MeasurementRecord& r) {
  return {{"seed", r.seed}, {"epsilon", r.epsilon}, {"positions", r.positions}, {"norms", r.norms}};
}

struct FractionPoint {
  int N = 0;
  double epsilon = 0.0;
  int detections = 0;
  std::vector<double> fractions;  // one per seed
  double mean() const {
    double s = 0.0;
    for (double f : fractions) s += f;
    return fractions.empty() ? 0.0 : s / static_cast<double>(fractions.size());
  }
};

struct FractionSweep {
  std::vector<FractionPoint> points;  // grouped by N, ascending epsilon, epsilon 0 first
  std::vector<MeasurementRecord> records;
  std::vector<int> record_N;
};

/// Condensate fraction after round(eps N) detections for every eps. One
/// sequential run per seed at the largest eps; smaller eps read the state
/// after the matching number of detections, which is the same random
/// sequence a shorter run with that seed would draw.
inline FractionSweep fraction_sweep(const RunConfig& cfg) {
  std::vector<double> eps = cfg.epsilons;
  std::sort(eps.begin(), eps.end());
  eps.erase(std::unique(eps.begin(), eps.end()), eps.end());
  const auto seeds = cfg.resolved_seeds();
  FractionSweep out;
  for (int n : cfg.sweep_N) {
    const auto g = ground_state(cfg, n);
    const double f0 = condensate_fraction(obdm(g.vector));
    std::map<int, std::size_t> slot;  // detections -> index into out.points
    const std::size_t base = out.points.size();
    out.points.push_back({n, 0.0, 0, std::vector<double>(seeds.size(), f0)});
    for (double e : eps) {
      const int d = static_cast<int>(std::lround(e * n));
      if (d < 1) throw ConfigError("epsilon " + fmt(e) + " gives no detections at N=" + std::to_string(n));
      slot.emplace(d, out.points.size());
      out.points.push_back({n, e, d, std::vector<double>(seeds.size(), 0.0)});
    }
    std::vector<MeasurementRecord> recs(seeds.size());
    ringtc::detail::parallel_for(seeds.size(), cfg.workers(), [&](std::size_t s) {
      SequentialOptions opt;
      opt.grid_size = cfg.grid_size;
      std::vector<std::pair<int, double>> seen;
      opt.on_collapse = [&](int j, const ManyBodyState& st) {
        if (slot.count(j)) seen.emplace_back(j, condensate_fraction(obdm(st)));
      };
      auto r = sequential_measure(g.vector, eps.back(), seeds[s], opt);
      for (auto [j, f] : seen) {
        for (std::size_t p = base + 1; p < out.points.size(); ++p) {
          if (out.points[p].detections == j) out.points[p].fractions[s] = f;
        }
      }
      recs[s] = std::move(r.record);
    });
    log_info("measure-fraction N=" + std::to_string(n) + " done");
    for (auto& r : recs) {
      out.records.push_back(std::move(r));
      out.record_N.push_back(n);
    }
  }
  return out;
}

inline Json run_measure_fraction(const RunConfig& cfg, OutputDir& out) {
  const auto sw = fraction_sweep(cfg);
  const auto seeds = cfg.resolved_seeds();
  Csv csv({"N", "epsilon", "detections", "seed", "fraction"});
  for (const auto& p : sw.points) {
    for (std::size_t s = 0; s < seeds.size(); ++s) csv.row(p.N, p.epsilon, p.detections, seeds[s], p.fractions[s]);
  }
  out.write("fraction.csv", csv);
  Json recs = Json::array();
  for (std::size_t i = 0; i < sw.records.size(); ++i) {
    Json j = record_json(sw.records[i]);
    j["N"] = sw.record_N[i];
    recs.push_back(j);
  }
  out.write("records.json", recs);

  Json byN = Json::array();
  for (int n : cfg.sweep_N) {
    Json pts = Json::array();
    bool increasing = true;
    double prev = -1.0;
    for (const auto& p : sw.points) {
      if (p.N != n) continue;
      pts.push_back({{"epsilon", p.epsilon}, {"detections", p.detections}, {"mean_fraction", p.mean()}});
      if (p.epsilon > 0 && prev >= 0 && !(p.mean() > prev)) increasing = false;
      if (p.epsilon > 0) prev = p.mean();
    }
    byN.push_back({{"N", n}, {"points", pts}, {"strictly_increasing", increasing}});
  }
  return {{"params", params_json(cfg, cfg.N)}, {"seeds", seeds.size()}, {"by_N", byN}};
}

// ---------------------------------------------------------------------------
// sweep-td

struct DeformationRun {
  int N = 0;
  std::uint64_t seed = 0;
  MeasurementRecord record;
  DeformationResult result;
};

/// Sequential measurement of eps N particles followed by free evolution of
/// the remaining state; the CM width is tracked until it passes
/// stop_width_ratio * sigma or t_max.
inline DeformationRun deformation_point(const RunConfig& cfg, const EigenResult& g, int particles,
                                        double sigma2, std::uint64_t seed) {
  DeformationRun d;
  d.N = particles;
  d.seed = seed;
  SequentialOptions opt;
  opt.grid_size = cfg.grid_size;
  auto m = sequential_measure(g.vector, cfg.epsilons.front(), seed, opt);
  d.record = m.record;
  const auto q = cfg.params(particles).with_particles(m.state.particles());
  Evolution ev(std::move(m.state), q, cfg.propagator);
  const auto grid = ring_grid(cfg.grid_size);
  std::vector<double> ts;
  std::vector<std::vector<double>> slices;
  const double stop = cfg.stop_width_ratio * std::sqrt(sigma2);
  for (double t : uniform_times(cfg.times.t_max, cfg.times.dt)) {
    auto s = density_from_obdm(obdm(ev.advance_to(t)), grid);
    normalize_slice(s);
    ts.push_back(t);
    slices.push_back(std::move(s));
    if (cm_width_proxy(slices.back(), sigma2) > stop) break;
  }
  d.result = deformation_time(ts, slices, sigma2);
  return d;
}

struct DeformationSweep {
  double sigma2 = 0.0;
  std::vector<DeformationRun> runs;  // N-major, seed-minor
  struct PerN {
    int N = 0;
    std::optional<double> mean_tD;
    std::size_t valid = 0;
    CltPrediction clt;
  };
  std::vector<PerN> per_N;
  std::optional<LinearFit> power_law;
};

inline DeformationSweep deformation_sweep(const RunConfig& cfg) {
  DeformationSweep out;
  out.sigma2 = gpe_ground(cfg.gN, cfg.grid_size, cfg.gpe_tol).sigma2;
  const auto seeds = cfg.resolved_seeds();
  const double eps = cfg.epsilons.front();
  std::vector<double> xs;
  std::vector<double> ys;
  for (int n : cfg.sweep_N) {
    const auto g = ground_state(cfg, n);
    std::vector<DeformationRun> runs(seeds.size());
    ringtc::detail::parallel_for(seeds.size(), cfg.workers(),
                                 [&](std::size_t s) { runs[s] = deformation_point(cfg, g, n, out.sigma2, seeds[s]); });
    DeformationSweep::PerN p;
    p.N = n;
    p.clt = clt_deformation_time(n, eps, out.sigma2);
    double sum = 0.0;
    for (const auto& r : runs) {
      if (r.result.t_D) {
        sum += *r.result.t_D;
        ++p.valid;
      }
    }
    if (p.valid > 0) {
      p.mean_tD = sum / static_cast<double>(p.valid);
      xs.push_back(n);
      ys.push_back(*p.mean_tD);
    }
    log_info("sweep-td N=" + std::to_string(n) + " mean t_D=" + (p.mean_tD ? fmt(*p.mean_tD) : "absent"));
    out.per_N.push_back(p);
    for (auto& r : runs) out.runs.push_back(std::move(r));
  }
  bool positive = std::all_of(ys.begin(), ys.end(), [](double y) { return y > 0; });
  if (xs.size() >= 2 && positive) out.power_law = power_law_fit(xs, ys);
  return out;
}

inline Json run_sweep_td(const RunConfig& cfg, OutputDir& out) {
  const auto sw = deformation_sweep(cfg);
  const double sigma = std::sqrt(sw.sigma2);
  Csv width({"N", "seed", "t", "cm_std", "cm_std_over_sigma"});
  Csv td({"N", "seed", "t_D", "initial_cm_std_over_sigma"});
  Json recs = Json::array();
  for (const auto& r : sw.runs) {
    for (std::size_t i = 0; i < r.result.times.size(); ++i) {
      width.row(r.N, r.seed, r.result.times[i], r.result.cm_std[i], r.result.cm_std[i] / sigma);
    }
    td.row(r.N, r.seed, r.result.t_D, r.result.cm_std.front() / sigma);
    Json j = record_json(r.record);
    j["N"] = r.N;
    recs.push_back(j);
  }
  out.write("cmwidth.csv", width);
  out.write("td.csv", td);
  out.write("records.json", recs);
  Csv byN({"N", "mean_t_D", "valid_seeds", "clt_t_D", "ratio_to_clt"});
  Json pts = Json::array();
  for (const auto& p : sw.per_N) {
    const auto ratio = p.mean_tD ? std::optional(*p.mean_tD / p.clt.tD) : std::nullopt;
    byN.row(p.N, p.mean_tD, p.valid, p.clt.tD, ratio);
    pts.push_back({{"N", p.N},
                   {"mean_t_D", optional_json(p.mean_tD)},
                   {"valid_seeds", p.valid},
                   {"clt_t_D", p.clt.tD},
                   {"ratio_to_clt", optional_json(ratio)}});
  }
  out.write("td_vs_N.csv", byN);
  Json fit = nullptr;
  if (sw.power_law) fit = {{"exponent", sw.power_law->slope}, {"log_prefactor", sw.power_law->intercept}, {"r2", sw.power_law->r2}};
  return {{"params", params_json(cfg, cfg.N)},
          {"epsilon", cfg.epsilons.front()},
          {"sigma2_mf", sw.sigma2},
          {"points", pts},
          {"power_law_fit", fit}};
}

// ---------------------------------------------------------------------------
// gpe and clt

inline Json run_gpe(const RunConfig& cfg, OutputDir& out) {
  const auto p = gpe_ground(cfg.gN, cfg.grid_size, cfg.gpe_tol);
  std::ostringstream os;
  write_profile_csv(os, p);
  out.write("profile.csv", os.str());
  return {{"gN", p.gN},
          {"grid_size", p.grid.size()},
          {"mu", p.mu},
          {"energy", p.energy},
          {"sigma2", p.sigma2},
          {"contrast", profile_contrast(p.density())},
          {"residual", p.residual},
          {"iterations", p.iterations}};
}

inline Json run_clt(const RunConfig& cfg, OutputDir& out) {
  const double s2 = gpe_ground(cfg.gN, cfg.grid_size, cfg.gpe_tol).sigma2;
  Csv csv({"N", "epsilon", "M", "sigma2", "v0", "t_D", "t_D_over_T"});
  Json pts = Json::array();
  for (int n : cfg.sweep_N) {
    for (double e : cfg.epsilons) {
      const auto c = clt_deformation_time(n, e, s2);
      const double m = n * (1.0 - e);
      csv.row(n, e, m, s2, c.v0, c.tD, c.tD / kRotationPeriod);
      pts.push_back({{"N", n}, {"epsilon", e}, {"t_D", c.tD}});
    }
  }
  out.write("clt.csv", csv);
  return {{"gN", cfg.gN}, {"sigma2_mf", s2}, {"points", pts}};
}

// ---------------------------------------------------------------------------
// convergence

/// Number of occupations of `particles` bosons in the window with total
/// momentum index `momentum`, by dynamic programming over modes.
inline std::size_t sector_dimension(int particles, int momentum, const ModeWindow& w) {
  // count[n][p - pmin] for partial sums over the modes processed so far.
  const int pmin = particles * std::min(0, w.l_min);
  const int pmax = particles * std::max(0, w.l_max);
  const int span = pmax - pmin + 1;
  std::vector<std::vector<double>> count(particles + 1, std::vector<double>(span, 0.0));
  count[0][-pmin] = 1.0;
  for (int l = w.l_min; l <= w.l_max; ++l) {
    auto next = count;
    for (int n = 0; n <= particles; ++n) {
      for (int p = 0; p < span; ++p) {
        if (count[n][p] == 0.0) continue;
        for (int k = 1; n + k <= particles; ++k) {
          const int q = p + k * l;
          if (q < 0 || q >= span) break;
          next[n + k][q] += count[n][p];
        }
      }
    }
    count = std::move(next);
  }
  const int idx = momentum - pmin;
  if (idx < 0 || idx >= span) return 0;
  return static_cast<std::size_t>(count[particles][idx]);
}

struct ConvergenceStep {
  ModeWindow window;
  std::size_t dim = 0;
  double energy = 0.0;
  std::optional<double> rel_change;  // against the previous window
};

struct ConvergenceReport {
  std::vector<ConvergenceStep> steps;
  bool converged = false;
  std::optional<ModeWindow> converged_window;  // smallest window that agrees with its successor
  std::string reason;
};

/// Widens the window by one mode on each side until the sector ground
/// energy changes by less than rel_tol.
inline ConvergenceReport validate_convergence(const RunConfig& cfg) {
  ConvergenceReport rep;
  ModeWindow w = cfg.window;
  const int k = cfg.sector(cfg.N);
  while (true) {
    const std::size_t dim = sector_dimension(cfg.N, k, w);
    if (dim > cfg.convergence.max_dim) {
      rep.reason = "window " + w.to_string() + " has dimension " + std::to_string(dim) +
                   " above convergence.max_dim";
      break;
    }
    RunConfig c = cfg;
    c.window = w;
    const auto e = ground_state(c, cfg.N);
    ConvergenceStep s{w, dim, e.energy, std::nullopt};
    if (!rep.steps.empty()) {
      const double prev = rep.steps.back().energy;
      s.rel_change = std::abs(e.energy - prev) / std::max(std::abs(prev), 1e-300);
    }
    rep.steps.push_back(s);
    if (s.rel_change && *s.rel_change < cfg.convergence.rel_tol) {
      rep.converged = true;
      rep.converged_window = rep.steps[rep.steps.size() - 2].window;
      rep.reason = "relative change below " + fmt(cfg.convergence.rel_tol);
      break;
    }
    if (w.size() + 2 > cfg.convergence.max_modes) {
      rep.reason = "window would exceed " + std::to_string(cfg.convergence.max_modes) + " modes";
      break;
    }
    w = {w.l_min - 1, w.l_max + 1};
  }
  return rep;
}

inline Json run_convergence(const RunConfig& cfg, OutputDir& out) {
  const auto rep = validate_convergence(cfg);
  Csv csv({"l_min", "l_max", "modes", "dim", "energy", "rel_change"});
  Json steps = Json::array();
  for (const auto& s : rep.steps) {
    csv.row(s.window.l_min, s.window.l_max, s.window.size(), s.dim, s.energy, s.rel_change);
    steps.push_back({{"window", {s.window.l_min, s.window.l_max}},
                     {"dim", s.dim},
                     {"energy", s.energy},
                     {"rel_change", optional_json(s.rel_change)}});
  }
  out.write("convergence.csv", csv);
  Json cw = nullptr;
  if (rep.converged_window) cw = {rep.converged_window->l_min, rep.converged_window->l_max};
  return {{"params", params_json(cfg, cfg.N)},
          {"converged", rep.converged},
          {"converged_window", cw},
          {"reason", rep.reason},
          {"steps", steps}};
}

}  // namespace ringtc::harness
