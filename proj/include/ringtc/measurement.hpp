#pragma once

// Position measurements modeled as field-operator collapse, and the
// density-density correlation of a collapsed, time-evolved state.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "ringtc/spectral.hpp"

namespace ringtc {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed of the i-th independent stream derived from a master seed:
/// splitmix64(master + 0x9E3779B97F4A7C15 * (i + 1)).
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t i) {
  return splitmix64(master + 0x9E3779B97F4A7C15ull * (i + 1));
}

inline constexpr std::size_t kDefaultGridSize = 512;
inline constexpr double kNodeThreshold = 1e-14;

struct MeasurementRecord {
  std::vector<double> positions;
  std::uint64_t seed = 0;
  std::vector<double> norms;
  double epsilon = 0.0;
};

struct Collapse {
  ManyBodyState state;
  double norm2 = 0.0;
};

/// psi(x)|state> / ||psi(x)|state>|| together with the squared norm before
/// normalization.
inline Collapse collapse_once(const ManyBodyState& state, double x) {
  Collapse c{apply_field_annihilation(state, x), 0.0};
  c.norm2 = c.state.norm2();
  if (!(c.norm2 >= kNodeThreshold)) {
    throw MeasurementAtNode("detection probability at x=" + std::to_string(x) + " is " +
                            std::to_string(c.norm2));
  }
  c.state.normalize();
  return c;
}

/// Draws x in [0, 1) from a density given on the uniform grid i / size,
/// interpolated linearly between nodes (the last cell wraps to node 0).
inline double sample_position(std::span<const double> density, Rng& rng) {
  const std::size_t m = density.size();
  if (m == 0) throw ContractViolation("empty density");
  std::vector<double> cum(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double a = density[i];
    const double b = density[(i + 1) % m];
    if (a < 0 || b < 0 || !std::isfinite(a)) throw ContractViolation("negative density");
    cum[i + 1] = cum[i] + 0.5 * (a + b);
  }
  const double total = cum[m];
  if (!(total > 0)) throw ContractViolation("density is identically zero");
  const double u = uniform01(rng) * total;
  auto it = std::upper_bound(cum.begin() + 1, cum.end(), u);
  std::size_t i = static_cast<std::size_t>(it - cum.begin()) - 1;
  while (i + 1 < m && cum[i + 1] == cum[i]) ++i;  // skip empty cells
  if (i >= m) i = m - 1;
  const double a = density[i];
  const double b = density[(i + 1) % m];
  const double r = u - cum[i];
  // Solve a s + (b - a) s^2 / 2 = r for s in [0, 1].
  double s;
  const double d = b - a;
  if (std::abs(d) < 1e-14 * std::max(a, b)) {
    s = a > 0 ? r / a : 0.5;
  } else {
    const double disc = std::max(0.0, a * a + 2.0 * d * r);
    s = 2.0 * r / (a + std::sqrt(disc));
  }
  s = std::clamp(s, 0.0, 1.0);
  double x = (static_cast<double>(i) + s) / static_cast<double>(m);
  if (x >= 1.0) x -= 1.0;
  return x;
}

/// Single-particle density of `state` on ring_grid(size).
inline std::vector<double> density_on_grid(const ManyBodyState& state, std::size_t size) {
  return density_from_obdm(obdm(state), ring_grid(size));
}

struct SequentialResult {
  ManyBodyState state;
  MeasurementRecord record;
};

struct SequentialOptions {
  std::size_t grid_size = kDefaultGridSize;
  /// Measure these positions instead of sampling them.
  std::optional<std::vector<double>> positions;
  /// Called after each collapse with the number of detections so far and the
  /// normalized remaining state.
  std::function<void(int, const ManyBodyState&)> on_collapse;
};

/// round(epsilon N) successive detections at t = 0, each drawn from the
/// current conditional single-particle density.
inline SequentialResult sequential_measure(const ManyBodyState& state, double epsilon,
                                           std::uint64_t seed, const SequentialOptions& opt = {}) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ContractViolation("epsilon must lie in (0, 1)");
  const int count = static_cast<int>(std::lround(epsilon * state.particles()));
  if (count < 1) throw ContractViolation("epsilon N rounds to zero detections");
  if (opt.positions && opt.positions->size() != static_cast<std::size_t>(count)) {
    throw ContractViolation("injected positions do not match round(epsilon N)");
  }
  Rng rng(seed);
  SequentialResult out{state, {}};
  out.record.seed = seed;
  out.record.epsilon = epsilon;
  out.state.normalize();
  for (int j = 0; j < count; ++j) {
    double x;
    if (opt.positions) {
      x = (*opt.positions)[static_cast<std::size_t>(j)];
    } else {
      const auto rho = density_on_grid(out.state, opt.grid_size);
      x = sample_position(rho, rng);
    }
    auto c = collapse_once(out.state, x);
    out.state = std::move(c.state);
    out.record.positions.push_back(x);
    out.record.norms.push_back(c.norm2);
    if (opt.on_collapse) opt.on_collapse(j + 1, out.state);
  }
  return out;
}

struct CorrelationSeries {
  std::vector<double> grid;
  std::vector<double> times;
  /// rho2[t][x], each slice normalized to unit integral over the ring.
  std::vector<std::vector<double>> rho2;
  ModelParams params;
};

/// Rescales a grid slice so that its ring integral (grid mean) is one.
inline void normalize_slice(std::vector<double>& slice) {
  double s = 0.0;
  for (double v : slice) s += v;
  const double mean = s / static_cast<double>(slice.size());
  if (!(mean > 0)) throw EmptyState("density slice has zero integral");
  for (double& v : slice) v /= mean;
}

struct CorrelationOptions {
  std::size_t grid_size = kDefaultGridSize;
  PropagatorConfig propagator{};
  /// Return true to stop recording after the current slice.
  std::function<bool(double, const std::vector<double>&)> stop;
};

/// rho2(x, t) for an eigenstate psi0 (of `params`) after a detection at x1:
/// the density of exp(-iHt) psi(x1)|psi0>, which carries the full two-time
/// correlator because the eigenstate's phase cancels.
inline CorrelationSeries correlation_evolution(const ManyBodyState& psi0, const ModelParams& params,
                                               double x1, std::span<const double> times,
                                               const CorrelationOptions& opt = {}) {
  auto c = collapse_once(psi0, x1);
  CorrelationSeries out;
  out.grid = ring_grid(opt.grid_size);
  out.params = params;
  Evolution ev(std::move(c.state), params.with_particles(params.N - 1), opt.propagator);
  for (double t : times) {
    const auto& s = ev.advance_to(t);
    auto slice = density_from_obdm(obdm(s), out.grid);
    normalize_slice(slice);
    out.times.push_back(t);
    out.rho2.push_back(std::move(slice));
    if (opt.stop && opt.stop(t, out.rho2.back())) break;
  }
  return out;
}

/// Uniform times 0, dt, 2 dt, ... up to t_max (inclusive within dt / 1e6).
inline std::vector<double> uniform_times(double t_max, double dt) {
  if (!(dt > 0) || t_max < 0) throw ConfigError("time grid needs dt > 0 and t_max >= 0");
  std::vector<double> t;
  const auto n = static_cast<std::size_t>(std::floor(t_max / dt + 1e-6));
  for (std::size_t i = 0; i <= n; ++i) t.push_back(static_cast<double>(i) * dt);
  return t;
}

}  // namespace ringtc
