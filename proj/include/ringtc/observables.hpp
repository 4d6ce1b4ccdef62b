#pragma once

// Post-processing of correlation series: contrast and its lifetime, peak
// tracking, center-of-mass width, and the condensate fraction.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "ringtc/meanfield.hpp"
#include "ringtc/measurement.hpp"

namespace ringtc {

/// (max - min) / (max + min) over the grid.
inline double contrast(std::span<const double> slice) {
  if (slice.empty()) throw ContractViolation("contrast of an empty slice");
  return profile_contrast(slice);
}

/// First linearly interpolated down-crossing of `level` by values(times).
inline std::optional<double> first_down_crossing(std::span<const double> times,
                                                 std::span<const double> values, double level) {
  if (times.size() != values.size()) throw ContractViolation("times and values differ in length");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw ContractViolation("times must be strictly increasing");
  }
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i - 1] > level && values[i] <= level) {
      const double f = (values[i - 1] - level) / (values[i - 1] - values[i]);
      return times[i - 1] + f * (times[i] - times[i - 1]);
    }
  }
  return std::nullopt;
}

/// First linearly interpolated up-crossing of `level`.
inline std::optional<double> first_up_crossing(std::span<const double> times,
                                               std::span<const double> values, double level) {
  std::vector<double> neg(values.begin(), values.end());
  for (double& v : neg) v = -v;
  return first_down_crossing(times, neg, -level);
}

/// Time where the contrast first falls to 0.5.
inline std::optional<double> lifetime(std::span<const double> times, std::span<const double> c) {
  return first_down_crossing(times, c, 0.5);
}

struct ContrastTrack {
  std::vector<double> times;
  std::vector<double> C;
  std::optional<double> t_c;
};

inline ContrastTrack contrast_track(const CorrelationSeries& s) {
  ContrastTrack out;
  out.times = s.times;
  for (const auto& slice : s.rho2) out.C.push_back(contrast(slice));
  out.t_c = lifetime(out.times, out.C);
  return out;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Ordinary least squares y = slope x + intercept.
inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw ContractViolation("linear fit needs >= 2 matching points");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0)) throw ContractViolation("linear fit with constant abscissa");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

/// y = a x^p fitted in log-log space; slope is the exponent p.
inline LinearFit power_law_fit(std::span<const double> x, std::span<const double> y) {
  std::vector<double> lx;
  std::vector<double> ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0 && y[i] > 0)) throw ContractViolation("power-law fit needs positive data");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  return linear_fit(lx, ly);
}

struct PeakTrack {
  std::vector<double> times;
  std::vector<double> positions;
  std::vector<double> unwrapped;
  std::optional<double> velocity;
};

/// Grid position of the maximum (diagnostic alternative to the circular mean).
inline double peak_argmax(std::span<const double> slice) {
  const auto it = std::max_element(slice.begin(), slice.end());
  return static_cast<double>(it - slice.begin()) / static_cast<double>(slice.size());
}

inline constexpr double kMinTrackContrast = 0.05;

/// Circular-mean peak per slice, unwrapped to the branch nearest the previous
/// sample, and the least-squares velocity over slices with contrast above 0.05.
inline PeakTrack peak_track(std::span<const double> times,
                            const std::vector<std::vector<double>>& slices) {
  PeakTrack out;
  out.times.assign(times.begin(), times.end());
  std::vector<double> ft;
  std::vector<double> fx;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const double x = circular_mean(slices[i]);
    double u = x;
    if (!out.unwrapped.empty()) {
      const double prev = out.unwrapped.back();
      u = x + std::round(prev - x);
    }
    out.positions.push_back(x);
    out.unwrapped.push_back(u);
    if (contrast(slices[i]) > kMinTrackContrast) {
      ft.push_back(times[i]);
      fx.push_back(u);
    }
  }
  if (ft.size() >= 2) out.velocity = linear_fit(ft, fx).slope;
  return out;
}

inline PeakTrack peak_track(const CorrelationSeries& s) { return peak_track(s.times, s.rho2); }

/// Spread of the center of mass estimated from a single-particle density by
/// removing the mean-field profile variance: sqrt(max(0, var - sigma2_mf)).
inline double cm_width_proxy(std::span<const double> density, double sigma2_mf,
                             double tolerance = 1e-6) {
  const double excess = circular_variance(density) - sigma2_mf;
  if (excess < -tolerance) {
    log_warning("density variance is below the mean-field variance by " + std::to_string(-excess) +
                "; clamping CM width to 0");
  }
  return std::sqrt(std::max(0.0, excess));
}

struct DeformationResult {
  std::vector<double> times;
  std::vector<double> cm_std;
  std::optional<double> t_D;
};

/// CM width track and the first time it reaches sigma / 2. A track that
/// starts at or above the level reaches it at its first sample.
inline DeformationResult deformation_time(std::span<const double> times,
                                          const std::vector<std::vector<double>>& slices,
                                          double sigma2_mf) {
  DeformationResult out;
  out.times.assign(times.begin(), times.end());
  for (const auto& s : slices) out.cm_std.push_back(cm_width_proxy(s, sigma2_mf));
  const double level = 0.5 * std::sqrt(sigma2_mf);
  if (!out.cm_std.empty() && out.cm_std.front() >= level) {
    out.t_D = out.times.front();
  } else {
    out.t_D = first_up_crossing(out.times, out.cm_std, level);
  }
  return out;
}

/// Largest eigenvalue of the one-body density matrix over its trace.
inline double condensate_fraction(const Eigen::MatrixXcd& rho1, double tolerance = 1e-9) {
  if (rho1.rows() != rho1.cols() || rho1.rows() == 0) throw ContractViolation("rho1 must be square");
  const double tr = rho1.trace().real();
  if (!(std::abs(tr) > 0)) throw ContractViolation("rho1 has zero trace");
  const double scale = std::max(1.0, rho1.cwiseAbs().maxCoeff());
  if ((rho1 - rho1.adjoint()).cwiseAbs().maxCoeff() > tolerance * scale) {
    throw ContractViolation("rho1 is not Hermitian");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho1);
  if (es.eigenvalues()[0] < -tolerance * scale) throw ContractViolation("rho1 is not positive");
  return es.eigenvalues()[rho1.rows() - 1] / tr;
}

inline double condensate_fraction(const OneBodyDensityMatrix& rho1, double tolerance = 1e-9) {
  return condensate_fraction(rho1.rho, tolerance);
}

}  // namespace ringtc
