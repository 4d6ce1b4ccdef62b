#pragma once

// Second-quantized operators on momentum-sector bases.
//
//   H = sum_l (2 pi l - alpha)^2 / 2 n_l
//     + (g0 / 2) sum_{k+l=m+n} a+_k a+_l a_m a_n
//
// on the unit ring with hbar = m = 1. Interaction terms whose created modes
// leave the window are dropped. In the Fock basis every matrix element is real,
// so sector blocks are real symmetric matrices.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "ringtc/state.hpp"

namespace ringtc {

struct ModelParams {
  double g0 = 0.0;
  double alpha = 0.0;
  int N = 1;
  ModeWindow window{};

  /// The mean-field coupling product g0 (N - 1).
  double gN() const noexcept { return g0 * (N - 1); }

  static ModelParams from_gN(double gN, int particles, ModeWindow window = {}, double alpha = 0.0) {
    ModelParams p;
    p.N = particles;
    p.window = window;
    p.alpha = alpha;
    p.g0 = particles > 1 ? gN / (particles - 1) : 0.0;
    return p;
  }

  /// Same g0 and alpha for a different particle number (after detections).
  ModelParams with_particles(int particles) const {
    ModelParams p = *this;
    p.N = particles;
    return p;
  }
};

namespace detail {

inline const std::vector<double>& sqrt_table() {
  static const std::vector<double> table = [] {
    std::vector<double> t(kMaxParticles + 3);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::sqrt(static_cast<double>(i));
    return t;
  }();
  return table;
}

struct DecodedOccupation {
  std::array<int, kMaxModes> n{};
  std::array<int, kMaxModes> occupied{};
  int occupied_count = 0;
};

inline DecodedOccupation decode_fast(OccupationKey key, int width) {
  DecodedOccupation d;
  for (int i = width - 1; i >= 0; --i) {
    d.n[i] = static_cast<int>(key & 0xFF);
    key >>= 8;
  }
  for (int i = 0; i < width; ++i) {
    if (d.n[i] > 0) d.occupied[d.occupied_count++] = i;
  }
  return d;
}

}  // namespace detail

/// Hamiltonian restricted to one sector, applied without storing the matrix.
class SectorHamiltonian {
 public:
  SectorHamiltonian(std::shared_ptr<const SectorBasis> basis, const ModelParams& params)
      : basis_(std::move(basis)), g0_(params.g0), alpha_(params.alpha) {
    if (!basis_) throw ContractViolation("null basis");
    if (!(basis_->window() == params.window) || basis_->particles() != params.N) {
      throw ContractViolation("basis (N=" + std::to_string(basis_->particles()) + ", window " +
                              basis_->window().to_string() + ") does not match model (N=" +
                              std::to_string(params.N) + ", window " +
                              params.window.to_string() + ")");
    }
    const int width = basis_->window().size();
    for (int i = 0; i < width; ++i) unit_[i] = mode_unit(width, i);
    for (int i = 0; i < width; ++i) {
      const double p = kTwoPi * basis_->window().mode(i) - alpha_;
      kinetic_[i] = 0.5 * p * p;
    }
    diag_.resize(static_cast<Eigen::Index>(basis_->dim()));
    for (std::size_t r = 0; r < basis_->dim(); ++r) diag_[r] = diagonal_element(r);
  }

  const SectorBasis& basis() const noexcept { return *basis_; }
  std::shared_ptr<const SectorBasis> basis_ptr() const noexcept { return basis_; }
  std::size_t dim() const noexcept { return basis_->dim(); }
  const Eigen::VectorXd& diagonal() const noexcept { return diag_; }

  /// Calls f(col, value) for every nonzero off-diagonal element of row `row`.
  /// Columns within a row are distinct.
  template <class F>
  void for_each_offdiag(std::size_t row, F&& f) const {
    const int width = basis_->window().size();
    const OccupationKey key = basis_->key(row);
    auto d = detail::decode_fast(key, width);
    const auto& sq = detail::sqrt_table();
    const double half_g0 = 0.5 * g0_;
    if (half_g0 == 0.0) return;
    for (int a = 0; a < d.occupied_count; ++a) {
      const int m = d.occupied[a];
      for (int b = a; b < d.occupied_count; ++b) {
        const int n = d.occupied[b];
        if (m == n && d.n[m] < 2) continue;
        const double ann = (m == n) ? sq[d.n[m]] * sq[d.n[m] - 1] : 2.0 * sq[d.n[m]] * sq[d.n[n]];
        --d.n[m];
        --d.n[n];
        const OccupationKey removed = key - unit_[m] - unit_[n];
        const int total = m + n;
        const int k_lo = std::max(0, total - (width - 1));
        for (int k = k_lo; 2 * k <= total; ++k) {
          const int l = total - k;
          if (k == m && l == n) continue;
          const double cre =
              (k == l) ? sq[d.n[k] + 1] * sq[d.n[k] + 2] : 2.0 * sq[d.n[k] + 1] * sq[d.n[l] + 1];
          const auto col = basis_->find(removed + unit_[k] + unit_[l]);
          f(static_cast<std::size_t>(col), half_g0 * ann * cre);
        }
        ++d.n[m];
        ++d.n[n];
      }
    }
  }

  /// y = H x on this sector (gather form, one row at a time).
  template <class Scalar>
  void apply(const Scalar* x, Scalar* y) const {
    const std::size_t dim = basis_->dim();
    for (std::size_t r = 0; r < dim; ++r) {
      Scalar acc = diag_[static_cast<Eigen::Index>(r)] * x[r];
      for_each_offdiag(r, [&](std::size_t c, double v) { acc += v * x[c]; });
      y[r] = acc;
    }
  }

  template <class Vec>
  Vec apply(const Vec& x) const {
    Vec y(x.size());
    apply(x.data(), y.data());
    return y;
  }

 private:
  double diagonal_element(std::size_t row) const {
    const int width = basis_->window().size();
    const auto d = detail::decode_fast(basis_->key(row), width);
    double kin = 0.0;
    double same = 0.0;
    double cross = 0.0;
    double prefix = 0.0;
    for (int i = 0; i < width; ++i) {
      const double ni = d.n[i];
      kin += kinetic_[i] * ni;
      same += ni * (ni - 1.0);
      cross += ni * prefix;
      prefix += ni;
    }
    return kin + 0.5 * g0_ * (same + 4.0 * cross);
  }

  std::shared_ptr<const SectorBasis> basis_;
  double g0_;
  double alpha_;
  std::array<OccupationKey, kMaxModes> unit_{};
  std::array<double, kMaxModes> kinetic_{};
  Eigen::VectorXd diag_;
};

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

inline constexpr std::size_t kDefaultSparseBudget = std::size_t{1} << 27;  // nonzeros

/// Explicit CSR form of a sector block. Refuses when the nonzero count would
/// exceed `max_nonzeros`.
inline SparseMatrix assemble_sparse(const SectorHamiltonian& h,
                                    std::size_t max_nonzeros = kDefaultSparseBudget) {
  const std::size_t dim = h.dim();
  std::vector<int> outer(dim + 1, 0);
  std::vector<int> inner;
  std::vector<double> values;
  inner.reserve(dim * 8);
  values.reserve(dim * 8);
  std::vector<std::pair<int, double>> row;
  for (std::size_t r = 0; r < dim; ++r) {
    row.clear();
    row.emplace_back(static_cast<int>(r), h.diagonal()[static_cast<Eigen::Index>(r)]);
    h.for_each_offdiag(r, [&](std::size_t c, double v) { row.emplace_back(static_cast<int>(c), v); });
    std::sort(row.begin(), row.end());
    for (const auto& [c, v] : row) {
      inner.push_back(c);
      values.push_back(v);
    }
    outer[r + 1] = static_cast<int>(inner.size());
    if (inner.size() > max_nonzeros) {
      throw BudgetExceeded("sparse assembly of sector K=" + std::to_string(h.basis().momentum()) +
                           " (dim " + std::to_string(dim) + ") exceeds budget of " +
                           std::to_string(max_nonzeros) + " nonzeros after " +
                           std::to_string(r + 1) + " rows");
    }
  }
  const auto n = static_cast<Eigen::Index>(dim);
  return SparseMatrix(Eigen::Map<const SparseMatrix>(n, n, static_cast<Eigen::Index>(inner.size()),
                                                     outer.data(), inner.data(), values.data()));
}

/// Nonzero count of a sector block without building it.
inline std::size_t count_nonzeros(const SectorHamiltonian& h) {
  std::size_t nnz = h.dim();
  for (std::size_t r = 0; r < h.dim(); ++r) h.for_each_offdiag(r, [&](std::size_t, double) { ++nnz; });
  return nnz;
}

inline SparseMatrix assemble_sparse(const ModelParams& params, const SectorBasis& basis,
                                    std::size_t max_nonzeros = kDefaultSparseBudget) {
  return assemble_sparse(
      SectorHamiltonian(std::make_shared<const SectorBasis>(basis), params), max_nonzeros);
}

inline void check_state_matches(const ManyBodyState& state, const ModelParams& params) {
  if (state.particles() != params.N || !(state.window() == params.window)) {
    throw ContractViolation("state (N=" + std::to_string(state.particles()) + ", window " +
                            state.window().to_string() + ") does not match model (N=" +
                            std::to_string(params.N) + ", window " + params.window.to_string() +
                            ")");
  }
}

/// H|state>, block by block. Never mixes sectors.
inline ManyBodyState apply_hamiltonian(const ManyBodyState& state, const ModelParams& params) {
  check_state_matches(state, params);
  ManyBodyState out(state.particles(), state.window());
  for (const auto& [k, b] : state.blocks()) {
    SectorHamiltonian h(b.basis, params);
    out.set_block(k, b.basis, h.apply(b.amp));
  }
  return out;
}

/// <state|H|state> / <state|state>.
inline double energy_expectation(const ManyBodyState& state, const ModelParams& params) {
  return inner(state, apply_hamiltonian(state, params)).real() / state.norm2();
}

/// psi(x)|state> with psi(x) = sum_l exp(i 2 pi l x) a_l. Result is not
/// normalized; its norm squared is the single-particle density at x.
inline ManyBodyState apply_field_annihilation(const ManyBodyState& state, double x) {
  if (state.particles() < 1) throw EmptyState("field annihilation on a zero-particle state");
  const ModeWindow& w = state.window();
  const int width = w.size();
  const int out_n = state.particles() - 1;
  std::array<Complex, kMaxModes> phase{};
  std::array<OccupationKey, kMaxModes> unit{};
  for (int i = 0; i < width; ++i) {
    phase[i] = std::polar(1.0, kTwoPi * w.mode(i) * x);
    unit[i] = mode_unit(width, i);
  }
  std::vector<int> targets;
  for (const auto& [k, b] : state.blocks()) {
    for (int i = 0; i < width; ++i) targets.push_back(k - w.mode(i));
  }
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

  const auto& sq = detail::sqrt_table();
  ManyBodyState out(out_n, w);
  for (int kt : targets) {
    if (!sector_reachable(out_n, kt, w)) continue;
    auto basis = sector_basis(out_n, kt, w);
    if (basis->empty()) continue;
    Eigen::VectorXcd amp = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(basis->dim()));
    std::array<const SectorBlock*, kMaxModes> src{};
    bool any = false;
    for (int i = 0; i < width; ++i) {
      auto it = state.blocks().find(kt + w.mode(i));
      src[i] = it == state.blocks().end() ? nullptr : &it->second;
      any = any || src[i] != nullptr;
    }
    if (!any) continue;
    for (std::size_t r = 0; r < basis->dim(); ++r) {
      const OccupationKey key = basis->key(r);
      Complex acc = 0.0;
      for (int i = 0; i < width; ++i) {
        if (!src[i]) continue;
        const int ni = key_occupation(key, width, i);
        const auto s = src[i]->basis->find(key + unit[i]);
        if (s < 0) continue;
        acc += phase[i] * sq[ni + 1] * src[i]->amp[s];
      }
      amp[static_cast<Eigen::Index>(r)] = acc;
    }
    out.set_block(kt, std::move(basis), std::move(amp));
  }
  return out;
}

struct OneBodyDensityMatrix {
  ModeWindow window{};
  /// rho(k, l) = <a+_k a_l>, indices are window offsets.
  Eigen::MatrixXcd rho;

  double trace() const { return rho.trace().real(); }
};

inline OneBodyDensityMatrix obdm(const ManyBodyState& state) {
  const ModeWindow& w = state.window();
  const int width = w.size();
  const auto& sq = detail::sqrt_table();
  std::array<OccupationKey, kMaxModes> unit{};
  for (int i = 0; i < width; ++i) unit[i] = mode_unit(width, i);

  OneBodyDensityMatrix out{w, Eigen::MatrixXcd::Zero(width, width)};
  for (const auto& [k, b] : state.blocks()) {
    for (int kk = 0; kk < width; ++kk) {
      for (int ll = 0; ll < width; ++ll) {
        const auto it = state.blocks().find(k + (kk - ll));
        if (it == state.blocks().end()) continue;
        const SectorBlock& tb = it->second;
        Complex acc = 0.0;
        for (std::size_t r = 0; r < b.basis->dim(); ++r) {
          const OccupationKey key = b.basis->key(r);
          const int nl = key_occupation(key, width, ll);
          if (nl == 0) continue;
          const int nk = key_occupation(key, width, kk) - (kk == ll ? 1 : 0);
          if (nk + 1 > kMaxParticles) continue;
          const auto t = tb.basis->find(key - unit[ll] + unit[kk]);
          if (t < 0) continue;
          acc += std::conj(tb.amp[t]) * b.amp[static_cast<Eigen::Index>(r)] * (sq[nl] * sq[nk + 1]);
        }
        out.rho(kk, ll) += acc;
      }
    }
  }
  return out;
}

/// Uniform grid x_i = i / size on [0, 1).
inline std::vector<double> ring_grid(std::size_t size) {
  std::vector<double> x(size);
  for (std::size_t i = 0; i < size; ++i) x[i] = static_cast<double>(i) / static_cast<double>(size);
  return x;
}

/// rho(x) = sum_{k,l} rho1(k,l) exp(i 2 pi (l - k) x).
inline std::vector<double> density_from_obdm(const OneBodyDensityMatrix& rho1,
                                             std::span<const double> grid) {
  const int width = static_cast<int>(rho1.rho.rows());
  // Fourier coefficients c_d for d = l - k in [-(W-1), W-1].
  std::vector<Complex> coeff(2 * width - 1, 0.0);
  for (int k = 0; k < width; ++k) {
    for (int l = 0; l < width; ++l) coeff[l - k + width - 1] += rho1.rho(k, l);
  }
  std::vector<double> out(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double acc = coeff[width - 1].real();
    for (int d = 1; d < width; ++d) {
      // c_{-d} = conj(c_d) for Hermitian rho1.
      const Complex e = std::polar(1.0, kTwoPi * d * grid[i]);
      acc += 2.0 * (coeff[d + width - 1] * e).real();
    }
    out[i] = acc;
  }
  return out;
}

struct BoostResult {
  ManyBodyState state;
  double leaked_norm2 = 0.0;
};

/// Shifts every occupation by m modes (n_l -> n_{l-m}), K -> K + m N, placing
/// the result in `target` (the state's own window by default). Amplitude on
/// occupations that leave the target window is dropped and reported.
inline BoostResult apply_boost(const ManyBodyState& state, int m, const ModeWindow& target,
                               double warn_threshold = 1e-12) {
  validate_window(target);
  const ModeWindow& w = state.window();
  const int width = w.size();
  const int twidth = target.size();
  const int n = state.particles();
  BoostResult res{ManyBodyState(n, target), 0.0};
  for (const auto& [k, b] : state.blocks()) {
    const int kt = k + m * n;
    std::shared_ptr<const SectorBasis> tb;
    if (sector_reachable(n, kt, target)) tb = sector_basis(n, kt, target);
    Eigen::VectorXcd amp;
    if (tb && !tb->empty()) amp = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(tb->dim()));
    for (std::size_t r = 0; r < b.basis->dim(); ++r) {
      const auto d = detail::decode_fast(b.basis->key(r), width);
      bool fits = true;
      OccupationKey shifted = 0;
      for (int i = 0; i < width && fits; ++i) {
        if (d.n[i] == 0) continue;
        const int j = target.offset(w.mode(i) + m);
        if (j < 0 || j >= twidth) {
          fits = false;
        } else {
          shifted += OccupationKey(d.n[i]) * mode_unit(twidth, j);
        }
      }
      const Complex a = b.amp[static_cast<Eigen::Index>(r)];
      if (!fits || amp.size() == 0) {
        res.leaked_norm2 += std::norm(a);
        continue;
      }
      amp[tb->find(shifted)] = a;
    }
    if (amp.size() > 0) res.state.set_block(kt, tb, std::move(amp));
  }
  if (res.leaked_norm2 > warn_threshold) {
    log_warning("boost by " + std::to_string(m) + " leaked norm^2 " +
                std::to_string(res.leaked_norm2) + " outside window " + target.to_string());
  }
  return res;
}

inline BoostResult apply_boost(const ManyBodyState& state, int m, double warn_threshold = 1e-12) {
  return apply_boost(state, m, state.window(), warn_threshold);
}

}  // namespace ringtc
