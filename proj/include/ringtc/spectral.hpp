#pragma once

// Lowest eigenpair per sector (restarted Lanczos, full reorthogonalization),
// dense sector spectra, and real-time propagation of multi-sector states.

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdio>
#include <filesystem>
#include <string>
#include <exception>
#include <limits>
#include <mutex>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <thread>
#include <variant>
#include <vector>

#include "ringtc/operators.hpp"

namespace ringtc {

/// Sector Hamiltonian behind a uniform apply(): CSR when assembled, otherwise
/// the matrix-free kernel.
class BlockOperator {
 public:
  BlockOperator(std::shared_ptr<const SectorBasis> basis, const ModelParams& params,
                bool assemble, std::size_t sparse_budget = kDefaultSparseBudget)
      : h_(std::move(basis), params) {
    if (assemble) {
      try {
        csr_ = assemble_sparse(h_, sparse_budget);
      } catch (const BudgetExceeded& e) {
        log_info(std::string(e.what()) + "; using matrix-free application");
      }
    }
  }

  std::size_t dim() const noexcept { return h_.dim(); }
  bool assembled() const noexcept { return csr_.has_value(); }
  std::size_t nonzeros() const noexcept {
    return csr_ ? static_cast<std::size_t>(csr_->nonZeros()) : 0;
  }
  const SectorHamiltonian& hamiltonian() const noexcept { return h_; }

  template <class Scalar>
  void apply(const Scalar* x, Scalar* y) const {
    if (!csr_) {
      h_.apply(x, y);
      return;
    }
    const int* outer = csr_->outerIndexPtr();
    const int* inner = csr_->innerIndexPtr();
    const double* val = csr_->valuePtr();
    const auto rows = static_cast<std::size_t>(csr_->rows());
    for (std::size_t r = 0; r < rows; ++r) {
      Scalar acc{};
      for (int p = outer[r]; p < outer[r + 1]; ++p) acc += val[p] * x[inner[p]];
      y[r] = acc;
    }
  }

  /// Dense copy; only for small sectors.
  Eigen::MatrixXd dense() const {
    const auto n = static_cast<Eigen::Index>(dim());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t r = 0; r < dim(); ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      m(ri, ri) = h_.diagonal()[ri];
      h_.for_each_offdiag(r, [&](std::size_t c, double v) { m(ri, static_cast<Eigen::Index>(c)) = v; });
    }
    return m;
  }

 private:
  SectorHamiltonian h_;
  std::optional<SparseMatrix> csr_;
};

struct LanczosOptions {
  double tol = 1e-9;
  int max_basis = 120;
  int max_restarts = 60;
  std::uint64_t seed = 0x5EC7012ull;
};

struct LanczosResult {
  double energy = 0.0;
  Eigen::VectorXd vector;
  double residual = 0.0;
  int iterations = 0;
  bool degenerate = false;
};

/// Lowest eigenpair of a real symmetric operator given by `apply(x, y)`.
template <class Apply>
LanczosResult lanczos_lowest(Apply&& apply, std::size_t dim, const LanczosOptions& opt) {
  if (dim == 0) throw ContractViolation("Lanczos on an empty sector");
  const auto n = static_cast<Eigen::Index>(dim);
  LanczosResult res;
  Eigen::VectorXd hv(n);
  if (dim == 1) {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(1);
    apply(v.data(), hv.data());
    res.energy = hv[0];
    res.vector = v;
    res.iterations = 1;
    return res;
  }

  // Deterministic start vector with support on every basis state.
  Eigen::VectorXd start(n);
  {
    std::mt19937_64 rng(opt.seed);
    for (Eigen::Index i = 0; i < n; ++i) {
      start[i] = 0.5 + static_cast<double>(rng() >> 11) * 0x1.0p-53;
    }
    start.normalize();
  }

  const int m_max = static_cast<int>(std::min<std::size_t>(opt.max_basis, dim));
  Eigen::MatrixXd basis(n, m_max);
  double best_residual = std::numeric_limits<double>::infinity();

  for (int restart = 0; restart <= opt.max_restarts; ++restart) {
    basis.col(0) = start;
    std::vector<double> alpha;
    std::vector<double> beta;
    Eigen::VectorXd w(n);
    int m = 0;
    bool finished = false;
    Eigen::VectorXd ritz;
    double theta = 0.0;
    double second = std::numeric_limits<double>::infinity();

    for (int j = 0; j < m_max; ++j) {
      apply(basis.col(j).data(), w.data());
      ++res.iterations;
      const double a = basis.col(j).dot(w);
      alpha.push_back(a);
      // Full reorthogonalization, applied twice.
      for (int pass = 0; pass < 2; ++pass) {
        const Eigen::VectorXd proj = basis.leftCols(j + 1).transpose() * w;
        w.noalias() -= basis.leftCols(j + 1) * proj;
      }
      const double b = w.norm();
      m = j + 1;

      Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
      for (int i = 0; i < m; ++i) {
        t(i, i) = alpha[i];
        if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
      theta = es.eigenvalues()[0];
      second = m > 1 ? es.eigenvalues()[1] : std::numeric_limits<double>::infinity();
      const double estimate = b * std::abs(es.eigenvectors()(m - 1, 0));
      const bool breakdown = b < 1e-13 * std::max(1.0, std::abs(theta));
      if (estimate < 0.1 * opt.tol || breakdown || m == m_max) {
        ritz = basis.leftCols(m) * es.eigenvectors().col(0);
        ritz.normalize();
        finished = true;
        break;
      }
      beta.push_back(b);
      basis.col(j + 1) = w / b;
    }
    if (!finished) break;

    apply(ritz.data(), hv.data());
    ++res.iterations;
    const double rq = ritz.dot(hv);
    const double residual = (hv - rq * ritz).norm();
    best_residual = std::min(best_residual, residual);
    if (residual < opt.tol) {
      res.energy = rq;
      res.vector = std::move(ritz);
      res.residual = residual;
      res.degenerate = std::abs(second - theta) < 1e-10;
      return res;
    }
    start = ritz;
  }
  throw NonConvergence("Lanczos did not reach residual " + std::to_string(opt.tol) +
                           " within " + std::to_string(opt.max_restarts) + " restarts",
                       best_residual);
}

struct EigenResult {
  double energy = 0.0;
  ManyBodyState vector;
  double residual = 0.0;
  int iterations = 0;
  bool degenerate = false;
};

/// Lowest eigenpair of one momentum sector. The returned vector has a
/// deterministic sign: its largest-magnitude amplitude is positive.
inline EigenResult ground_of_sector(std::shared_ptr<const SectorBasis> basis,
                                    const ModelParams& params, double tol = 1e-9,
                                    LanczosOptions opt = {}) {
  if (!basis || basis->empty()) throw ContractViolation("ground_of_sector on an empty sector");
  opt.tol = tol;
  BlockOperator op(basis, params, /*assemble=*/true);
  auto lz = lanczos_lowest([&](const double* x, double* y) { op.apply(x, y); }, basis->dim(), opt);
  Eigen::Index imax = 0;
  lz.vector.cwiseAbs().maxCoeff(&imax);
  if (lz.vector[imax] < 0) lz.vector = -lz.vector;
  if (lz.degenerate) {
    log_info("sector K=" + std::to_string(basis->momentum()) +
             " ground state is degenerate within 1e-10; keeping the first converged vector");
  }
  EigenResult out;
  out.energy = lz.energy;
  out.residual = lz.residual;
  out.iterations = lz.iterations;
  out.degenerate = lz.degenerate;
  out.vector = ManyBodyState(params.N, params.window);
  out.vector.set_block(basis->momentum(), basis, lz.vector.cast<Complex>());
  return out;
}

inline EigenResult ground_of_sector(const ModelParams& params, int momentum, double tol = 1e-9) {
  return ground_of_sector(sector_basis(params.N, momentum, params.window), params, tol);
}

/// FNV-1a over the bit patterns of everything that determines a sector eigenpair.
inline std::uint64_t params_hash(const ModelParams& p, double tol) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ull;
    }
  };
  mix(std::bit_cast<std::uint64_t>(p.g0));
  mix(std::bit_cast<std::uint64_t>(p.alpha));
  mix(static_cast<std::uint64_t>(p.N));
  mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(p.window.l_min)));
  mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(p.window.l_max)));
  mix(std::bit_cast<std::uint64_t>(tol));
  return h;
}

inline std::string serialize_eigenpair(std::uint64_t hash, const EigenResult& e) {
  if (e.vector.blocks().size() != 1) throw ContractViolation("eigenpair must be a single block");
  const auto& [k, b] = *e.vector.blocks().begin();
  ByteWriter w;
  w.header(CacheKind::kEigenpair);
  w.u64(hash);
  w.i32(k);
  w.f64(e.energy);
  w.f64(e.residual);
  w.u32(static_cast<std::uint32_t>(e.iterations));
  w.u64(static_cast<std::uint64_t>(b.amp.size()));
  for (Eigen::Index i = 0; i < b.amp.size(); ++i) {
    w.f64(b.amp[i].real());
    w.f64(b.amp[i].imag());
  }
  return w.bytes();
}

/// Restores an eigenpair written by serialize_eigenpair, or nullopt when the
/// bytes are malformed or belong to a different (hash, basis).
inline std::optional<EigenResult> deserialize_eigenpair(std::string bytes, std::uint64_t hash,
                                                        std::shared_ptr<const SectorBasis> basis,
                                                        const ModelParams& params) {
  ByteReader r(std::move(bytes));
  if (!r.header(CacheKind::kEigenpair)) return std::nullopt;
  const std::uint64_t h = r.u64();
  const int k = r.i32();
  EigenResult e;
  e.energy = r.f64();
  e.residual = r.f64();
  e.iterations = static_cast<int>(r.u32());
  const std::uint64_t dim = r.u64();
  if (!r.ok() || h != hash || k != basis->momentum() || dim != basis->dim() ||
      r.remaining() != dim * 16) {
    return std::nullopt;
  }
  Eigen::VectorXcd amp(static_cast<Eigen::Index>(dim));
  for (auto& a : amp) {
    const double re = r.f64();
    a = Complex(re, r.f64());
  }
  e.vector = ManyBodyState(params.N, params.window);
  e.vector.set_block(k, std::move(basis), std::move(amp));
  return e;
}

inline std::filesystem::path eigenpair_path(const std::filesystem::path& dir, std::uint64_t hash,
                                            int momentum) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return dir / ("eig_" + std::string(buf) + "_K" + std::to_string(momentum) + ".rtc");
}

/// ground_of_sector backed by the on-disk eigenpair cache in `dir` (no cache
/// when dir is empty). Hits are bit-identical to the run that wrote them.
inline EigenResult cached_ground_of_sector(const ModelParams& params, int momentum, double tol,
                                           const std::optional<std::filesystem::path>& dir) {
  auto basis = sector_basis(params.N, momentum, params.window);
  if (!dir) return ground_of_sector(basis, params, tol);
  const std::uint64_t hash = params_hash(params, tol);
  const auto path = eigenpair_path(*dir, hash, momentum);
  if (auto bytes = read_file(path)) {
    if (auto e = deserialize_eigenpair(std::move(*bytes), hash, basis, params)) return *e;
  }
  auto e = ground_of_sector(basis, params, tol);
  write_file_atomic(path, serialize_eigenpair(hash, e));
  return e;
}

inline constexpr std::size_t kDenseBudget = 6000;

struct SectorSpectrum {
  Eigen::VectorXd eigenvalues;   // ascending
  Eigen::MatrixXd eigenvectors;  // columns
};

inline SectorSpectrum spectrum_of_sector(const SectorBasis& basis, const ModelParams& params,
                                         std::size_t max_dim = kDenseBudget) {
  if (basis.dim() > max_dim) {
    throw BudgetExceeded("dense spectrum of sector K=" + std::to_string(basis.momentum()) +
                         " with dim " + std::to_string(basis.dim()) + " exceeds budget " +
                         std::to_string(max_dim));
  }
  BlockOperator op(std::make_shared<const SectorBasis>(basis), params, false);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(op.dense());
  return {es.eigenvalues(), es.eigenvectors()};
}

enum class PropagatorMethod { kAuto, kEigenbasis, kKrylov };

struct PropagatorConfig {
  PropagatorMethod method = PropagatorMethod::kAuto;
  int krylov_dim = 30;
  /// Upper bound on a single Krylov substep; 0 means no bound.
  double step = 0.0;
  /// Local error tolerance per Krylov step, relative to the block norm.
  double tol = 1e-12;
  /// Blocks up to this dimension use the eigenbasis method under kAuto.
  std::size_t eigen_max_dim = 4000;
  /// Total CSR nonzeros kept alive across blocks before falling back to matrix-free.
  std::size_t sparse_budget = kDefaultSparseBudget;
  /// Threads used to propagate blocks in parallel.
  int workers = 1;

  void validate() const {
    if (krylov_dim < 2) throw ConfigError("propagator.krylov_dim must be >= 2");
    if (!(tol > 0.0)) throw ConfigError("propagator.tol must be > 0");
    if (step < 0.0) throw ConfigError("propagator.step must be >= 0");
    if (workers < 1) throw ConfigError("propagator.workers must be >= 1");
  }
};

/// exp(-i H dt) on one sector by short-iterate Lanczos with adaptive substeps.
class KrylovStepper {
 public:
  KrylovStepper(std::shared_ptr<const BlockOperator> op, const PropagatorConfig& cfg)
      : op_(std::move(op)), cfg_(cfg) {}

  /// Advances x by t >= 0 in place. Returns the number of operator applications.
  int advance(Eigen::VectorXcd& x, double t) {
    int applications = 0;
    double remaining = t;
    const double cap = cfg_.step > 0 ? cfg_.step : std::numeric_limits<double>::infinity();
    if (!(h_ > 0)) h_ = std::min(remaining, cap);
    while (remaining > 0) {
      double h = std::min({h_, remaining, cap});
      const bool truncated = h < h_;
      while (true) {
        const auto outcome = try_step(x, h, applications);
        if (outcome.accepted) {
          remaining -= h;
          // Grow the substep when the Krylov space was comfortably large enough.
          if (!truncated && outcome.used < cfg_.krylov_dim / 2) h_ = std::min(h_ * 1.5, cap);
          break;
        }
        h *= 0.5;
        h_ = h;
        if (h < 1e-14) throw NonConvergence("Krylov substep underflow", outcome.error);
      }
    }
    return applications;
  }

 private:
  struct Outcome {
    bool accepted = false;
    int used = 0;
    double error = 0.0;
  };

  Outcome try_step(Eigen::VectorXcd& x, double h, int& applications) {
    const auto n = static_cast<Eigen::Index>(op_->dim());
    const double beta0 = x.norm();
    if (beta0 == 0.0) return {true, 0, 0.0};
    const int m_max = static_cast<int>(std::min<std::size_t>(cfg_.krylov_dim, op_->dim()));
    if (v_.rows() != n || v_.cols() < m_max) v_.resize(n, m_max);
    v_.col(0) = x / beta0;
    std::vector<double> alpha;
    std::vector<double> beta;
    Eigen::VectorXcd w(n);
    Outcome out;
    for (int j = 0; j < m_max; ++j) {
      op_->apply(v_.col(j).data(), w.data());
      ++applications;
      alpha.push_back(v_.col(j).dot(w).real());
      for (int pass = 0; pass < 2; ++pass) {
        const Eigen::VectorXcd proj = v_.leftCols(j + 1).adjoint() * w;
        w.noalias() -= v_.leftCols(j + 1) * proj;
      }
      const double b = w.norm();
      const int m = j + 1;
      Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
      for (int i = 0; i < m; ++i) {
        t(i, i) = alpha[i];
        if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
      // u = exp(-i T h) e1
      Eigen::VectorXcd phase(m);
      for (int i = 0; i < m; ++i) {
        phase[i] = std::polar(es.eigenvectors()(0, i), -es.eigenvalues()[i] * h);
      }
      const Eigen::VectorXcd u = es.eigenvectors().cast<Complex>() * phase;
      const bool breakdown = b < 1e-12 * std::max(1.0, t.norm());
      out.error = b * std::abs(u[m - 1]);
      out.used = m;
      if (breakdown || out.error < cfg_.tol || m == static_cast<Eigen::Index>(op_->dim())) {
        x.noalias() = beta0 * (v_.leftCols(m) * u);
        out.accepted = true;
        return out;
      }
      if (m == m_max) return out;
      beta.push_back(b);
      v_.col(j + 1) = w / b;
    }
    return out;
  }

  std::shared_ptr<const BlockOperator> op_;
  PropagatorConfig cfg_;
  double h_ = 0.0;
  Eigen::MatrixXcd v_;
};

/// Full eigendecomposition of one sector, reused for every output time.
struct EigenbasisPropagator {
  SectorSpectrum spectrum;

  Eigen::VectorXcd coefficients(const Eigen::VectorXcd& x) const {
    return spectrum.eigenvectors.transpose().cast<Complex>() * x;
  }
  Eigen::VectorXcd at(const Eigen::VectorXcd& coeff, double t) const {
    Eigen::VectorXcd c(coeff.size());
    for (Eigen::Index i = 0; i < coeff.size(); ++i) {
      c[i] = coeff[i] * std::polar(1.0, -spectrum.eigenvalues[i] * t);
    }
    return spectrum.eigenvectors.cast<Complex>() * c;
  }
};

namespace detail {

template <class F>
void parallel_for(std::size_t count, int workers, F&& f) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  const int n = static_cast<int>(std::min<std::size_t>(workers, count));
  for (int t = 0; t < n; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Time evolution of a multi-sector state, stepped forward monotonically.
/// Each sector is propagated independently; per-sector engines are built once
/// and reused for every later time.
class Evolution {
 public:
  Evolution(ManyBodyState initial, ModelParams params, PropagatorConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg), state_(std::move(initial)) {
    cfg_.validate();
    check_state_matches(state_, params_);
    std::size_t budget = cfg_.sparse_budget;
    for (auto& [k, b] : state_.blocks()) {
      Engine e;
      const bool eigen = cfg_.method == PropagatorMethod::kEigenbasis ||
                         (cfg_.method == PropagatorMethod::kAuto && b.basis->dim() <= cfg_.eigen_max_dim);
      if (eigen && b.basis->dim() <= cfg_.eigen_max_dim) {
        e.eigen = EigenbasisPropagator{spectrum_of_sector(*b.basis, params_, cfg_.eigen_max_dim)};
        e.coeff = e.eigen->coefficients(b.amp);
      } else {
        if (eigen) {
          log_info("sector K=" + std::to_string(k) + " dim " + std::to_string(b.basis->dim()) +
                   " exceeds eigenbasis budget " + std::to_string(cfg_.eigen_max_dim) +
                   "; falling back to Krylov");
        }
        auto op = std::make_shared<const BlockOperator>(b.basis, params_, budget > 0, budget);
        budget -= std::min(budget, op->nonzeros());
        e.krylov.emplace(op, cfg_);
      }
      engines_.emplace(k, std::move(e));
    }
  }

  double time() const noexcept { return t_; }
  const ManyBodyState& state() const noexcept { return state_; }
  const ModelParams& params() const noexcept { return params_; }

  /// Advances to absolute time t >= time().
  const ManyBodyState& advance_to(double t) {
    if (t < t_) throw ContractViolation("Evolution cannot step backwards");
    const double dt = t - t_;
    std::vector<int> keys;
    for (const auto& [k, b] : state_.blocks()) keys.push_back(k);
    detail::parallel_for(keys.size(), cfg_.workers, [&](std::size_t i) {
      const int k = keys[i];
      Engine& e = engines_.at(k);
      auto& amp = state_.block(k).amp;
      if (e.eigen) {
        amp = e.eigen->at(e.coeff, t);
      } else if (dt > 0) {
        e.krylov->advance(amp, dt);
      }
    });
    t_ = t;
    return state_;
  }

 private:
  struct Engine {
    std::optional<EigenbasisPropagator> eigen;
    Eigen::VectorXcd coeff;
    std::optional<KrylovStepper> krylov;
  };

  ModelParams params_;
  PropagatorConfig cfg_;
  ManyBodyState state_;
  std::map<int, Engine> engines_;
  double t_ = 0.0;
};

/// exp(-i H t)|state>.
inline ManyBodyState evolve(const ManyBodyState& state, const ModelParams& params, double t,
                            const PropagatorConfig& cfg = {}) {
  if (t < 0) throw ContractViolation("evolve requires t >= 0");
  Evolution ev(state, params, cfg);
  return ev.advance_to(t);
}

/// States at each of the (non-decreasing) times.
inline std::vector<ManyBodyState> evolve_series(const ManyBodyState& state,
                                                const ModelParams& params,
                                                std::span<const double> times,
                                                const PropagatorConfig& cfg = {}) {
  Evolution ev(state, params, cfg);
  std::vector<ManyBodyState> out;
  out.reserve(times.size());
  for (double t : times) out.push_back(ev.advance_to(t));
  return out;
}

}  // namespace ringtc
