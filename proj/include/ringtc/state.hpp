#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <memory>
#include <string>

#include "ringtc/cache.hpp"
#include "ringtc/fock.hpp"

namespace ringtc {

/// Amplitudes of one momentum sector.
struct SectorBlock {
  std::shared_ptr<const SectorBasis> basis;
  Eigen::VectorXcd amp;

  double norm2() const { return amp.squaredNorm(); }
};

/// Fixed-N state as a direct sum of momentum sectors. Blocks are keyed by K and
/// iterated in ascending K, which fixes every reduction order.
class ManyBodyState {
 public:
  ManyBodyState() = default;
  ManyBodyState(int particles, ModeWindow window) : n_(particles), window_(window) {}

  int particles() const noexcept { return n_; }
  const ModeWindow& window() const noexcept { return window_; }

  const std::map<int, SectorBlock>& blocks() const noexcept { return blocks_; }
  std::map<int, SectorBlock>& blocks() noexcept { return blocks_; }

  bool has_block(int k) const { return blocks_.count(k) != 0; }
  const SectorBlock& block(int k) const {
    auto it = blocks_.find(k);
    if (it == blocks_.end()) throw ContractViolation("state has no block K=" + std::to_string(k));
    return it->second;
  }
  SectorBlock& block(int k) {
    auto it = blocks_.find(k);
    if (it == blocks_.end()) throw ContractViolation("state has no block K=" + std::to_string(k));
    return it->second;
  }

  /// Adds (or replaces) sector K with zero amplitudes and returns it.
  SectorBlock& add_block(int k) {
    auto basis = sector_basis(n_, k, window_);
    SectorBlock b{basis, Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(basis->dim()))};
    return blocks_[k] = std::move(b);
  }

  void set_block(int k, std::shared_ptr<const SectorBasis> basis, Eigen::VectorXcd amp) {
    if (!basis || basis->particles() != n_ || basis->momentum() != k ||
        !(basis->window() == window_) || static_cast<std::size_t>(amp.size()) != basis->dim()) {
      throw ContractViolation("block does not match basis for K=" + std::to_string(k));
    }
    blocks_[k] = SectorBlock{std::move(basis), std::move(amp)};
  }

  double norm2() const {
    double s = 0.0;
    for (const auto& [k, b] : blocks_) s += b.norm2();
    return s;
  }
  double norm() const { return std::sqrt(norm2()); }

  /// Scales to unit norm and returns the previous norm squared.
  double normalize() {
    const double n2 = norm2();
    if (!(n2 > 0.0)) throw EmptyState("cannot normalize a zero state");
    const double s = 1.0 / std::sqrt(n2);
    for (auto& [k, b] : blocks_) b.amp *= s;
    return n2;
  }

  ManyBodyState& operator*=(Complex c) {
    for (auto& [k, b] : blocks_) b.amp *= c;
    return *this;
  }

  std::size_t total_dim() const {
    std::size_t d = 0;
    for (const auto& [k, b] : blocks_) d += b.basis->dim();
    return d;
  }

  /// Single-sector state with unit amplitude on one occupation.
  static ManyBodyState fock(const FockOccupation& occ, const ModeWindow& window) {
    if (static_cast<int>(occ.n.size()) != window.size()) {
      throw ContractViolation("occupation length does not match window");
    }
    int n = 0;
    int k = 0;
    for (int i = 0; i < window.size(); ++i) {
      n += occ.n[i];
      k += occ.n[i] * window.mode(i);
    }
    ManyBodyState s(n, window);
    auto& b = s.add_block(k);
    const auto idx = b.basis->index(occ);
    if (idx < 0) throw ContractViolation("occupation not found in its own sector");
    b.amp[idx] = 1.0;
    return s;
  }

 private:
  int n_ = 0;
  ModeWindow window_{};
  std::map<int, SectorBlock> blocks_;
};

/// <a|b> summed over common sectors.
inline Complex inner(const ManyBodyState& a, const ManyBodyState& b) {
  Complex s = 0.0;
  for (const auto& [k, ba] : a.blocks()) {
    auto it = b.blocks().find(k);
    if (it == b.blocks().end()) continue;
    s += ba.amp.dot(it->second.amp);
  }
  return s;
}

/// |<a|b>| / (|a| |b|).
inline double fidelity(const ManyBodyState& a, const ManyBodyState& b) {
  return std::abs(inner(a, b)) / std::sqrt(a.norm2() * b.norm2());
}

/// a*x + b*y over the union of sectors.
inline ManyBodyState linear_combination(Complex a, const ManyBodyState& x, Complex b,
                                        const ManyBodyState& y) {
  if (x.particles() != y.particles() || !(x.window() == y.window())) {
    throw ContractViolation("linear combination of incompatible states");
  }
  ManyBodyState out(x.particles(), x.window());
  for (const auto& [k, bx] : x.blocks()) out.set_block(k, bx.basis, a * bx.amp);
  for (const auto& [k, by] : y.blocks()) {
    if (out.has_block(k)) {
      out.block(k).amp += b * by.amp;
    } else {
      out.set_block(k, by.basis, b * by.amp);
    }
  }
  return out;
}

}  // namespace ringtc
