#pragma once

// Truncated bosonic Fock basis on a window of plane-wave modes exp(i 2 pi l x),
// organized into sectors of fixed particle number N and total momentum 2 pi K.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ringtc/common.hpp"

namespace ringtc {

/// Keys pack one occupation byte per mode, mode l_min in the most significant
/// byte, so numeric order on keys is lexicographic order on occupations.
using OccupationKey = unsigned __int128;

inline constexpr int kMaxModes = 16;
inline constexpr int kMaxParticles = 255;

struct ModeWindow {
  int l_min = -2;
  int l_max = 4;

  constexpr int size() const noexcept { return l_max - l_min + 1; }
  constexpr bool contains(int l) const noexcept { return l >= l_min && l <= l_max; }
  constexpr int offset(int l) const noexcept { return l - l_min; }
  constexpr int mode(int offset) const noexcept { return l_min + offset; }

  friend constexpr bool operator==(const ModeWindow&, const ModeWindow&) = default;

  std::string to_string() const {
    return "[" + std::to_string(l_min) + "," + std::to_string(l_max) + "]";
  }
};

inline void validate_window(const ModeWindow& w) {
  if (w.l_min > w.l_max) {
    throw InvalidWindow("mode window " + w.to_string() + " has l_min > l_max");
  }
  if (w.size() > kMaxModes) {
    throw InvalidWindow("mode window " + w.to_string() + " exceeds " +
                        std::to_string(kMaxModes) + " modes");
  }
}

/// Occupation numbers n_l for l = l_min..l_max.
struct FockOccupation {
  std::vector<int> n;

  int particles() const {
    int s = 0;
    for (int v : n) s += v;
    return s;
  }
  friend bool operator==(const FockOccupation&, const FockOccupation&) = default;
  friend auto operator<=>(const FockOccupation&, const FockOccupation&) = default;
};

namespace detail {

inline constexpr int byte_shift(int width, int offset) { return 8 * (width - 1 - offset); }

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_key(OccupationKey k) {
  const auto lo = static_cast<std::uint64_t>(k);
  const auto hi = static_cast<std::uint64_t>(k >> 64);
  return mix64(lo ^ mix64(hi));
}

}  // namespace detail

/// Unit increment of mode `offset` inside a packed key.
inline OccupationKey mode_unit(int width, int offset) {
  return OccupationKey{1} << detail::byte_shift(width, offset);
}

inline int key_occupation(OccupationKey key, int width, int offset) {
  return static_cast<int>((key >> detail::byte_shift(width, offset)) & 0xFF);
}

inline OccupationKey encode(const FockOccupation& occ) {
  const int width = static_cast<int>(occ.n.size());
  OccupationKey key = 0;
  for (int i = 0; i < width; ++i) {
    key |= OccupationKey(static_cast<std::uint8_t>(occ.n[i])) << detail::byte_shift(width, i);
  }
  return key;
}

inline FockOccupation decode(OccupationKey key, int width) {
  FockOccupation occ;
  occ.n.resize(width);
  for (int i = 0; i < width; ++i) occ.n[i] = key_occupation(key, width, i);
  return occ;
}

/// All occupation vectors with sum n = N and sum l*n = K inside the window,
/// in ascending lexicographic order, with an O(1) reverse index.
class SectorBasis {
 public:
  SectorBasis() = default;

  SectorBasis(int particles, int momentum, ModeWindow window, std::vector<OccupationKey> keys)
      : n_(particles), k_(momentum), window_(window), keys_(std::move(keys)) {
    build_index();
  }

  int particles() const noexcept { return n_; }
  int momentum() const noexcept { return k_; }
  const ModeWindow& window() const noexcept { return window_; }
  std::size_t dim() const noexcept { return keys_.size(); }
  bool empty() const noexcept { return keys_.empty(); }

  std::span<const OccupationKey> keys() const noexcept { return keys_; }
  OccupationKey key(std::size_t i) const { return keys_[i]; }
  FockOccupation state(std::size_t i) const { return decode(keys_[i], window_.size()); }

  /// Ordinal of `key`, or -1 when the occupation is not in this sector.
  std::int64_t find(OccupationKey key) const noexcept {
    if (slots_.empty()) return -1;
    std::size_t pos = detail::hash_key(key) & mask_;
    while (true) {
      const std::uint32_t s = slots_[pos];
      if (s == kEmptySlot) return -1;
      if (keys_[s] == key) return s;
      pos = (pos + 1) & mask_;
    }
  }

  std::int64_t index(const FockOccupation& occ) const noexcept {
    if (static_cast<int>(occ.n.size()) != window_.size()) return -1;
    for (int v : occ.n) {
      if (v < 0 || v > kMaxParticles) return -1;
    }
    return find(encode(occ));
  }

 private:
  static constexpr std::uint32_t kEmptySlot = 0xFFFFFFFFu;

  void build_index() {
    if (keys_.empty()) return;
    const std::size_t cap = std::bit_ceil(keys_.size() * 2 + 1);
    mask_ = cap - 1;
    slots_.assign(cap, kEmptySlot);
    for (std::uint32_t i = 0; i < keys_.size(); ++i) {
      std::size_t pos = detail::hash_key(keys_[i]) & mask_;
      while (slots_[pos] != kEmptySlot) pos = (pos + 1) & mask_;
      slots_[pos] = i;
    }
  }

  int n_ = 0;
  int k_ = 0;
  ModeWindow window_{};
  std::vector<OccupationKey> keys_;
  std::vector<std::uint32_t> slots_;
  std::size_t mask_ = 0;
};

/// Whether momentum K is reachable by N particles in the window.
inline bool sector_reachable(int particles, int momentum, const ModeWindow& w) {
  if (particles == 0) return momentum == 0;
  if (momentum < particles * w.l_min || momentum > particles * w.l_max) return false;
  // Every K in [N*l_min, N*l_max] is reachable for N >= 1: move particles one
  // step up the ladder one at a time.
  return true;
}

inline SectorBasis enumerate_sector(int particles, int momentum, const ModeWindow& window) {
  validate_window(window);
  if (particles < 0 || particles > kMaxParticles) {
    throw ContractViolation("particle number " + std::to_string(particles) +
                            " outside [0, " + std::to_string(kMaxParticles) + "]");
  }
  std::vector<OccupationKey> keys;
  if (!sector_reachable(particles, momentum, window)) {
    return SectorBasis(particles, momentum, window, std::move(keys));
  }

  // Work with offsets j = l - l_min >= 0 and target J = K - N*l_min.
  const int width = window.size();
  const int target = momentum - particles * window.l_min;
  const int top = width - 1;

  std::vector<int> occ(width, 0);
  // Depth-first, ascending occupation at each mode gives lexicographic order.
  auto recurse = [&](auto&& self, int offset, int remaining, int remaining_j,
                     OccupationKey prefix) -> void {
    if (offset == top) {
      // Last mode absorbs all remaining particles.
      if (remaining * top != remaining_j) return;
      keys.push_back(prefix | (OccupationKey(remaining) << detail::byte_shift(width, offset)));
      return;
    }
    for (int v = 0; v <= remaining; ++v) {
      const int r = remaining - v;
      const int rj = remaining_j - v * offset;
      if (rj < 0) break;
      // Remaining modes span offsets offset+1 .. top.
      if (rj < r * (offset + 1) || rj > r * top) continue;
      self(self, offset + 1, r, rj,
           prefix | (OccupationKey(v) << detail::byte_shift(width, offset)));
    }
  };
  if (width == 1) {
    keys.push_back(OccupationKey(particles));
  } else {
    recurse(recurse, 0, particles, target, 0);
  }
  return SectorBasis(particles, momentum, window, std::move(keys));
}

/// Sectors an (N-1)-particle state may occupy after one annihilation from sector K.
inline std::vector<int> sector_span_after_annihilation(int momentum, const ModeWindow& window) {
  validate_window(window);
  std::vector<int> out;
  out.reserve(window.size());
  for (int l = window.l_max; l >= window.l_min; --l) out.push_back(momentum - l);
  return out;
}

/// Number of sectors (K values) reachable by N particles.
inline std::vector<int> reachable_momenta(int particles, const ModeWindow& window) {
  std::vector<int> ks;
  if (particles == 0) return {0};
  for (int k = particles * window.l_min; k <= particles * window.l_max; ++k) ks.push_back(k);
  return ks;
}

}  // namespace ringtc
