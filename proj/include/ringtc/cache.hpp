#pragma once

// On-disk caches share one container: 4-byte magic "RTC1", a version byte, a
// kind byte, then a little-endian payload. Caches are a pure optimization; a
// missing or malformed file is silently recomputed.
//
//   basis payload:    i32 N, i32 K, i32 l_min, i32 l_max, u64 dim, dim*W u8 occupations
//   eigenpair payload: u64 params_hash, i32 K, f64 energy, f64 residual,
//                      u32 iterations, u64 dim, dim*(f64 re, f64 im)

#include <bit>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "ringtc/fock.hpp"

namespace ringtc {

inline constexpr char kCacheMagic[4] = {'R', 'T', 'C', '1'};
inline constexpr std::uint8_t kCacheVersion = 1;

enum class CacheKind : std::uint8_t { kBasis = 1, kEigenpair = 2 };

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void header(CacheKind kind) {
    buf_.append(kCacheMagic, 4);
    u8(kCacheVersion);
    u8(static_cast<std::uint8_t>(kind));
  }
  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : buf_(std::move(bytes)) {}

  bool ok() const noexcept { return ok_; }
  bool at_end() const noexcept { return pos_ == buf_.size(); }

  std::uint8_t u8() {
    if (pos_ >= buf_.size()) {
      ok_ = false;
      return 0;
    }
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(u8()) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  bool header(CacheKind kind) {
    if (buf_.size() < 6 || std::memcmp(buf_.data(), kCacheMagic, 4) != 0) {
      ok_ = false;
      return false;
    }
    pos_ = 4;
    if (u8() != kCacheVersion || u8() != static_cast<std::uint8_t>(kind)) ok_ = false;
    return ok_;
  }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
  bool ok_ = true;
};

inline std::string serialize_basis(const SectorBasis& basis) {
  ByteWriter w;
  w.header(CacheKind::kBasis);
  w.i32(basis.particles());
  w.i32(basis.momentum());
  w.i32(basis.window().l_min);
  w.i32(basis.window().l_max);
  w.u64(basis.dim());
  const int width = basis.window().size();
  for (OccupationKey k : basis.keys()) {
    for (int i = 0; i < width; ++i) w.u8(static_cast<std::uint8_t>(key_occupation(k, width, i)));
  }
  return w.bytes();
}

inline std::optional<SectorBasis> deserialize_basis(std::string bytes) {
  ByteReader r(std::move(bytes));
  if (!r.header(CacheKind::kBasis)) return std::nullopt;
  const int n = r.i32();
  const int k = r.i32();
  ModeWindow w{r.i32(), r.i32()};
  const std::uint64_t dim = r.u64();
  if (!r.ok() || w.l_min > w.l_max || w.size() > kMaxModes) return std::nullopt;
  const int width = w.size();
  if (r.remaining() != dim * static_cast<std::uint64_t>(width)) return std::nullopt;
  std::vector<OccupationKey> keys(dim);
  for (auto& key : keys) {
    key = 0;
    for (int i = 0; i < width; ++i) key |= OccupationKey(r.u8()) << detail::byte_shift(width, i);
  }
  return SectorBasis(n, k, w, std::move(keys));
}

inline std::optional<std::string> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline bool write_file_atomic(const std::filesystem::path& p, const std::string& bytes) {
  std::error_code ec;
  std::filesystem::create_directories(p.parent_path(), ec);
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) return false;
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) return false;
  }
  std::filesystem::rename(tmp, p, ec);
  return !ec;
}

/// Directory for disk caches: $RINGTC_CACHE_DIR if set, else none.
inline std::optional<std::filesystem::path> cache_dir_from_env() {
  if (const char* env = std::getenv("RINGTC_CACHE_DIR"); env && *env) {
    return std::filesystem::path(env);
  }
  return std::nullopt;
}

/// Process-wide memo of sector bases, optionally backed by the disk cache.
class BasisRegistry {
 public:
  static BasisRegistry& instance() {
    static BasisRegistry registry;
    return registry;
  }

  void set_disk_dir(std::optional<std::filesystem::path> dir) {
    std::lock_guard lock(mu_);
    disk_dir_ = std::move(dir);
  }
  std::optional<std::filesystem::path> disk_dir() const {
    std::lock_guard lock(mu_);
    return disk_dir_;
  }

  std::shared_ptr<const SectorBasis> get(int particles, int momentum, const ModeWindow& window) {
    const Key key{particles, momentum, window.l_min, window.l_max};
    std::optional<std::filesystem::path> dir;
    {
      std::lock_guard lock(mu_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
      dir = disk_dir_;
    }
    std::shared_ptr<const SectorBasis> basis;
    if (dir) basis = load(*dir, particles, momentum, window);
    if (!basis) {
      basis = std::make_shared<const SectorBasis>(enumerate_sector(particles, momentum, window));
      if (dir) write_file_atomic(path_for(*dir, particles, momentum, window), serialize_basis(*basis));
    }
    std::lock_guard lock(mu_);
    return memo_.emplace(key, std::move(basis)).first->second;
  }

  void clear() {
    std::lock_guard lock(mu_);
    memo_.clear();
  }

  static std::filesystem::path path_for(const std::filesystem::path& dir, int particles,
                                        int momentum, const ModeWindow& w) {
    return dir / ("basis_N" + std::to_string(particles) + "_K" + std::to_string(momentum) + "_w" +
                  std::to_string(w.l_min) + "_" + std::to_string(w.l_max) + ".rtc");
  }

 private:
  using Key = std::tuple<int, int, int, int>;

  BasisRegistry() : disk_dir_(cache_dir_from_env()) {}

  static std::shared_ptr<const SectorBasis> load(const std::filesystem::path& dir, int particles,
                                                 int momentum, const ModeWindow& window) {
    auto bytes = read_file(path_for(dir, particles, momentum, window));
    if (!bytes) return nullptr;
    auto basis = deserialize_basis(std::move(*bytes));
    if (!basis || basis->particles() != particles || basis->momentum() != momentum ||
        !(basis->window() == window)) {
      return nullptr;
    }
    return std::make_shared<const SectorBasis>(std::move(*basis));
  }

  mutable std::mutex mu_;
  std::map<Key, std::shared_ptr<const SectorBasis>> memo_;
  std::optional<std::filesystem::path> disk_dir_;
};

inline std::shared_ptr<const SectorBasis> sector_basis(int particles, int momentum,
                                                       const ModeWindow& window) {
  return BasisRegistry::instance().get(particles, momentum, window);
}

}  // namespace ringtc
