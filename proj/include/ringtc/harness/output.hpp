#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "ringtc/harness/config.hpp"

namespace ringtc::harness {

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw ComputeError("SHA-256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

/// Shortest round-trip decimal form of a double.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Comma-separated rows with a header, LF endings.
class Csv {
 public:
  explicit Csv(const std::vector<std::string>& header) { row_strings(header); }

  template <typename... Ts>
  void row(const Ts&... vals) {
    std::string line;
    ((line += cell(vals), line += ','), ...);
    line.back() = '\n';
    text_ += line;
  }

  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      text_ += cells[i];
      text_ += i + 1 < cells.size() ? ',' : '\n';
    }
  }

  const std::string& str() const noexcept { return text_; }

 private:
  static std::string cell(double v) { return fmt(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }
  template <typename T>
  static std::string cell(const std::optional<T>& v) {
    return v ? cell(*v) : std::string();
  }

  std::string text_;
};

struct ManifestEntry {
  std::string path;
  std::string sha256;
  std::size_t bytes = 0;
};

/// Output directory that remembers every file it writes, for the manifest.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec || !std::filesystem::is_directory(root_)) {
      throw ConfigError("output_dir '" + root_.string() + "' is not writable: " + ec.message());
    }
  }

  const std::filesystem::path& root() const noexcept { return root_; }
  const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }

  void write(const std::string& name, const std::string& bytes) {
    const auto path = root_ / name;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ComputeError("cannot write '" + path.string() + "'");
    entries_.push_back({name, sha256_hex(bytes), bytes.size()});
  }
  void write(const std::string& name, const Csv& csv) { write(name, csv.str()); }
  void write(const std::string& name, const Json& j) { write(name, j.dump(2) + "\n"); }

 private:
  std::filesystem::path root_;
  std::vector<ManifestEntry> entries_;
};

inline std::string utc_timestamp(std::chrono::system_clock::time_point tp) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

#ifndef RINGTC_VERSION
#define RINGTC_VERSION "0.0.0"
#endif

inline constexpr const char* kVersion = RINGTC_VERSION;

/// manifest.json: full config, code version, seeds, timing and a SHA-256 for
/// every output file. Written last; it does not list itself.
inline Json make_manifest(const RunConfig& cfg, const OutputDir& out,
                          std::chrono::system_clock::time_point started, double wall_seconds) {
  Json files = Json::array();
  for (const auto& e : out.entries()) {
    files.push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
  }
  return {{"tool", "ringtc"},
          {"version", kVersion},
          {"experiment", cfg.experiment},
          {"config", to_json(cfg)},
          {"seeds", cfg.resolved_seeds()},
          {"started_utc", utc_timestamp(started)},
          {"wall_clock_seconds", wall_seconds},
          {"files", files}};
}

}  // namespace ringtc::harness
