#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gem/param_vector.hpp"

namespace gem {

struct CheckpointEntry {
  std::string name;
  std::string kind;
  nlohmann::json spec;
  ParamVector params;
};

/// Named parameter blocks plus free-form metadata.
///
/// On-disk layout:
///   "GEMCKPT\n"
///   "format_version <int>\n"
///   "header_bytes <int>\n"
///   <header JSON: metadata + per-entry spec and segment table>
///   packed little-endian float64 payload, entries in header order
class Checkpoint {
 public:
  static constexpr int kFormatVersion = 1;

  nlohmann::json metadata = nlohmann::json::object();

  void add(std::string name, std::string kind, nlohmann::json spec, ParamVector params);
  bool has(const std::string& name) const;
  const CheckpointEntry& get(const std::string& name) const;
  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<CheckpointEntry> entries_;
};

/// Throws FormatError("shape mismatch ...") naming the first segment of
/// `entry` that differs from `expected`.
void expect_layout(const CheckpointEntry& entry, const ParamLayout& expected);

}  // namespace gem
