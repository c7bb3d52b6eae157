#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

namespace sentlat::pipeline {

inline constexpr int kMetricsSchemaVersion = 1;

/// Append-only JSONL log. Every record gets "schema_version" and "kind";
/// each append opens, writes one line and flushes.
class MetricsLog {
 public:
  explicit MetricsLog(std::filesystem::path path) : path_(std::move(path)) {}

  void append(const std::string& kind, nlohmann::json record) const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Every record of a metrics file, in order.
std::vector<nlohmann::json> read_metrics(const std::filesystem::path& path);

}  // namespace sentlat::pipeline
