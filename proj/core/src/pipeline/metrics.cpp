#include "sentlat/pipeline/metrics.hpp"

#include <fstream>
#include <stdexcept>

namespace sentlat::pipeline {

void MetricsLog::append(const std::string& kind, nlohmann::json record) const {
  record["schema_version"] = kMetricsSchemaVersion;
  record["kind"] = kind;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + path_.string());
  out << record.dump() << '\n';
  out.flush();
}

std::vector<nlohmann::json> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

}  // namespace sentlat::pipeline
