#pragma once

#include <sipfuse/model.hpp>
#include <sipfuse/training.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace sipfuse::cli {

/// Environment variable naming the default data root.
inline constexpr const char* kDataRootEnv = "SIPFUSE_DATA_ROOT";

struct DataPaths {
  std::string root;  // empty: $SIPFUSE_DATA_ROOT, then the working directory
  std::string manifest = "manifest.csv";
  std::string cache = "cache.fcache";
};

struct AnalysisToggles {
  bool severity = true;
  bool system = true;
  bool shift_sweep = false;
  std::string baseline_run;  // run directory used as baseline in system reports
};

struct RunConfig {
  DataPaths data;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds;
  AnalysisToggles analysis;
};

/// Parses and validates a JSON run description. Unknown keys at any level
/// raise ConfigError.
RunConfig parse_run_config(const std::string& text, const std::string& context = "config");
RunConfig load_run_config(const std::string& path);
nlohmann::json to_json(const RunConfig& c);

/// The configured data root, falling back to $SIPFUSE_DATA_ROOT and then ".".
std::string data_root(const DataPaths& paths);
/// `file` unchanged when absolute, otherwise joined to data_root().
std::string resolve_data_path(const DataPaths& paths, const std::string& file);

}  // namespace sipfuse::cli
