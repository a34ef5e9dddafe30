#include "sipfuse_cli/run_config.hpp"

#include <sipfuse/errors.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace sipfuse::cli {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& context) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(context + ": invalid JSON: " + e.what());
  }
  reject_unknown(j, {"data", "model", "train", "seeds", "analysis"}, context);
  if (!j.contains("model")) throw ConfigError(context + ": missing 'model'");

  RunConfig c;
  try {
    if (j.contains("data")) {
      const json& d = j.at("data");
      reject_unknown(d, {"root", "manifest", "cache"}, context + ".data");
      c.data.root = d.value("root", c.data.root);
      c.data.manifest = d.value("manifest", c.data.manifest);
      c.data.cache = d.value("cache", c.data.cache);
    }
    c.model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("seeds")) {
      c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      if (c.seeds.empty()) throw ConfigError(context + ": 'seeds' must not be empty");
      if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
        throw ConfigError(context + ": duplicate seeds");
      }
    } else {
      c.seeds = {c.train.seed};
    }
    if (j.contains("analysis")) {
      const json& a = j.at("analysis");
      reject_unknown(a, {"severity", "system", "shift_sweep", "baseline_run"}, context + ".analysis");
      c.analysis.severity = a.value("severity", c.analysis.severity);
      c.analysis.system = a.value("system", c.analysis.system);
      c.analysis.shift_sweep = a.value("shift_sweep", c.analysis.shift_sweep);
      c.analysis.baseline_run = a.value("baseline_run", c.analysis.baseline_run);
    }
  } catch (const json::exception& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

nlohmann::json to_json(const RunConfig& c) {
  return json{{"data", {{"root", c.data.root}, {"manifest", c.data.manifest}, {"cache", c.data.cache}}},
              {"model", c.model},
              {"train", c.train},
              {"seeds", c.seeds},
              {"analysis",
               {{"severity", c.analysis.severity},
                {"system", c.analysis.system},
                {"shift_sweep", c.analysis.shift_sweep},
                {"baseline_run", c.analysis.baseline_run}}}};
}

std::string data_root(const DataPaths& paths) {
  if (!paths.root.empty()) return paths.root;
  if (const char* env = std::getenv(kDataRootEnv); env != nullptr && *env != '\0') return env;
  return ".";
}

std::string resolve_data_path(const DataPaths& paths, const std::string& file) {
  const std::filesystem::path p(file);
  if (p.is_absolute()) return file;
  return (std::filesystem::path(data_root(paths)) / p).string();
}

}  // namespace sipfuse::cli
