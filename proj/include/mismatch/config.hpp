#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mismatch/erf.hpp"
#include "mismatch/network.hpp"
#include "mismatch/synth.hpp"
#include "mismatch/train.hpp"

namespace mismatch {

using json = nlohmann::json;

struct ErfConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t input_size = 32;
  double threshold = kErfThreshold;
  std::size_t max_plain_depth = 8;
  std::size_t prefix_depth = 2;
  std::size_t channels = 4;
  ErfMode mode = ErfMode::linearized;
};

struct CalibrateConfig {
  std::size_t bins = 5;
  double lo = 0.5;
  double hi = 1.0;
};

struct AblateConfig {
  std::string grid = "decoders";
  std::size_t seeds = 5;
};

/// Every section and key is optional; absent values take the defaults above.
struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  DatasetSpec data;
  ErfConfig erf;
  CalibrateConfig calibrate;
  AblateConfig ablate;
};

json to_json(const NetworkConfig& c);
json to_json(const TrainConfig& c);
json to_json(const DatasetSpec& c);
json to_json(const ErfConfig& c);
json to_json(const CalibrateConfig& c);
json to_json(const AblateConfig& c);
json to_json(const RunConfig& c);

/// Strict readers: unknown keys and wrong types raise ConfigError naming the
/// dotted field path. Values are validated after defaults are applied.
NetworkConfig network_config_from_json(const json& j);
TrainConfig train_config_from_json(const json& j);
DatasetSpec dataset_spec_from_json(const json& j);
ErfConfig erf_config_from_json(const json& j);
CalibrateConfig calibrate_config_from_json(const json& j);
AblateConfig ablate_config_from_json(const json& j);
RunConfig run_config_from_json(const json& j);

/// Parses a JSON file. An empty path yields all defaults.
RunConfig load_run_config(const std::filesystem::path& path);
/// Writes the fully resolved config (pretty JSON, trailing newline).
void write_resolved_config(const RunConfig& config, const std::filesystem::path& path);

/// FNV-1a 64 over the compact JSON dump, as 16 hex digits.
std::string config_fingerprint(const json& j);

}  // namespace mismatch
