#include "mismatch/checkpoint.hpp"

#include <fstream>

#include "mismatch/config.hpp"
#include "mismatch/mmt.hpp"

namespace mismatch {

namespace fs = std::filesystem;

Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty()) throw std::invalid_argument("average_checkpoints: no checkpoints");
  const Checkpoint& first = checkpoints.front();
  for (const auto& c : checkpoints) {
    if (c.params.size() != first.params.size()) {
      throw std::invalid_argument("average_checkpoints: registries differ in size");
    }
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      if (c.params[i].name != first.params[i].name || c.params[i].shape != first.params[i].shape) {
        throw std::invalid_argument("average_checkpoints: parameter '" + c.params[i].name +
                                    "' does not match '" + first.params[i].name + "'");
      }
    }
  }
  Checkpoint out;
  out.epoch = checkpoints.back().epoch;
  out.config_hash = first.config_hash;
  out.params = first.params;
  const double k = static_cast<double>(checkpoints.size());
  for (std::size_t i = 0; i < out.params.size(); ++i) {
    auto& acc = out.params[i].values;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (const auto& c : checkpoints) {
      const auto& v = c.params[i].values;
      for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += v[e];
    }
    for (auto& v : acc) v /= k;
  }
  return out;
}

void write_checkpoint(const fs::path& dir, const NetworkConfig& network, std::uint64_t seed,
                      const Checkpoint& checkpoint) {
  fs::create_directories(dir / "params");
  json params = json::array();
  for (const auto& p : checkpoint.params) {
    const std::string file = "params/" + p.name + ".mmt";
    write_mmt(dir / file, p.shape, p.values);
    params.push_back({{"name", p.name}, {"shape", p.shape}, {"file", file}});
  }
  const json manifest{{"format_version", 1},
                      {"network", to_json(network)},
                      {"seed", seed},
                      {"epoch", checkpoint.epoch},
                      {"config_hash", checkpoint.config_hash},
                      {"parameters", params}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write '" + (dir / "manifest.json").string() + "'");
  out << manifest.dump(2) << '\n';
}

StoredCheckpoint read_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no checkpoint manifest in '" + dir.string() + "'");
  const json manifest = json::parse(in);
  if (manifest.at("format_version").get<int>() != 1) {
    throw FormatError("unsupported checkpoint format version");
  }
  StoredCheckpoint s;
  s.network = network_config_from_json(manifest.at("network"));
  s.seed = manifest.at("seed").get<std::uint64_t>();
  s.checkpoint.epoch = manifest.at("epoch").get<std::size_t>();
  s.checkpoint.config_hash = manifest.at("config_hash").get<std::string>();
  for (const auto& p : manifest.at("parameters")) {
    NamedTensor t;
    t.name = p.at("name").get<std::string>();
    t.shape = p.at("shape").get<Shape>();
    auto arr = read_mmt(dir / p.at("file").get<std::string>());
    if (arr.shape != t.shape) {
      throw FormatError("checkpoint parameter '" + t.name + "': shape " + shape_string(arr.shape) +
                        " disagrees with manifest " + shape_string(t.shape));
    }
    t.values = std::move(arr.values);
    s.checkpoint.params.push_back(std::move(t));
  }
  return s;
}

Network restore_network(const StoredCheckpoint& stored) {
  Network net = build_network(stored.network, stored.seed);
  net.load(stored.checkpoint.params);
  return net.inference_copy();
}

}  // namespace mismatch
