#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mismatch/network.hpp"

namespace mismatch {

struct Checkpoint {
  std::size_t epoch = 0;
  std::vector<NamedTensor> params;  // registry order
  std::string config_hash;
};

/// Elementwise mean per parameter. Every checkpoint must carry the same
/// names and shapes in the same order.
Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints);

struct StoredCheckpoint {
  NetworkConfig network;
  std::uint64_t seed = 0;
  Checkpoint checkpoint;
};

/// <dir>/manifest.json plus <dir>/params/<name>.mmt per parameter.
void write_checkpoint(const std::filesystem::path& dir, const NetworkConfig& network,
                      std::uint64_t seed, const Checkpoint& checkpoint);
StoredCheckpoint read_checkpoint(const std::filesystem::path& dir);

/// Rebuilds a network from a stored checkpoint; parameters do not require grad.
Network restore_network(const StoredCheckpoint& stored);

}  // namespace mismatch
