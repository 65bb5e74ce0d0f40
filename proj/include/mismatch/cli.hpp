#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mismatch/config.hpp"
#include "mismatch/train.hpp"

namespace mismatch {

/// Entry point for `mismatch <subcommand> ...`. Returns the process exit
/// code; failures print a single diagnostic line to stderr.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, const char* const* argv);

struct LoadedModel {
  AveragedModel model;
  RunConfig config;
};

/// Accepts a checkpoint directory (manifest.json) or a training run
/// directory, whose epoch checkpoints are averaged as configured.
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace mismatch
