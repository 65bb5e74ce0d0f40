#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mismatch/config.hpp"
#include "mismatch/synth.hpp"
#include "mismatch/train.hpp"

namespace mismatch {

struct AblationCell {
  std::string label;
  NetworkConfig network;
  TrainConfig train;
};

/// decoders: MM-a (standard, standard), MM-b (standard, negative),
///           MM-c (standard, positive), MM (positive, negative)
/// alpha:    alpha in {0, 0.0005, 0.001, 0.002, 0.004}
/// dilation: d in {2, 5, 9}
/// stopgrad: on, off
/// baselines: Sup1, Sup2 (flips + noise), Morph (feature dilate/erode), MM
std::vector<std::string> ablation_grids();
std::vector<AblationCell> ablation_cells(const std::string& grid, const RunConfig& base);

struct AblationRun {
  std::string cell;
  std::uint64_t seed = 0;
  double mean_iou = 0.0;
  double mean_dice = 0.0;
  double mean_ece = 0.0;
  std::vector<ImageMetrics> per_image;
};

struct AblationRow {
  std::string cell;
  double mean_iou = 0.0;
  double std_iou = 0.0;  // sample standard deviation over seeds
  std::size_t seeds = 0;
};

struct AblationReport {
  std::string grid;
  std::vector<AblationRun> runs;  // cell-major, seeds ascending
  std::vector<AblationRow> summary;
};

/// Trains and evaluates one configuration; seed offsets both the
/// initialisation and the training stream.
AblationRun run_cell(const AblationCell& cell, const Dataset& data, std::uint64_t seed);

/// Every (cell, seed) pair runs as an isolated task on a bounded pool.
AblationReport run_ablation(const std::string& grid, const RunConfig& base, const Dataset& data,
                            std::size_t seeds, std::size_t threads);

/// MISMATCH_THREADS when set to a positive integer, otherwise the hardware
/// concurrency (at least 1).
std::size_t worker_threads();

/// ablation_summary.csv (cell,mean_iou,std_iou,seeds) and
/// ablation_per_seed.csv (cell,seed,mean_iou,mean_dice,mean_ece).
void write_ablation_csvs(const AblationReport& report, const std::filesystem::path& dir);

}  // namespace mismatch
