#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mismatch/checkpoint.hpp"
#include "mismatch/network.hpp"
#include "mismatch/synth.hpp"

namespace mismatch {

/// streaming: the unlabeled stream drives the epoch and one labeled batch
/// opens every group of ceil(U/L) unlabeled batches. joint: every step sums
/// a labeled and an unlabeled batch.
enum class Regime { streaming, joint };
/// How the last avg_last_k checkpoints are combined at inference.
enum class Averaging { parameters, predictions };

std::string to_string(Regime regime);
std::string to_string(Averaging averaging);
Regime parse_regime(const std::string& name);
Averaging parse_averaging(const std::string& name);

struct TrainConfig {
  double alpha = 0.002;
  double lr = 2e-5;
  std::size_t epochs = 50;
  std::size_t batch_size = 1;
  Regime regime = Regime::streaming;
  bool stop_gradient = false;
  bool batch_dim_normalize = false;
  std::size_t avg_last_k = 10;
  std::uint64_t seed = 0;
  /// false drops the consistency term from the graph entirely; unlabeled
  /// steps then only advance the optimizer with zero gradients.
  bool consistency_term = true;
  /// Random flips and Gaussian noise on labeled batches (supervised baselines).
  bool augment = false;
  double augment_noise_sigma = 0.1;
  Averaging averaging = Averaging::parameters;
};

void validate(const TrainConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;
  double dice_loss = 0.0;         // mean over labeled steps
  double consistency_loss = 0.0;  // mean unweighted term over unlabeled steps
  double val_iou = 0.0;
  double val_ece = 0.0;
  bool operator==(const EpochMetrics&) const = default;
};

struct TrainData {
  std::span<const Sample> labeled;
  std::span<const Sample> unlabeled;
  std::span<const Sample> validation;  // may be empty
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;  // one per epoch
  std::vector<EpochMetrics> log;
};

/// Trains `net` in place. Data order, augmentation and noise all derive from
/// config.seed; initialisation comes from the seed used to build `net`.
TrainResult train(Network& net, const TrainData& data, const TrainConfig& config,
                  const std::string& config_hash = "");

void write_metrics_csv(std::span<const EpochMetrics> log, const std::filesystem::path& path);

struct Prediction {
  Tensor prob;  // (p1 + p2) / 2, or p1 for a single head
  Tensor mask;  // prob >= 0.5
};

Prediction predict(const Network& net, const Tensor& images);
/// Pure combination rule shared by every inference path.
Prediction combine_heads(const Tensor& p1, const Tensor& p2);

/// Inference-time model: one parameter-averaged network or several
/// checkpoints whose predictions are averaged.
struct AveragedModel {
  std::vector<Network> members;
};

AveragedModel make_averaged_model(const NetworkConfig& config,
                                  std::span<const Checkpoint> checkpoints, std::size_t last_k,
                                  Averaging averaging);
Prediction predict(const AveragedModel& model, const Tensor& images);

struct ImageMetrics {
  std::size_t id = 0;
  double iou = 0.0;
  double dice = 0.0;
  double ece = 0.0;
};

std::vector<ImageMetrics> evaluate(const AveragedModel& model, std::span<const Sample> samples,
                                   std::size_t bins = 5);
void write_image_metrics_csv(std::span<const ImageMetrics> rows, const std::filesystem::path& path);

/// Per-image view of how the two decoders move confidence around the
/// ground-truth boundary band (boundary_band of the mask).
struct AttentionShift {
  std::size_t id = 0;
  double band_p1 = 0.0;  // mean decoder-1 probability over the band
  double band_p2 = 0.0;
  /// Decoder 2's last block, read through its own head: confidence after
  /// the attention gate minus confidence before it.
  double band_delta2 = 0.0;
  double outside_delta2 = 0.0;
};

/// Requires two-headed members; statistics are averaged over members.
std::vector<AttentionShift> attention_shift(const AveragedModel& model, std::span<const Sample> samples);
void write_attention_shift_csv(std::span<const AttentionShift> rows, const std::filesystem::path& path);

}  // namespace mismatch
