#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mismatch/network.hpp"

namespace mismatch {

/// ERF_{f'}/ERF_{f} for a main branch of n+2 KxK layers against a side
/// branch of n layers followed by one K'-wide layer:
/// (K'/K) * sqrt((n+1)/(n+2)).
double analytic_erf_ratio_pasb(double K, double K_prime, std::size_t n);

/// Residual side branch viewed as an ensemble of 2^N paths. Each skip unit's
/// conv is traversed with probability p.
struct PathEnsemble {
  std::size_t skip_units = 2;
  double p = 0.5;
};

/// weight_k = C(N,k) p^k (1-p)^(N-k), k = convs traversed, length N+1.
std::vector<double> path_weights(const PathEnsemble& ensemble);

/// sum_k weight_k * sqrt((n+k)/(n+N)) for an n-layer trunk followed by the
/// residual side branch, relative to the (n+N)-layer plain main branch.
double analytic_erf_ratio_nasb(std::size_t n, const PathEnsemble& ensemble = {});

enum class ErfMode { linearized, as_is };
std::string to_string(ErfMode mode);
ErfMode parse_erf_mode(const std::string& name);

/// Declarative probe stack on a fixed channel count. A `residual` step is
/// y = x + conv(x); `dilation` applies to plain convs.
struct StackStep {
  enum class Kind { conv, residual } kind = Kind::conv;
  std::size_t dilation = 1;
};

struct LayerStack {
  std::string id;
  std::size_t channels = 4;
  std::vector<StackStep> steps;
};

LayerStack plain_stack(std::size_t depth, std::size_t channels = 4);

/// Main branch, PASB side branch and NASB side branch of one decoder block,
/// each behind `prefix_depth` plain 3x3 convs standing in for the layers that
/// feed the block.
struct DecoderBlockStacks {
  LayerStack main;
  LayerStack pasb_side;
  LayerStack nasb_side;
};
DecoderBlockStacks decoder_block_stacks(std::size_t dilation_rate, std::size_t prefix_depth,
                                        std::size_t channels = 4);

/// A forward function built for one seed. The probe differentiates its
/// output at the spatial centre (all channels seeded with 1).
struct ErfProbe {
  Shape input_shape;  // [1, C, H, W]
  std::function<Tensor(const Tensor&)> forward;
};
using ProbeFactory = std::function<ErfProbe(std::uint64_t seed)>;

/// Linearized: positive uniform weights normalised to unit sum per output
/// channel, zero biases, identity activations, no normalisation.
/// As-is: Kaiming-uniform signed weights with ReLU and normalisation.
ProbeFactory stack_probe(const LayerStack& stack, ErfMode mode, std::size_t input_size);

struct ErfReport {
  std::string id;
  ErfMode mode = ErfMode::linearized;
  std::vector<std::uint64_t> seeds;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> gradient_map;   // mean |d out / d input| over seeds and channels
  std::vector<double> per_seed_size;  // erf_size of each seed's own map
  double erf_size = 0.0;              // of the averaged map
  std::size_t peak_row = 0;
  std::size_t peak_col = 0;
  /// Bounding-box extent of the nonzero support (linearized) or thresholded
  /// support (as-is), taken as max(rows, cols).
  std::size_t support_extent = 0;
};

inline constexpr double kErfThreshold = 0.05;

/// sqrt(#pixels with magnitude >= threshold * peak)
double erf_size(std::span<const double> map, double threshold = kErfThreshold);

/// Throws ShapeError if the gradient support touches the input border.
ErfReport measure_erf(const std::string& id, const ProbeFactory& factory, ErfMode mode,
                      std::span<const std::uint64_t> seeds, double threshold = kErfThreshold);
ErfReport measure_erf(const LayerStack& stack, ErfMode mode, std::span<const std::uint64_t> seeds,
                      std::size_t input_size = 32, double threshold = kErfThreshold);

enum class BlockBranch { main, side };
/// Probe of one branch of a trained decoder block, as-is, on random inputs.
ProbeFactory decoder_branch_probe(const Network& net, std::size_t decoder, std::size_t block,
                                  BlockBranch branch, std::size_t input_size);

/// Least-squares fit of sizes ~ c * sqrt(n) through the origin; r2 is the
/// usual centred coefficient of determination.
struct SqrtFit {
  double c = 0.0;
  double r2 = 0.0;
};
SqrtFit fit_sqrt_growth(std::span<const double> depths, std::span<const double> sizes);

void write_erf_summary_csv(std::span<const ErfReport> reports, const std::filesystem::path& path);

}  // namespace mismatch
