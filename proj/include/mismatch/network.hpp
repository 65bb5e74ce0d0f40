#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mismatch/error.hpp"
#include "mismatch/tensor.hpp"

namespace mismatch {

/// Decoder block flavour: plain U-net block (f_d0), positive attention
/// shifting (f_d1, dilated side branch) or negative attention shifting
/// (f_d2, residual side branch).
enum class BlockKind { standard, positive_attention, negative_attention };
enum class AttentionMode { multiplicative, residual };
/// Fixed feature-level morphology applied after each decoder block (the
/// Morph baseline). `none` for every learned variant.
enum class FeatureMorph { none, dilate, erode };

std::string to_string(BlockKind kind);
std::string to_string(AttentionMode mode);
std::string to_string(FeatureMorph morph);
BlockKind parse_block_kind(const std::string& name);
AttentionMode parse_attention_mode(const std::string& name);
FeatureMorph parse_feature_morph(const std::string& name);

struct NetworkConfig {
  std::size_t width = 8;
  std::size_t depth = 3;
  std::size_t dilation_rate = 5;
  BlockKind decoder1_kind = BlockKind::positive_attention;
  BlockKind decoder2_kind = BlockKind::negative_attention;
  AttentionMode attention_mode = AttentionMode::multiplicative;
  std::size_t in_channels = 1;
  std::size_t out_classes = 1;
  /// Training image side; used to check the deepest level keeps >= 4 px.
  std::size_t input_size = 32;
  /// 2 for every MisMatch variant; 1 builds a plain single-decoder U-net.
  std::size_t heads = 2;
  FeatureMorph decoder1_morph = FeatureMorph::none;
  FeatureMorph decoder2_morph = FeatureMorph::none;
  std::size_t morph_radius = 1;
};

/// Throws ConfigError naming the first offending field.
void validate(const NetworkConfig& config);

struct ConvLayer {
  ConvSpec spec;
  Tensor weight;
  Tensor bias;

  Tensor operator()(const Tensor& x) const { return conv2d(x, spec, weight, bias); }
};

/// conv -> ReLU -> instance normalisation
struct ConvUnit {
  ConvLayer conv;
  Tensor gain;
  Tensor shift;

  Tensor operator()(const Tensor& x) const;
};

/// The main branch of every decoder block and every encoder stage.
struct DoubleConv {
  ConvUnit first;
  ConvUnit second;

  Tensor operator()(const Tensor& x) const { return second(first(x)); }
};

/// PASB side branch: one dilated 3x3 conv. NASB side branch: two residual
/// conv units, with a 1x1 projection on the first skip when channels differ.
struct SideBranch {
  std::optional<ConvLayer> dilated;
  std::vector<ConvUnit> residual_units;
  std::optional<ConvLayer> projection;

  Tensor operator()(const Tensor& x) const;
};

struct DecoderBlock {
  BlockKind kind = BlockKind::standard;
  ConvLayer up;  // applied after nearest-neighbour x2 upsampling
  DoubleConv main;
  SideBranch side;
};

struct Decoder {
  std::vector<DecoderBlock> blocks;  // deepest first
  ConvLayer head;                    // 1x1 to out_classes, then sigmoid
  FeatureMorph morph = FeatureMorph::none;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Stable name -> tensor map in registration order.
class ParameterRegistry {
 public:
  void add(std::string name, Tensor tensor);
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<Tensor> tensors() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct Network {
  NetworkConfig config;
  std::vector<DoubleConv> encoder;  // depth stages then the bottleneck
  std::vector<Decoder> decoders;    // config.heads entries
  ParameterRegistry registry;

  std::size_t parameter_count() const;
  std::vector<NamedTensor> snapshot() const;
  /// Copies values by name; names and shapes must match exactly.
  void load(const std::vector<NamedTensor>& params);
  /// Independent copy whose parameters do not require gradients, so forward
  /// passes build no graph.
  Network inference_copy() const;
  void zero_grad();
};

/// Kaiming-uniform fan-in weights, zero biases, unit gains, zero shifts; all
/// drawn from one stream seeded by `seed` in registration order.
Network build_network(const NetworkConfig& config, std::uint64_t seed);

struct BranchOutput {
  Tensor out;
  Tensor attention;
  Tensor features;  // main(x) before gating
};

/// out = main(x) * a  (multiplicative) or main(x) * (1 + a)  (residual),
/// a = sigmoid(side(x)).
BranchOutput pasb_forward(const Tensor& x, const DoubleConv& main, const SideBranch& side,
                          AttentionMode mode);
BranchOutput nasb_forward(const Tensor& x, const DoubleConv& main, const SideBranch& side,
                          AttentionMode mode);

struct BlockTap {
  std::size_t block = 0;
  BlockKind kind = BlockKind::standard;
  Tensor pre_attention;
  Tensor attention;  // undefined for standard blocks
  Tensor post_attention;
};

struct ForwardResult {
  Tensor p1;
  Tensor p2;  // undefined for single-head networks
  std::vector<BlockTap> taps1;
  std::vector<BlockTap> taps2;
};

ForwardResult forward(const Network& net, const Tensor& images);

}  // namespace mismatch
