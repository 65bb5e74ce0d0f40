#include "mismatch/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mismatch {

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::standard: return "standard";
    case BlockKind::positive_attention: return "positive_attention";
    case BlockKind::negative_attention: return "negative_attention";
  }
  return "?";
}

std::string to_string(AttentionMode mode) {
  return mode == AttentionMode::multiplicative ? "multiplicative" : "residual";
}

std::string to_string(FeatureMorph morph) {
  switch (morph) {
    case FeatureMorph::none: return "none";
    case FeatureMorph::dilate: return "dilate";
    case FeatureMorph::erode: return "erode";
  }
  return "?";
}

BlockKind parse_block_kind(const std::string& name) {
  if (name == "standard") return BlockKind::standard;
  if (name == "positive_attention") return BlockKind::positive_attention;
  if (name == "negative_attention") return BlockKind::negative_attention;
  throw std::invalid_argument("unknown block kind '" + name + "'");
}

AttentionMode parse_attention_mode(const std::string& name) {
  if (name == "multiplicative") return AttentionMode::multiplicative;
  if (name == "residual") return AttentionMode::residual;
  throw std::invalid_argument("unknown attention mode '" + name + "'");
}

FeatureMorph parse_feature_morph(const std::string& name) {
  if (name == "none") return FeatureMorph::none;
  if (name == "dilate") return FeatureMorph::dilate;
  if (name == "erode") return FeatureMorph::erode;
  throw std::invalid_argument("unknown feature morph '" + name + "'");
}

void validate(const NetworkConfig& c) {
  if (c.width < 4) throw ConfigError("width", "must be >= 4");
  if (c.depth < 2) throw ConfigError("depth", "must be >= 2");
  if (c.dilation_rate < 1) throw ConfigError("dilation_rate", "must be >= 1");
  if (c.in_channels < 1) throw ConfigError("in_channels", "must be >= 1");
  if (c.out_classes != 1) throw ConfigError("out_classes", "only binary (1) is supported");
  if (c.heads != 1 && c.heads != 2) throw ConfigError("heads", "must be 1 or 2");
  if (c.input_size % (std::size_t{1} << c.depth) != 0) {
    throw ConfigError("input_size", "must be divisible by 2^depth");
  }
  if ((c.input_size >> c.depth) < 4) {
    throw ConfigError("input_size", "deepest level must keep at least 4 pixels");
  }
  if (c.morph_radius < 1) throw ConfigError("morph_radius", "must be >= 1");
}

Tensor ConvUnit::operator()(const Tensor& x) const {
  return normalize_features(relu(conv(x)), gain, shift);
}

Tensor SideBranch::operator()(const Tensor& x) const {
  if (dilated) return (*dilated)(x);
  Tensor h = x;
  for (std::size_t i = 0; i < residual_units.size(); ++i) {
    const Tensor skip = (i == 0 && projection) ? (*projection)(h) : h;
    h = add(skip, residual_units[i](h));
  }
  return h;
}

void ParameterRegistry::add(std::string name, Tensor tensor) {
  if (contains(name)) throw std::logic_error("duplicate parameter name '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor& ParameterRegistry::at(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

bool ParameterRegistry::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

std::vector<Tensor> ParameterRegistry::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : registry.entries()) n += t.numel();
  return n;
}

std::vector<NamedTensor> Network::snapshot() const {
  std::vector<NamedTensor> out;
  out.reserve(registry.size());
  for (const auto& [name, t] : registry.entries()) {
    out.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  }
  return out;
}

void Network::load(const std::vector<NamedTensor>& params) {
  if (params.size() != registry.size()) {
    throw std::invalid_argument("parameter set has " + std::to_string(params.size()) +
                                " entries, network expects " + std::to_string(registry.size()));
  }
  for (const auto& p : params) {
    if (!registry.contains(p.name)) {
      throw std::invalid_argument("unknown parameter '" + p.name + "'");
    }
    Tensor t = registry.at(p.name);
    if (t.shape() != p.shape || p.values.size() != t.numel()) {
      throw std::invalid_argument("parameter '" + p.name + "' has shape " +
                                  shape_string(p.shape) + ", expected " + shape_string(t.shape()));
    }
    std::copy(p.values.begin(), p.values.end(), t.mutable_data().begin());
  }
}

Network Network::inference_copy() const {
  Network copy = build_network(config, 0);
  copy.load(snapshot());
  for (auto& [name, t] : copy.registry.entries()) {
    Tensor handle = t;
    handle.set_requires_grad(false);
  }
  return copy;
}

void Network::zero_grad() {
  for (auto& [name, t] : registry.entries()) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

namespace {

class Builder {
 public:
  Builder(Network& net, std::uint64_t seed) : net_(net), rng_(seed) {}

  ConvLayer conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel,
                 std::size_t dilation = 1) {
    ConvLayer layer;
    layer.spec = ConvSpec{cin, cout, kernel, dilation, ConvSpec::same_padding(kernel, dilation), 1};
    const std::size_t fan_in = cin * kernel * kernel;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(cout * fan_in);
    for (auto& v : w) v = dist(rng_);
    layer.weight = Tensor::from({cout, cin, kernel, kernel}, std::move(w), true);
    layer.bias = Tensor::zeros({cout}, true);
    net_.registry.add(name + ".weight", layer.weight);
    net_.registry.add(name + ".bias", layer.bias);
    return layer;
  }

  ConvUnit unit(const std::string& name, std::size_t cin, std::size_t cout) {
    ConvUnit u;
    u.conv = conv(name + ".conv", cin, cout, 3);
    u.gain = Tensor::full({cout}, 1.0, true);
    u.shift = Tensor::zeros({cout}, true);
    net_.registry.add(name + ".norm.gain", u.gain);
    net_.registry.add(name + ".norm.shift", u.shift);
    return u;
  }

  DoubleConv double_conv(const std::string& name, std::size_t cin, std::size_t cout) {
    DoubleConv d;
    d.first = unit(name + ".unit1", cin, cout);
    d.second = unit(name + ".unit2", cout, cout);
    return d;
  }

  DecoderBlock decoder_block(const std::string& name, BlockKind kind, std::size_t cin_deep,
                             std::size_t cout, std::size_t dilation) {
    DecoderBlock b;
    b.kind = kind;
    b.up = conv(name + ".up", cin_deep, cout, 3);
    const std::size_t cin = 2 * cout;  // skip concatenated with upsampled features
    b.main = double_conv(name + ".main", cin, cout);
    if (kind == BlockKind::positive_attention) {
      b.side.dilated = conv(name + ".side.dilated", cin, cout, 3, dilation);
    } else if (kind == BlockKind::negative_attention) {
      b.side.residual_units.push_back(unit(name + ".side.res1", cin, cout));
      if (cin != cout) b.side.projection = conv(name + ".side.proj", cin, cout, 1);
      b.side.residual_units.push_back(unit(name + ".side.res2", cout, cout));
    }
    return b;
  }

 private:
  Network& net_;
  std::mt19937_64 rng_;
};

}  // namespace

Network build_network(const NetworkConfig& config, std::uint64_t seed) {
  validate(config);
  Network net;
  net.config = config;
  Builder b(net, seed);
  const std::size_t w = config.width;

  std::size_t cin = config.in_channels;
  for (std::size_t level = 0; level <= config.depth; ++level) {
    const std::size_t cout = w << level;
    const std::string name =
        level == config.depth ? std::string("bottleneck") : "enc" + std::to_string(level);
    net.encoder.push_back(b.double_conv(name, cin, cout));
    cin = cout;
  }

  const BlockKind kinds[2] = {config.decoder1_kind, config.decoder2_kind};
  const FeatureMorph morphs[2] = {config.decoder1_morph, config.decoder2_morph};
  for (std::size_t h = 0; h < config.heads; ++h) {
    Decoder dec;
    dec.morph = morphs[h];
    const std::string prefix = "dec" + std::to_string(h + 1);
    for (std::size_t i = 0; i < config.depth; ++i) {
      const std::size_t level = config.depth - 1 - i;
      dec.blocks.push_back(b.decoder_block(prefix + ".block" + std::to_string(i), kinds[h],
                                           w << (level + 1), w << level, config.dilation_rate));
    }
    dec.head = b.conv(prefix + ".head", w, config.out_classes, 1);
    net.decoders.push_back(std::move(dec));
  }
  return net;
}

namespace {

Tensor gate(const Tensor& features, const Tensor& attention, AttentionMode mode) {
  return mode == AttentionMode::multiplicative ? mul(features, attention)
                                               : mul(features, add_scalar(attention, 1.0));
}

}  // namespace

BranchOutput pasb_forward(const Tensor& x, const DoubleConv& main, const SideBranch& side,
                          AttentionMode mode) {
  if (!side.dilated) throw std::invalid_argument("pasb_forward: side branch has no dilated conv");
  const Tensor features = main(x);
  const Tensor attention = sigmoid(side(x));
  return {gate(features, attention, mode), attention, features};
}

BranchOutput nasb_forward(const Tensor& x, const DoubleConv& main, const SideBranch& side,
                          AttentionMode mode) {
  if (side.residual_units.empty()) {
    throw std::invalid_argument("nasb_forward: side branch has no residual units");
  }
  const Tensor features = main(x);
  const Tensor attention = sigmoid(side(x));
  return {gate(features, attention, mode), attention, features};
}

namespace {

Tensor run_decoder(const Decoder& dec, const NetworkConfig& config, Tensor x,
                   const std::vector<Tensor>& skips, std::vector<BlockTap>& taps) {
  for (std::size_t i = 0; i < dec.blocks.size(); ++i) {
    const DecoderBlock& block = dec.blocks[i];
    const Tensor up = block.up(resample(x, ResampleMode::upsample2_nearest));
    const Tensor cat = concat_channels(skips[skips.size() - 1 - i], up);
    BlockTap tap;
    tap.block = i;
    tap.kind = block.kind;
    switch (block.kind) {
      case BlockKind::standard:
        x = block.main(cat);
        tap.pre_attention = x;
        break;
      case BlockKind::positive_attention: {
        auto r = pasb_forward(cat, block.main, block.side, config.attention_mode);
        x = r.out;
        tap.pre_attention = r.features;
        tap.attention = r.attention;
        break;
      }
      case BlockKind::negative_attention: {
        auto r = nasb_forward(cat, block.main, block.side, config.attention_mode);
        x = r.out;
        tap.pre_attention = r.features;
        tap.attention = r.attention;
        break;
      }
    }
    if (dec.morph != FeatureMorph::none) {
      x = morph_filter(x, dec.morph == FeatureMorph::dilate ? MorphOp::dilate : MorphOp::erode,
                       config.morph_radius);
    }
    tap.post_attention = x;
    taps.push_back(std::move(tap));
  }
  return sigmoid(dec.head(x));
}

}  // namespace

ForwardResult forward(const Network& net, const Tensor& images) {
  const auto& config = net.config;
  if (images.rank() != 4 || images.dim(1) != config.in_channels) {
    throw ShapeError("forward: expected [N," + std::to_string(config.in_channels) +
                     ",H,W] images, got " + shape_string(images.shape()));
  }
  const std::size_t factor = std::size_t{1} << config.depth;
  if (images.dim(2) % factor != 0 || images.dim(3) % factor != 0) {
    throw ShapeError("forward: spatial dims " + shape_string(images.shape()) +
                     " must be divisible by 2^depth = " + std::to_string(factor));
  }
  std::vector<Tensor> skips;
  Tensor x = images;
  for (std::size_t level = 0; level < config.depth; ++level) {
    x = net.encoder[level](x);
    skips.push_back(x);
    x = resample(x, ResampleMode::maxpool2);
  }
  x = net.encoder[config.depth](x);

  ForwardResult result;
  result.p1 = run_decoder(net.decoders[0], config, x, skips, result.taps1);
  if (net.decoders.size() > 1) {
    result.p2 = run_decoder(net.decoders[1], config, x, skips, result.taps2);
  }
  return result;
}

}  // namespace mismatch
