#include "mismatch/erf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>

namespace mismatch {

namespace fs = std::filesystem;

double analytic_erf_ratio_pasb(double K, double K_prime, std::size_t n) {
  if (!(K >= 1.0) || !(K_prime >= 1.0)) {
    throw std::invalid_argument("analytic_erf_ratio_pasb: kernel sizes must be >= 1");
  }
  const double nd = static_cast<double>(n);
  return (K_prime / K) * std::sqrt((nd + 1.0) / (nd + 2.0));
}

std::vector<double> path_weights(const PathEnsemble& ensemble) {
  if (!(ensemble.p >= 0.0 && ensemble.p <= 1.0)) {
    throw std::invalid_argument("path_weights: p must lie in [0,1]");
  }
  const std::size_t N = ensemble.skip_units;
  std::vector<double> w(N + 1);
  double binom = 1.0;  // C(N,k), built incrementally
  for (std::size_t k = 0; k <= N; ++k) {
    w[k] = binom * std::pow(ensemble.p, static_cast<double>(k)) *
           std::pow(1.0 - ensemble.p, static_cast<double>(N - k));
    binom = binom * static_cast<double>(N - k) / static_cast<double>(k + 1);
  }
  return w;
}

double analytic_erf_ratio_nasb(std::size_t n, const PathEnsemble& ensemble) {
  if (n < 1) throw std::invalid_argument("analytic_erf_ratio_nasb: n must be >= 1");
  const auto w = path_weights(ensemble);
  const double nd = static_cast<double>(n);
  const double full = nd + static_cast<double>(ensemble.skip_units);
  double ratio = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    ratio += w[k] * std::sqrt((nd + static_cast<double>(k)) / full);
  }
  return ratio;
}

std::string to_string(ErfMode mode) { return mode == ErfMode::linearized ? "linearized" : "as_is"; }

ErfMode parse_erf_mode(const std::string& name) {
  if (name == "linearized") return ErfMode::linearized;
  if (name == "as_is") return ErfMode::as_is;
  throw std::invalid_argument("unknown erf mode '" + name + "'");
}

LayerStack plain_stack(std::size_t depth, std::size_t channels) {
  LayerStack s;
  s.id = "plain" + std::to_string(depth);
  s.channels = channels;
  s.steps.assign(depth, StackStep{});
  return s;
}

DecoderBlockStacks decoder_block_stacks(std::size_t dilation_rate, std::size_t prefix_depth,
                                        std::size_t channels) {
  const LayerStack prefix = plain_stack(prefix_depth, channels);
  DecoderBlockStacks out{prefix, prefix, prefix};
  out.main.id = "block.main";
  out.main.steps.push_back({});
  out.main.steps.push_back({});
  out.pasb_side.id = "block.pasb_side";
  out.pasb_side.steps.push_back({StackStep::Kind::conv, dilation_rate});
  out.nasb_side.id = "block.nasb_side";
  out.nasb_side.steps.push_back({StackStep::Kind::residual, 1});
  out.nasb_side.steps.push_back({StackStep::Kind::residual, 1});
  return out;
}

namespace {

struct ProbeLayer {
  ConvLayer conv;
  Tensor gain;
  Tensor shift;
  bool residual = false;
};

}  // namespace

ProbeFactory stack_probe(const LayerStack& stack, ErfMode mode, std::size_t input_size) {
  if (stack.steps.empty()) throw std::invalid_argument("stack_probe: empty stack");
  if (stack.channels < 1) throw std::invalid_argument("stack_probe: channels must be >= 1");
  return [stack, mode, input_size](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t C = stack.channels;
    auto layers = std::make_shared<std::vector<ProbeLayer>>();
    for (const auto& step : stack.steps) {
      ProbeLayer layer;
      layer.residual = step.kind == StackStep::Kind::residual;
      layer.conv.spec = {C, C, 3, step.dilation, ConvSpec::same_padding(3, step.dilation), 1};
      std::vector<double> w(C * C * 9);
      if (mode == ErfMode::linearized) {
        std::uniform_real_distribution<double> pos(0.5, 1.5);
        for (auto& v : w) v = pos(rng);
        for (std::size_t o = 0; o < C; ++o) {
          double total = 0.0;
          for (std::size_t i = 0; i < C * 9; ++i) total += w[o * C * 9 + i];
          for (std::size_t i = 0; i < C * 9; ++i) w[o * C * 9 + i] /= total;
        }
      } else {
        const double bound = std::sqrt(6.0 / static_cast<double>(C * 9));
        std::uniform_real_distribution<double> signed_w(-bound, bound);
        for (auto& v : w) v = signed_w(rng);
      }
      layer.conv.weight = Tensor::from({C, C, 3, 3}, std::move(w));
      layer.conv.bias = Tensor::zeros({C});
      layer.gain = Tensor::full({C}, 1.0);
      layer.shift = Tensor::zeros({C});
      layers->push_back(std::move(layer));
    }
    ErfProbe probe;
    probe.input_shape = {1, C, input_size, input_size};
    probe.forward = [layers, mode](const Tensor& x) {
      Tensor h = x;
      for (const auto& layer : *layers) {
        Tensor y = layer.conv(h);
        if (mode == ErfMode::as_is) y = normalize_features(relu(y), layer.gain, layer.shift);
        h = layer.residual ? add(h, y) : y;
      }
      return h;
    };
    return probe;
  };
}

double erf_size(std::span<const double> map, double threshold) {
  if (map.empty()) return 0.0;
  const double peak = *std::max_element(map.begin(), map.end());
  if (!(peak > 0.0)) return 0.0;
  const double cut = threshold * peak;
  const auto count = std::count_if(map.begin(), map.end(), [&](double v) { return v >= cut; });
  return std::sqrt(static_cast<double>(count));
}

ErfReport measure_erf(const std::string& id, const ProbeFactory& factory, ErfMode mode,
                      std::span<const std::uint64_t> seeds, double threshold) {
  if (seeds.empty()) throw std::invalid_argument("measure_erf: no seeds");
  ErfReport report;
  report.id = id;
  report.mode = mode;
  report.seeds.assign(seeds.begin(), seeds.end());

  for (std::uint64_t seed : seeds) {
    const ErfProbe probe = factory(seed);
    const Shape& shape = probe.input_shape;
    if (shape.size() != 4 || shape[0] != 1) {
      throw ShapeError("measure_erf: probe input must be [1,C,H,W], got " + shape_string(shape));
    }
    const std::size_t C = shape[1], H = shape[2], W = shape[3];
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal;
    std::vector<double> x(shape_numel(shape));
    for (auto& v : x) v = normal(rng);
    Tensor input = Tensor::from(shape, std::move(x), true);
    const Tensor out = probe.forward(input);
    if (out.rank() != 4 || out.dim(0) != 1) {
      throw ShapeError("measure_erf: probe output must be [1,C,H,W], got " + shape_string(out.shape()));
    }
    const std::size_t oc = out.dim(1), oh = out.dim(2), ow = out.dim(3);
    std::vector<double> seed_grad(out.numel(), 0.0);
    for (std::size_t c = 0; c < oc; ++c) seed_grad[(c * oh + oh / 2) * ow + ow / 2] = 1.0;
    backward(out, seed_grad);

    std::vector<double> map(H * W, 0.0);
    if (input.has_grad()) {
      const auto g = input.grad();
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < H * W; ++i) map[i] += std::abs(g[c * H * W + i]);
      }
      for (auto& v : map) v /= static_cast<double>(C);
    }
    report.per_seed_size.push_back(erf_size(map, threshold));
    if (report.gradient_map.empty()) {
      report.height = H;
      report.width = W;
      report.gradient_map.assign(H * W, 0.0);
    } else if (report.height != H || report.width != W) {
      throw ShapeError("measure_erf: probe input size changed between seeds");
    }
    for (std::size_t i = 0; i < map.size(); ++i) report.gradient_map[i] += map[i];
  }
  for (auto& v : report.gradient_map) v /= static_cast<double>(seeds.size());
  report.erf_size = erf_size(report.gradient_map, threshold);

  const auto& map = report.gradient_map;
  const auto peak_it = std::max_element(map.begin(), map.end());
  const auto peak_index = static_cast<std::size_t>(peak_it - map.begin());
  report.peak_row = peak_index / report.width;
  report.peak_col = peak_index % report.width;
  const double cut = mode == ErfMode::linearized ? 0.0 : threshold * *peak_it;
  std::size_t r0 = report.height, r1 = 0, c0 = report.width, c1 = 0;
  bool any = false;
  for (std::size_t r = 0; r < report.height; ++r) {
    for (std::size_t c = 0; c < report.width; ++c) {
      const double v = map[r * report.width + c];
      const bool in = mode == ErfMode::linearized ? v > 0.0 : v >= cut && v > 0.0;
      if (!in) continue;
      any = true;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  if (any) {
    if (r0 == 0 || c0 == 0 || r1 + 1 == report.height || c1 + 1 == report.width) {
      throw ShapeError("measure_erf: gradient support of '" + id +
                       "' touches the input border; enlarge the input");
    }
    report.support_extent = std::max(r1 - r0 + 1, c1 - c0 + 1);
  }
  return report;
}

ErfReport measure_erf(const LayerStack& stack, ErfMode mode, std::span<const std::uint64_t> seeds,
                      std::size_t input_size, double threshold) {
  return measure_erf(stack.id, stack_probe(stack, mode, input_size), mode, seeds, threshold);
}

ProbeFactory decoder_branch_probe(const Network& net, std::size_t decoder, std::size_t block,
                                  BlockBranch branch, std::size_t input_size) {
  if (decoder >= net.decoders.size()) throw std::out_of_range("decoder_branch_probe: decoder index");
  if (block >= net.decoders[decoder].blocks.size()) {
    throw std::out_of_range("decoder_branch_probe: block index");
  }
  const BlockKind kind = net.decoders[decoder].blocks[block].kind;
  if (branch == BlockBranch::side && kind == BlockKind::standard) {
    throw std::invalid_argument("decoder_branch_probe: standard blocks have no side branch");
  }
  const std::size_t level = net.config.depth - 1 - block;
  const std::size_t channels = 2 * (net.config.width << level);
  auto frozen = std::make_shared<Network>(net.inference_copy());
  return [frozen, decoder, block, branch, channels, input_size](std::uint64_t) {
    ErfProbe probe;
    probe.input_shape = {1, channels, input_size, input_size};
    probe.forward = [frozen, decoder, block, branch](const Tensor& x) {
      const DecoderBlock& b = frozen->decoders[decoder].blocks[block];
      return branch == BlockBranch::main ? b.main(x) : b.side(x);
    };
    return probe;
  };
}

SqrtFit fit_sqrt_growth(std::span<const double> depths, std::span<const double> sizes) {
  if (depths.size() != sizes.size() || depths.size() < 2) {
    throw std::invalid_argument("fit_sqrt_growth: need matching series of length >= 2");
  }
  double sxy = 0.0, sxx = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < depths.size(); ++i) {
    const double x = std::sqrt(depths[i]);
    sxy += x * sizes[i];
    sxx += x * x;
    mean += sizes[i];
  }
  mean /= static_cast<double>(sizes.size());
  SqrtFit fit;
  fit.c = sxy / sxx;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < depths.size(); ++i) {
    const double r = sizes[i] - fit.c * std::sqrt(depths[i]);
    ss_res += r * r;
    ss_tot += (sizes[i] - mean) * (sizes[i] - mean);
  }
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return fit;
}

void write_erf_summary_csv(std::span<const ErfReport> reports, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "stack,mode,seed,erf_size,support_extent\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    double mean = 0.0;
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      out << r.id << ',' << to_string(r.mode) << ',' << r.seeds[i] << ','
          << num(r.per_seed_size[i]) << ",\n";
      mean += r.per_seed_size[i];
    }
    mean /= static_cast<double>(r.seeds.size());
    out << r.id << ',' << to_string(r.mode) << ",mean," << num(mean) << ",\n";
    out << r.id << ',' << to_string(r.mode) << ",averaged_map," << num(r.erf_size) << ','
        << r.support_extent << '\n';
  }
}

}  // namespace mismatch
