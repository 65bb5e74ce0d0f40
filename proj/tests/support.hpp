#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mismatch/grad_check.hpp"
#include "mismatch/losses.hpp"
#include "mismatch/tensor.hpp"

namespace mismatch::testing {

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, bool requires_grad = true,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(shape, std::move(v), requires_grad);
}

/// Values bounded away from zero so ReLU's kink never sits inside a
/// finite-difference stencil.
inline Tensor kink_free_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor::from(shape, std::move(v), true);
}

/// Distinct values spaced well beyond the finite-difference step, randomly
/// permuted, so max/min selections are stable under perturbation.
inline Tensor spaced_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::vector<double> v(shape_numel(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(v.size());
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor::from(shape, std::move(v), true);
}

// A batch of two standardises every pixel to exactly +-1 up to epsilon, so
// the gradient is O(epsilon) and below finite-difference resolution.
inline constexpr std::size_t kMinStandardizedBatch = 3;

struct OpInstance {
  OpUnderTest op;
  std::vector<Tensor> inputs;
  std::string shape;
};

struct OpCase {
  std::string name;
  std::function<OpInstance(std::mt19937_64&)> make;
};

inline Shape random_nchw(std::mt19937_64& rng, std::size_t max_hw = 6) {
  return {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, max_hw), pick(rng, 2, max_hw)};
}

/// Every differentiable op of the engine, each with a random-instance
/// generator.
inline std::vector<OpCase> differentiable_ops() {
  std::vector<OpCase> ops;
  ops.push_back({"conv2d", [](std::mt19937_64& rng) {
    ConvSpec spec;
    spec.in_channels = pick(rng, 1, 3);
    spec.out_channels = pick(rng, 1, 3);
    spec.kernel = pick(rng, 0, 1) ? 3 : 1;
    spec.dilation = pick(rng, 1, 2);
    spec.padding = pick(rng, 0, spec.dilation * (spec.kernel - 1) / 2);
    spec.stride = pick(rng, 1, 2);
    const std::size_t need = spec.effective_extent();
    const std::size_t h = need + pick(rng, 0, 3), w = need + pick(rng, 0, 3);
    Tensor x = random_tensor({pick(rng, 1, 2), spec.in_channels, h, w}, rng);
    Tensor wgt = random_tensor({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}, rng);
    Tensor b = random_tensor({spec.out_channels}, rng);
    return OpInstance{[spec](const std::vector<Tensor>& in) { return conv2d(in[0], spec, in[1], in[2]); },
                      {x, wgt, b}, shape_string(x.shape())};
  }});
  ops.push_back({"relu", [](std::mt19937_64& rng) {
    Tensor x = kink_free_tensor(random_nchw(rng), rng);
    return OpInstance{[](const std::vector<Tensor>& in) { return relu(in[0]); }, {x}, shape_string(x.shape())};
  }});
  ops.push_back({"sigmoid", [](std::mt19937_64& rng) {
    Tensor x = random_tensor(random_nchw(rng), rng, true, -4.0, 4.0);
    return OpInstance{[](const std::vector<Tensor>& in) { return sigmoid(in[0]); }, {x}, shape_string(x.shape())};
  }});
  ops.push_back({"identity", [](std::mt19937_64& rng) {
    Tensor x = random_tensor(random_nchw(rng), rng);
    return OpInstance{[](const std::vector<Tensor>& in) { return apply_activation(in[0], Activation::identity); },
                      {x}, shape_string(x.shape())};
  }});
  ops.push_back({"maxpool2", [](std::mt19937_64& rng) {
    Shape s = random_nchw(rng, 3);
    s[2] *= 2;
    s[3] *= 2;
    Tensor x = spaced_tensor(s, rng);
    return OpInstance{[](const std::vector<Tensor>& in) { return resample(in[0], ResampleMode::maxpool2); },
                      {x}, shape_string(s)};
  }});
  ops.push_back({"upsample2_nearest", [](std::mt19937_64& rng) {
    Tensor x = random_tensor(random_nchw(rng, 4), rng);
    return OpInstance{[](const std::vector<Tensor>& in) { return resample(in[0], ResampleMode::upsample2_nearest); },
                      {x}, shape_string(x.shape())};
  }});
  ops.push_back({"normalize_features", [](std::mt19937_64& rng) {
    const Shape s = random_nchw(rng);
    Tensor x = random_tensor(s, rng);
    Tensor g = random_tensor({s[1]}, rng, true, 0.5, 1.5);
    Tensor b = random_tensor({s[1]}, rng);
    return OpInstance{[](const std::vector<Tensor>& in) { return normalize_features(in[0], in[1], in[2]); },
                      {x, g, b}, shape_string(s)};
  }});
  ops.push_back({"standardize_over_batch", [](std::mt19937_64& rng) {
    Shape s = random_nchw(rng, 4);
    s[0] = pick(rng, kMinStandardizedBatch, 4);
    Tensor x = random_tensor(s, rng);
    return OpInstance{[](const std::vector<Tensor>& in) { return standardize_over_batch(in[0]); },
                      {x}, shape_string(s)};
  }});
  ops.push_back({"morph_filter", [](std::mt19937_64& rng) {
    Tensor x = spaced_tensor(random_nchw(rng), rng);
    const MorphOp op = pick(rng, 0, 1) ? MorphOp::dilate : MorphOp::erode;
    const std::size_t r = pick(rng, 1, 2);
    return OpInstance{[op, r](const std::vector<Tensor>& in) { return morph_filter(in[0], op, r); },
                      {x}, shape_string(x.shape())};
  }});
  auto binary = [](const char* name, Tensor (*fn)(const Tensor&, const Tensor&)) {
    return OpCase{name, [fn](std::mt19937_64& rng) {
      const Shape s = random_nchw(rng);
      Tensor a = random_tensor(s, rng), b = random_tensor(s, rng);
      return OpInstance{[fn](const std::vector<Tensor>& in) { return fn(in[0], in[1]); }, {a, b}, shape_string(s)};
    }};
  };
  ops.push_back(binary("add", &add));
  ops.push_back(binary("sub", &sub));
  ops.push_back(binary("mul", &mul));
  ops.push_back({"scale", [](std::mt19937_64& rng) {
    Tensor x = random_tensor(random_nchw(rng), rng);
    const double f = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
    return OpInstance{[f](const std::vector<Tensor>& in) { return scale(in[0], f); }, {x}, shape_string(x.shape())};
  }});
  ops.push_back({"add_scalar", [](std::mt19937_64& rng) {
    Tensor x = random_tensor(random_nchw(rng), rng);
    return OpInstance{[](const std::vector<Tensor>& in) { return add_scalar(in[0], 0.75); }, {x}, shape_string(x.shape())};
  }});
  ops.push_back({"square", [](std::mt19937_64& rng) {
    Tensor x = random_tensor(random_nchw(rng), rng);
    return OpInstance{[](const std::vector<Tensor>& in) { return square(in[0]); }, {x}, shape_string(x.shape())};
  }});
  ops.push_back({"sum", [](std::mt19937_64& rng) {
    Tensor x = random_tensor(random_nchw(rng), rng);
    return OpInstance{[](const std::vector<Tensor>& in) { return sum(in[0]); }, {x}, shape_string(x.shape())};
  }});
  ops.push_back({"mean", [](std::mt19937_64& rng) {
    Tensor x = random_tensor(random_nchw(rng), rng);
    return OpInstance{[](const std::vector<Tensor>& in) { return mean(in[0]); }, {x}, shape_string(x.shape())};
  }});
  ops.push_back({"concat_channels", [](std::mt19937_64& rng) {
    Shape s = random_nchw(rng);
    Shape t = s;
    t[1] = pick(rng, 1, 3);
    Tensor a = random_tensor(s, rng), b = random_tensor(t, rng);
    return OpInstance{[](const std::vector<Tensor>& in) { return concat_channels(in[0], in[1]); },
                      {a, b}, shape_string(s)};
  }});
  ops.push_back({"dot_with", [](std::mt19937_64& rng) {
    Tensor x = random_tensor(random_nchw(rng), rng);
    std::vector<double> w(x.numel());
    for (auto& v : w) v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    return OpInstance{[w](const std::vector<Tensor>& in) { return dot_with(in[0], w); }, {x}, shape_string(x.shape())};
  }});
  ops.push_back({"soft_dice_loss", [](std::mt19937_64& rng) {
    Shape s = random_nchw(rng);
    s[1] = 1;
    Tensor p = random_tensor(s, rng, true, 0.05, 0.95);
    std::vector<double> t(p.numel());
    for (auto& v : t) v = pick(rng, 0, 1) ? 1.0 : 0.0;
    Tensor target = Tensor::from(s, std::move(t));
    return OpInstance{[](const std::vector<Tensor>& in) { return soft_dice_loss(in[0], in[1]); },
                      {p, target}, shape_string(s)};
  }});
  // Stop-gradient is excluded: detaching changes the gradient but not the
  // value, so finite differences cannot agree with it by construction.
  for (bool batch_norm : {false, true}) {
    const ConsistencyOptions opts{false, batch_norm};
    const std::string name = batch_norm ? "consistency_loss+batchnorm" : "consistency_loss";
    ops.push_back({name, [opts](std::mt19937_64& rng) {
      Shape s = random_nchw(rng);
      s[1] = 1;
      if (opts.batch_dim_normalize) s[0] = pick(rng, kMinStandardizedBatch, 4);
      Tensor a = random_tensor(s, rng, true, 0.05, 0.95), b = random_tensor(s, rng, true, 0.05, 0.95);
      return OpInstance{[opts](const std::vector<Tensor>& in) { return consistency_loss(in[0], in[1], opts); },
                        {a, b}, shape_string(s)};
    }});
  }
  return ops;
}

}  // namespace mismatch::testing
