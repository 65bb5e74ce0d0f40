#include <algorithm>
#include <cmath>

#include "mismatch/tensor.hpp"

namespace mismatch {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

void require_rank4(const Tensor& t, const char* op) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected [N,C,H,W], got " + shape_string(t.shape()));
  }
}

// Accumulates `scale_fn(i) * upstream[i]` into input k when it needs a gradient.
template <typename F>
void accumulate_into(Node& self, std::size_t k, F&& local) {
  Node& in = *self.inputs[k];
  if (!in.requires_grad) return;
  auto& g = in.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += local(i) * self.grad[i];
}

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation kind) {
  switch (kind) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "?";
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    accumulate_into(self, 0, [](std::size_t) { return 1.0; });
    accumulate_into(self, 1, [](std::size_t) { return 1.0; });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    accumulate_into(self, 0, [](std::size_t) { return 1.0; });
    accumulate_into(self, 1, [](std::size_t) { return -1.0; });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.inputs[0]->value;
    const auto& y = self.inputs[1]->value;
    accumulate_into(self, 0, [&](std::size_t i) { return y[i]; });
    accumulate_into(self, 1, [&](std::size_t i) { return x[i]; });
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_op("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    accumulate_into(self, 0, [factor](std::size_t) { return factor; });
  });
}

Tensor add_scalar(const Tensor& a, double offset) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += offset;
  return make_op("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
    accumulate_into(self, 0, [](std::size_t) { return 1.0; });
  });
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= v;
  return make_op("square", a.shape(), std::move(out), {a}, [](Node& self) {
    const auto& x = self.inputs[0]->value;
    accumulate_into(self, 0, [&](std::size_t i) { return 2.0 * x[i]; });
  });
}

Tensor relu(const Tensor& input) {
  std::vector<double> out(input.data().begin(), input.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_op("relu", input.shape(), std::move(out), {input}, [](Node& self) {
    const auto& x = self.inputs[0]->value;
    accumulate_into(self, 0, [&](std::size_t i) { return x[i] > 0.0 ? 1.0 : 0.0; });
  });
}

Tensor sigmoid(const Tensor& input) {
  std::vector<double> out(input.numel());
  auto x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Branching keeps exp() from overflowing for large |x|.
    out[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                         : std::exp(x[i]) / (1.0 + std::exp(x[i]));
  }
  return make_op("sigmoid", input.shape(), std::move(out), {input}, [](Node& self) {
    const auto& y = self.value;
    accumulate_into(self, 0, [&](std::size_t i) { return y[i] * (1.0 - y[i]); });
  });
}

Tensor apply_activation(const Tensor& input, Activation kind) {
  switch (kind) {
    case Activation::relu: return relu(input);
    case Activation::sigmoid: return sigmoid(input);
    case Activation::identity: return input;
  }
  throw std::invalid_argument("invalid activation kind");
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_op("sum", {}, {s}, {a}, [](Node& self) {
    const double up = self.grad[0];
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    for (auto& g : in.grad_buffer()) g += up;
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_op("mean", {}, {s / n}, {a}, [n](Node& self) {
    const double up = self.grad[0] / n;
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    for (auto& g : in.grad_buffer()) g += up;
  });
}

Tensor dot_with(const Tensor& a, std::span<const double> weights) {
  if (weights.size() != a.numel()) {
    throw ShapeError("dot_with: " + std::to_string(weights.size()) + " weights for shape " +
                     shape_string(a.shape()));
  }
  std::vector<double> w(weights.begin(), weights.end());
  double s = 0.0;
  auto x = a.data();
  for (std::size_t i = 0; i < w.size(); ++i) s += x[i] * w[i];
  return make_op("dot_with", {}, {s}, {a}, [w = std::move(w)](Node& self) {
    const double up = self.grad[0];
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * w[i];
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  const auto n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  if (b.dim(0) != n || b.dim(2) != h || b.dim(3) != w) {
    throw ShapeError("concat_channels: incompatible shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  const std::size_t plane = h * w;
  std::vector<double> out(n * (ca + cb) * plane);
  auto x = a.data(), y = b.data();
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(x.begin() + s * ca * plane, ca * plane, out.begin() + s * (ca + cb) * plane);
    std::copy_n(y.begin() + s * cb * plane, cb * plane,
                out.begin() + (s * (ca + cb) + ca) * plane);
  }
  return make_op("concat_channels", {n, ca + cb, h, w}, std::move(out), {a, b},
                 [n, ca, cb, plane](Node& self) {
                   for (std::size_t k = 0; k < 2; ++k) {
                     Node& in = *self.inputs[k];
                     if (!in.requires_grad) continue;
                     auto& g = in.grad_buffer();
                     const std::size_t c = k == 0 ? ca : cb;
                     const std::size_t off = k == 0 ? 0 : ca;
                     for (std::size_t s = 0; s < n; ++s) {
                       const double* src = self.grad.data() + (s * (ca + cb) + off) * plane;
                       double* dst = g.data() + s * c * plane;
                       for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                     }
                   }
                 });
}

Tensor resample(const Tensor& input, ResampleMode mode) {
  require_rank4(input, "resample");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  auto x = input.data();
  if (mode == ResampleMode::maxpool2) {
    if (h % 2 != 0 || w % 2 != 0) {
      throw ShapeError("maxpool2 needs even spatial dims, got " + shape_string(input.shape()));
    }
    const std::size_t ho = h / 2, wo = w / 2;
    std::vector<double> out(n * c * ho * wo);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t p = 0; p < n * c; ++p) {
      const double* src = x.data() + p * h * w;
      for (std::size_t i = 0; i < ho; ++i) {
        for (std::size_t j = 0; j < wo; ++j) {
          // Row-major window order; strict '>' keeps the first maximum.
          std::size_t best = (2 * i) * w + 2 * j;
          const std::size_t cand[3] = {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                       (2 * i + 1) * w + 2 * j + 1};
          for (auto k : cand) {
            if (src[k] > src[best]) best = k;
          }
          const std::size_t o = p * ho * wo + i * wo + j;
          out[o] = src[best];
          argmax[o] = p * h * w + best;
        }
      }
    }
    return make_op("maxpool2", {n, c, ho, wo}, std::move(out), {input},
                   [argmax = std::move(argmax)](Node& self) {
                     Node& in = *self.inputs[0];
                     if (!in.requires_grad) return;
                     auto& g = in.grad_buffer();
                     for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
                   });
  }
  const std::size_t ho = h * 2, wo = w * 2;
  std::vector<double> out(n * c * ho * wo);
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        out[p * ho * wo + i * wo + j] = x[p * h * w + (i / 2) * w + j / 2];
      }
    }
  }
  return make_op("upsample2_nearest", {n, c, ho, wo}, std::move(out), {input},
                 [n, c, h, w](Node& self) {
                   Node& in = *self.inputs[0];
                   if (!in.requires_grad) return;
                   auto& g = in.grad_buffer();
                   const std::size_t ho = h * 2, wo = w * 2;
                   for (std::size_t p = 0; p < n * c; ++p) {
                     for (std::size_t i = 0; i < ho; ++i) {
                       for (std::size_t j = 0; j < wo; ++j) {
                         g[p * h * w + (i / 2) * w + j / 2] += self.grad[p * ho * wo + i * wo + j];
                       }
                     }
                   }
                 });
}

Tensor normalize_features(const Tensor& input, const Tensor& gain, const Tensor& shift) {
  require_rank4(input, "normalize_features");
  const auto n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (gain.numel() != c || shift.numel() != c) {
    throw ShapeError("normalize_features: gain/shift need " + std::to_string(c) +
                     " entries, got " + shape_string(gain.shape()) + "/" +
                     shape_string(shift.shape()));
  }
  if (plane < 2) throw ShapeError("normalize_features needs H*W >= 2");
  auto x = input.data();
  auto gm = gain.data(), sh = shift.data();
  std::vector<double> out(x.size()), xhat(x.size()), inv_std(n * c);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (s * c + ch) * plane;
      double mu = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mu += x[base + i];
      mu /= static_cast<double>(plane);
      double var = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = x[base + i] - mu;
        var += d * d;
      }
      var /= static_cast<double>(plane);
      const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
      inv_std[s * c + ch] = inv;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[base + i] = (x[base + i] - mu) * inv;
        out[base + i] = gm[ch] * xhat[base + i] + sh[ch];
      }
    }
  }
  return make_op(
      "normalize_features", input.shape(), std::move(out), {input, gain, shift},
      [n, c, plane, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& in = *self.inputs[0];
        Node& gn = *self.inputs[1];
        Node& sf = *self.inputs[2];
        const auto& dy = self.grad;
        const double m = static_cast<double>(plane);
        for (std::size_t s = 0; s < n; ++s) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (s * c + ch) * plane;
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += dy[base + i];
              sum_dy_xhat += dy[base + i] * xhat[base + i];
            }
            if (gn.requires_grad) gn.grad_buffer()[ch] += sum_dy_xhat;
            if (sf.requires_grad) sf.grad_buffer()[ch] += sum_dy;
            if (in.requires_grad) {
              auto& g = in.grad_buffer();
              const double gamma = gn.value[ch];
              const double k = gamma * inv_std[s * c + ch] / m;
              for (std::size_t i = 0; i < plane; ++i) {
                g[base + i] += k * (m * dy[base + i] - sum_dy - xhat[base + i] * sum_dy_xhat);
              }
            }
          }
        }
      });
}

Tensor standardize_over_batch(const Tensor& input, double epsilon) {
  if (input.rank() == 0) throw ShapeError("standardize_over_batch needs a batch axis");
  const std::size_t n = input.dim(0);
  if (n < 2) return input;
  const std::size_t stride = input.numel() / n;
  auto x = input.data();
  std::vector<double> out(x.size()), xhat(x.size()), inv_std(stride);
  const double m = static_cast<double>(n);
  for (std::size_t j = 0; j < stride; ++j) {
    double mu = 0.0;
    for (std::size_t s = 0; s < n; ++s) mu += x[s * stride + j];
    mu /= m;
    double var = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const double d = x[s * stride + j] - mu;
      var += d * d;
    }
    var /= m;
    const double inv = 1.0 / std::sqrt(var + epsilon);
    inv_std[j] = inv;
    for (std::size_t s = 0; s < n; ++s) {
      xhat[s * stride + j] = (x[s * stride + j] - mu) * inv;
      out[s * stride + j] = xhat[s * stride + j];
    }
  }
  return make_op("standardize_over_batch", input.shape(), std::move(out), {input},
                 [n, stride, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   Node& in = *self.inputs[0];
                   if (!in.requires_grad) return;
                   auto& g = in.grad_buffer();
                   const auto& dy = self.grad;
                   for (std::size_t j = 0; j < stride; ++j) {
                     double sum_dy = 0.0, sum_dy_xhat = 0.0;
                     for (std::size_t s = 0; s < n; ++s) {
                       sum_dy += dy[s * stride + j];
                       sum_dy_xhat += dy[s * stride + j] * xhat[s * stride + j];
                     }
                     const double k = inv_std[j] / m;
                     for (std::size_t s = 0; s < n; ++s) {
                       const std::size_t i = s * stride + j;
                       g[i] += k * (m * dy[i] - sum_dy - xhat[i] * sum_dy_xhat);
                     }
                   }
                 });
}

Tensor morph_filter(const Tensor& input, MorphOp op, std::size_t radius) {
  require_rank4(input, "morph_filter");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  auto x = input.data();
  std::vector<double> out(x.size());
  std::vector<std::size_t> pick(x.size());
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(h); ++i) {
      for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(w); ++j) {
        std::size_t best = base + static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j);
        bool first = true;
        for (std::ptrdiff_t di = -r; di <= r; ++di) {
          const auto y = i + di;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
            const auto z = j + dj;
            if (z < 0 || z >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t k = base + static_cast<std::size_t>(y) * w + static_cast<std::size_t>(z);
            const bool better = op == MorphOp::dilate ? x[k] > x[best] : x[k] < x[best];
            if (first || better) {
              best = k;
              first = false;
            }
          }
        }
        const std::size_t o = base + static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j);
        out[o] = x[best];
        pick[o] = best;
      }
    }
  }
  return make_op(op == MorphOp::dilate ? "morph_dilate" : "morph_erode", input.shape(),
                 std::move(out), {input}, [pick = std::move(pick)](Node& self) {
                   Node& in = *self.inputs[0];
                   if (!in.requires_grad) return;
                   auto& g = in.grad_buffer();
                   for (std::size_t o = 0; o < pick.size(); ++o) g[pick[o]] += self.grad[o];
                 });
}

}  // namespace mismatch
