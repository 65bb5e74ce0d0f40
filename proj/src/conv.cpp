#include <Eigen/Core>

#include "mismatch/tensor.hpp"

namespace mismatch {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::size_t ConvSpec::output_extent(std::size_t input_extent) const {
  const std::size_t padded = input_extent + 2 * padding;
  if (effective_extent() > padded) {
    throw ShapeError("conv2d: effective kernel extent " + std::to_string(effective_extent()) +
                     " exceeds padded input extent " + std::to_string(padded));
  }
  return (padded - effective_extent()) / stride + 1;
}

namespace {

struct Geometry {
  std::size_t cin, h, w, k, d, pad, stride, ho, wo;
  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return ho * wo; }
};

// Unrolls one sample into a [Cin*K*K, Ho*Wo] patch matrix; zero outside the image.
void im2col(const double* src, const Geometry& g, double* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = cols + ((ci * g.k + ki) * g.k + kj) * g.cols();
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const auto y = static_cast<std::ptrdiff_t>(oi * g.stride + ki * g.d) - pad;
          double* dst = row + oi * g.wo;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* line = src + (ci * g.h + static_cast<std::size_t>(y)) * g.w;
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const auto x = static_cast<std::ptrdiff_t>(oj * g.stride + kj * g.d) - pad;
            dst[oj] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.w))
                          ? 0.0
                          : line[static_cast<std::size_t>(x)];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const Geometry& g, double* dst) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = cols + ((ci * g.k + ki) * g.k + kj) * g.cols();
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const auto y = static_cast<std::ptrdiff_t>(oi * g.stride + ki * g.d) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* line = dst + (ci * g.h + static_cast<std::size_t>(y)) * g.w;
          const double* src = row + oi * g.wo;
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const auto x = static_cast<std::ptrdiff_t>(oj * g.stride + kj * g.d) - pad;
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.w)) continue;
            line[static_cast<std::size_t>(x)] += src[oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
              const Tensor& bias) {
  if (spec.kernel == 0 || spec.kernel % 2 == 0) {
    throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(spec.kernel));
  }
  if (spec.dilation == 0 || spec.stride == 0 || spec.in_channels == 0 || spec.out_channels == 0) {
    throw ShapeError("conv2d: dilation, stride and channel counts must be positive");
  }
  if (input.rank() != 4 || input.dim(1) != spec.in_channels) {
    throw ShapeError("conv2d: input " + shape_string(input.shape()) + " does not match " +
                     std::to_string(spec.in_channels) + " input channels");
  }
  const Shape wshape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  if (weight.shape() != wshape) {
    throw ShapeError("conv2d: weight shape " + shape_string(weight.shape()) + ", expected " +
                     shape_string(wshape));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != spec.out_channels) {
    throw ShapeError("conv2d: bias shape " + shape_string(bias.shape()) + ", expected [" +
                     std::to_string(spec.out_channels) + "]");
  }

  const std::size_t n = input.dim(0);
  Geometry g{spec.in_channels, input.dim(2), input.dim(3), spec.kernel, spec.dilation,
             spec.padding, spec.stride, 0, 0};
  g.ho = spec.output_extent(g.h);
  g.wo = spec.output_extent(g.w);
  const std::size_t cout = spec.out_channels;

  auto x = input.data();
  std::vector<double> cols(n * g.rows() * g.cols());
  std::vector<double> out(n * cout * g.cols());
  ConstMatrixMap wmat(weight.data().data(), static_cast<Eigen::Index>(cout),
                      static_cast<Eigen::Index>(g.rows()));
  for (std::size_t s = 0; s < n; ++s) {
    double* c = cols.data() + s * g.rows() * g.cols();
    im2col(x.data() + s * g.cin * g.h * g.w, g, c);
    MatrixMap omat(out.data() + s * cout * g.cols(), static_cast<Eigen::Index>(cout),
                   static_cast<Eigen::Index>(g.cols()));
    omat.noalias() = wmat * ConstMatrixMap(c, static_cast<Eigen::Index>(g.rows()),
                                           static_cast<Eigen::Index>(g.cols()));
    if (has_bias) {
      auto b = bias.data();
      for (std::size_t o = 0; o < cout; ++o) omat.row(static_cast<Eigen::Index>(o)).array() += b[o];
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op(
      "conv2d", {n, cout, g.ho, g.wo}, std::move(out), std::move(inputs),
      [g, n, cout, has_bias, cols = std::move(cols)](Node& self) {
        Node& in = *self.inputs[0];
        Node& wt = *self.inputs[1];
        const auto rows = static_cast<Eigen::Index>(g.rows());
        const auto ncols = static_cast<Eigen::Index>(g.cols());
        const auto co = static_cast<Eigen::Index>(cout);
        std::vector<double> dcols;
        if (in.requires_grad) dcols.resize(g.rows() * g.cols());
        for (std::size_t s = 0; s < n; ++s) {
          ConstMatrixMap dy(self.grad.data() + s * cout * g.cols(), co, ncols);
          ConstMatrixMap c(cols.data() + s * g.rows() * g.cols(), rows, ncols);
          if (wt.requires_grad) {
            MatrixMap dw(wt.grad_buffer().data(), co, rows);
            dw.noalias() += dy * c.transpose();
          }
          if (has_bias && self.inputs[2]->requires_grad) {
            auto& db = self.inputs[2]->grad_buffer();
            // Plain loop: Eigen's vectorised sum peels by pointer alignment,
            // which would make the rounding depend on the allocation.
            for (std::size_t o = 0; o < cout; ++o) {
              const double* row = self.grad.data() + (s * cout + o) * g.cols();
              double total = 0.0;
              for (std::size_t k = 0; k < g.cols(); ++k) total += row[k];
              db[o] += total;
            }
          }
          if (in.requires_grad) {
            ConstMatrixMap wmat(wt.value.data(), co, rows);
            MatrixMap dc(dcols.data(), rows, ncols);
            dc.noalias() = wmat.transpose() * dy;
            col2im_add(dcols.data(), g, in.grad_buffer().data() + s * g.cin * g.h * g.w);
          }
        }
      });
}

}  // namespace mismatch
