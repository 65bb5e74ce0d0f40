#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mismatch/tensor.hpp"

namespace mismatch {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update over `params`, reading each parameter's
/// accumulated gradient (treated as zero when absent). Moments are created
/// on the first call and must keep matching shapes afterwards.
void adam_step(std::span<Tensor> params, AdamState& state, double lr);

}  // namespace mismatch
