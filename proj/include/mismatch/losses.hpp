#pragma once

#include "mismatch/tensor.hpp"

namespace mismatch {

inline constexpr double kDiceSmooth = 1.0;

/// 1 - (2*sum(p*t) + 1) / (sum(p) + sum(t) + 1) per sample, averaged over
/// the batch axis. Differentiable in `pred` only.
Tensor soft_dice_loss(const Tensor& pred, const Tensor& target);

struct ConsistencyOptions {
  bool stop_gradient = false;
  bool batch_dim_normalize = false;
};

/// Mean squared error between the two decoder maps. With batch_dim_normalize
/// each map is first standardised per pixel across the batch (identity for a
/// batch of one). With stop_gradient the loss is the average of the two
/// one-sided terms, each detaching the opposite map.
Tensor consistency_loss(const Tensor& p1, const Tensor& p2, const ConsistencyOptions& options = {});

}  // namespace mismatch
