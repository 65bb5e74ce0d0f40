#include "mismatch/losses.hpp"

namespace mismatch {

Tensor soft_dice_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("soft_dice_loss: shape mismatch " + shape_string(pred.shape()) + " vs " +
                     shape_string(target.shape()));
  }
  if (pred.rank() == 0) throw ShapeError("soft_dice_loss: needs a batch axis");
  const std::size_t n = pred.dim(0);
  const std::size_t per = n == 0 ? 0 : pred.numel() / n;
  auto p = pred.data(), t = target.data();

  std::vector<double> inter(n, 0.0), denom(n, 0.0);
  double loss = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    double pt = 0.0, sp = 0.0, st = 0.0;
    for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
      pt += p[i] * t[i];
      sp += p[i];
      st += t[i];
    }
    inter[s] = 2.0 * pt + kDiceSmooth;
    denom[s] = sp + st + kDiceSmooth;
    loss += 1.0 - inter[s] / denom[s];
  }
  loss /= static_cast<double>(n);

  return make_op("soft_dice_loss", {}, {loss}, {pred, target},
                 [n, per, inter = std::move(inter), denom = std::move(denom)](Node& self) {
                   Node& pn = *self.inputs[0];
                   if (!pn.requires_grad) return;
                   const auto& t = self.inputs[1]->value;
                   auto& g = pn.grad_buffer();
                   const double up = self.grad[0] / static_cast<double>(n);
                   for (std::size_t s = 0; s < n; ++s) {
                     // d/dp_i of -(I/D) = -(2 t_i D - I) / D^2
                     const double d2 = denom[s] * denom[s];
                     for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
                       g[i] += up * -(2.0 * t[i] * denom[s] - inter[s]) / d2;
                     }
                   }
                 });
}

namespace {

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

}  // namespace

Tensor consistency_loss(const Tensor& p1, const Tensor& p2, const ConsistencyOptions& options) {
  if (p1.shape() != p2.shape()) {
    throw ShapeError("consistency_loss: shape mismatch " + shape_string(p1.shape()) + " vs " +
                     shape_string(p2.shape()));
  }
  Tensor q1 = p1, q2 = p2;
  if (options.batch_dim_normalize) {
    q1 = standardize_over_batch(p1);
    q2 = standardize_over_batch(p2);
  }
  if (!options.stop_gradient) return mse(q1, q2);
  return scale(add(mse(q1, q2.detach()), mse(q1.detach(), q2)), 0.5);
}

}  // namespace mismatch
