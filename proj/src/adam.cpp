#include "mismatch/adam.hpp"

#include <cmath>

namespace mismatch {

void adam_step(std::span<Tensor> params, AdamState& state, double lr) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.numel()) {
      throw ShapeError("adam_step: moment size mismatch for parameter " + std::to_string(k));
    }
    const bool has_grad = p.has_grad();
    auto grad = p.grad();
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      // "+ 0.0" folds -0.0 into +0.0 so a zero-weighted term is bit-identical
      // to an absent one.
      const double g = has_grad ? grad[i] + 0.0 : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace mismatch
