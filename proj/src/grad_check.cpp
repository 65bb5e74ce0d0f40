#include "mismatch/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace mismatch {

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

GradCheckReport grad_check_leaves(const std::function<Tensor()>& loss,
                                  const std::vector<Tensor>& leaves,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  std::mt19937_64 rng(options.seed);

  for (auto leaf : leaves) leaf.zero_grad();
  backward(loss());

  GradCheckReport report;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    Tensor leaf = leaves[k];
    if (!leaf.requires_grad()) continue;
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

    std::vector<std::size_t> index(leaf.numel());
    std::iota(index.begin(), index.end(), 0);
    if (options.max_probes_per_input != 0 && index.size() > options.max_probes_per_input) {
      std::shuffle(index.begin(), index.end(), rng);
      index.resize(options.max_probes_per_input);
      std::sort(index.begin(), index.end());
    }

    auto values = leaf.mutable_data();
    for (auto i : index) {
      const double original = values[i];
      // Central estimate plus a kink flag: on a smooth stretch the one-sided
      // slopes differ by O(h f''), far below the tolerance.
      const double here = options.max_refinements > 0 ? loss().item() : 0.0;
      auto probe = [&](double h, bool& kinked) {
        values[i] = original + h;
        const double up = loss().item();
        values[i] = original - h;
        const double down = loss().item();
        values[i] = original;
        kinked = relative_error((up - here) / h, (here - down) / h) > 0.1 * options.tolerance;
        return (up - down) / (2.0 * h);
      };
      double h = options.step;
      bool kinked = false;
      double numeric = probe(h, kinked);
      // Roundoff in a difference quotient grows like eps |f| / h; stop before it
      // swamps the slope being resolved.
      const double noise = 4.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(here), 1.0);
      for (std::size_t r = 0; r < options.max_refinements && kinked; ++r) {
        if (noise / (h / 10.0) > 0.1 * options.tolerance * std::max(std::abs(numeric), 1e-8)) break;
        if (r == 0) ++report.refined;
        h /= 10.0;
        numeric = probe(h, kinked);
      }
      double err = relative_error(analytic[i], numeric);
      if (std::isnan(err)) err = INFINITY;
      ++report.probes;
      if (err > report.max_rel_err || report.probes == 1) {
        report.max_rel_err = std::max(report.max_rel_err, err);
        report.worst_input = k;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.pass = report.max_rel_err <= options.tolerance;
  return report;
}

GradCheckReport grad_check(const OpUnderTest& op, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options) {
  // Fresh leaves so the caller's tensors never see probe perturbations.
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(t.clone());

  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> magnitude(0.5, 1.5);
  const std::size_t out_size = op(leaves).numel();
  std::vector<double> weights(out_size);
  for (auto& w : weights) w = (rng() & 1 ? 1.0 : -1.0) * magnitude(rng);

  auto loss = [&]() {
    const Tensor out = op(leaves);
    if (out.numel() != weights.size()) throw ShapeError("grad_check: op output size changed");
    return out.numel() == 1 ? sum(out) : dot_with(out, weights);
  };
  return grad_check_leaves(loss, leaves, options);
}

}  // namespace mismatch
