#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mismatch/tensor.hpp"

namespace mismatch {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Upper bound on probed elements per input; 0 probes every element.
  std::size_t max_probes_per_input = 0;
  std::uint64_t seed = 0x5eed;
  /// Extra tenfold step reductions allowed per probe. A probe is refined while
  /// its forward and backward one-sided slopes disagree by more than a tenth of
  /// the tolerance, i.e. while the step straddles a ReLU kink. The analytic
  /// gradient plays no part in choosing the step. 0 keeps the fixed step.
  std::size_t max_refinements = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = true;
  std::size_t probes = 0;
  /// Probes whose step had to be refined at least once.
  std::size_t refined = 0;
  /// Location of the worst element, for diagnostics.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using OpUnderTest = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares the analytic gradient of a scalarised op output against central
/// finite differences. Non-scalar outputs are reduced with fixed pseudo-random
/// weights so that symmetric reductions cannot hide errors. Inputs flagged
/// requires_grad are probed; the others are held constant.
GradCheckReport grad_check(const OpUnderTest& op, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

/// In-place variant for graphs whose leaves live elsewhere (e.g. network
/// parameters). `leaves` are perturbed and restored; their gradients are
/// overwritten. `loss` must rebuild the graph on every call.
GradCheckReport grad_check_leaves(const std::function<Tensor()>& loss,
                                  const std::vector<Tensor>& leaves,
                                  const GradCheckOptions& options = {});

/// |a-b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

}  // namespace mismatch
