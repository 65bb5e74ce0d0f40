#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mismatch/calibration.hpp"

namespace mismatch {

namespace {

/// Midranks (1-based) of the pooled sample plus the tie term sum(t^3 - t).
std::vector<double> midranks(const std::vector<double>& pooled, double& tie_term) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> ranks(n);
  tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  return ranks;
}

/// Counts splits whose |U - mean| reaches the observed deviation.
void enumerate(const std::vector<double>& ranks, std::size_t start, std::size_t remaining,
               double rank_sum, double offset, double mean, double observed, std::size_t& extreme,
               std::size_t& total) {
  if (remaining == 0) {
    ++total;
    const double u = rank_sum - offset;
    if (std::abs(u - mean) >= observed - 1e-9) ++extreme;
    return;
  }
  for (std::size_t i = start; i + remaining <= ranks.size(); ++i) {
    enumerate(ranks, i + 1, remaining - 1, rank_sum + ranks[i], offset, mean, observed, extreme,
              total);
  }
}

}  // namespace

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u: empty sample");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  double tie_term = 0.0;
  const auto ranks = midranks(pooled, tie_term);

  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double n = na + nb;
  const double offset = na * (na + 1.0) / 2.0;
  double ra = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ra += ranks[i];

  MannWhitneyResult r;
  r.u = ra - offset;
  const double mean = na * nb / 2.0;
  if (a.size() * b.size() <= 64) {
    std::size_t extreme = 0, total = 0;
    enumerate(ranks, 0, a.size(), 0.0, offset, mean, std::abs(r.u - mean), extreme, total);
    r.p_two_sided = static_cast<double>(extreme) / static_cast<double>(total);
    r.exact = true;
    return r;
  }
  const double var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (!(var > 0.0)) {
    r.p_two_sided = 1.0;
    return r;
  }
  const double z = (r.u - mean) / std::sqrt(var);
  r.p_two_sided = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
  return r;
}

}  // namespace mismatch
