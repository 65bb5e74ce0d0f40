#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mismatch {

/// Masks are real arrays; values > 0.5 count as foreground.
double iou(std::span<const double> pred_mask, std::span<const double> true_mask);
double dice_score(std::span<const double> pred_mask, std::span<const double> true_mask);

/// One confidence bin [lo, hi) (the last bin is closed at hi). A pixel's
/// confidence is max(p, 1-p) and its predicted label is p >= 0.5.
struct BinStats {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double acc = 0.0;   // fraction of correctly labelled pixels
  double conf = 0.0;  // mean confidence

  double gap() const { return count == 0 ? 0.0 : acc - conf; }
  bool operator==(const BinStats&) const = default;
};

std::vector<BinStats> bin_stats(std::span<const double> probs, std::span<const double> truth,
                                std::size_t bins = 5, double lo = 0.5, double hi = 1.0);

/// sum_m |B_m|/n * |acc_m - conf_m|; empty bins contribute nothing.
double ece(std::span<const BinStats> stats, std::size_t n);
double ece(std::span<const double> probs, std::span<const double> truth, std::size_t bins = 5);

void write_reliability_csv(std::span<const BinStats> stats, const std::filesystem::path& path);
std::vector<BinStats> read_reliability_csv(const std::filesystem::path& path);
/// Self-contained SVG with paired accuracy/confidence bars per bin.
void write_reliability_svg(std::span<const BinStats> stats, const std::filesystem::path& path);
void reliability_export(std::span<const BinStats> stats, const std::filesystem::path& csv_path,
                        const std::filesystem::path& svg_path);

struct ScatterPoint {
  std::string id;
  double iou = 0.0;
  double ece = 0.0;
};
void write_ece_iou_scatter(std::span<const ScatterPoint> points, const std::filesystem::path& path);

struct ConfidenceDelta {
  std::vector<double> delta;  // after - before
  double band_mean = 0.0;     // NaN when no band was given or it is empty
  double outside_mean = 0.0;  // mean over the complement (everything if no band)
  std::size_t band_count = 0;
};

ConfidenceDelta confidence_delta_map(std::span<const double> before, std::span<const double> after,
                                     std::optional<std::span<const double>> band = std::nullopt);

struct MannWhitneyResult {
  double u = 0.0;  // U statistic of the first sample
  double p_two_sided = 1.0;
  bool exact = false;
};

/// Midrank U statistic. Exact permutation p-value when n_a * n_b <= 64,
/// otherwise the tie-corrected normal approximation.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

}  // namespace mismatch
