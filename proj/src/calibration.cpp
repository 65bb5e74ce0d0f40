#include "mismatch/calibration.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mismatch {

namespace fs = std::filesystem;

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": size mismatch " + std::to_string(a) +
                                " vs " + std::to_string(b));
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double iou(std::span<const double> pred_mask, std::span<const double> true_mask) {
  require_same_size(pred_mask.size(), true_mask.size(), "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const bool p = pred_mask[i] > 0.5, t = true_mask[i] > 0.5;
    inter += p && t;
    uni += p || t;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double dice_score(std::span<const double> pred_mask, std::span<const double> true_mask) {
  require_same_size(pred_mask.size(), true_mask.size(), "dice_score");
  std::size_t inter = 0, total = 0;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const bool p = pred_mask[i] > 0.5, t = true_mask[i] > 0.5;
    inter += p && t;
    total += static_cast<std::size_t>(p) + static_cast<std::size_t>(t);
  }
  return total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

std::vector<BinStats> bin_stats(std::span<const double> probs, std::span<const double> truth,
                                std::size_t bins, double lo, double hi) {
  if (bins < 1) throw std::invalid_argument("bin_stats: need at least one bin");
  if (!(lo < hi)) throw std::invalid_argument("bin_stats: empty confidence range");
  require_same_size(probs.size(), truth.size(), "bin_stats");

  std::vector<double> edges(bins + 1);
  for (std::size_t m = 0; m <= bins; ++m) {
    edges[m] = lo + (hi - lo) * static_cast<double>(m) / static_cast<double>(bins);
  }
  edges[bins] = hi;

  std::vector<BinStats> stats(bins);
  std::vector<double> correct(bins, 0.0), conf_sum(bins, 0.0);
  for (std::size_t m = 0; m < bins; ++m) {
    stats[m].lo = edges[m];
    stats[m].hi = edges[m + 1];
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("bin_stats: probability outside [0,1]");
    const double c = std::max(p, 1.0 - p);
    if (c < lo || c > hi) continue;
    // Largest m with edges[m] <= c; values on an inner edge go to the upper bin.
    std::size_t m = bins - 1;
    while (m > 0 && c < edges[m]) --m;
    const bool label = p >= 0.5;
    const bool truth_label = truth[i] > 0.5;
    ++stats[m].count;
    correct[m] += label == truth_label ? 1.0 : 0.0;
    conf_sum[m] += c;
  }
  for (std::size_t m = 0; m < bins; ++m) {
    if (stats[m].count == 0) continue;
    const double n = static_cast<double>(stats[m].count);
    stats[m].acc = correct[m] / n;
    stats[m].conf = conf_sum[m] / n;
  }
  return stats;
}

double ece(std::span<const BinStats> stats, std::size_t n) {
  if (n == 0) throw std::invalid_argument("ece: no binned pixels");
  std::size_t total = 0;
  for (const auto& b : stats) total += b.count;
  if (total != n) {
    throw std::invalid_argument("ece: n = " + std::to_string(n) + " but bins hold " +
                                std::to_string(total));
  }
  double e = 0.0;
  for (const auto& b : stats) {
    if (b.count == 0) continue;
    e += static_cast<double>(b.count) / static_cast<double>(n) * std::abs(b.acc - b.conf);
  }
  return e;
}

double ece(std::span<const double> probs, std::span<const double> truth, std::size_t bins) {
  const auto stats = bin_stats(probs, truth, bins);
  std::size_t n = 0;
  for (const auto& b : stats) n += b.count;
  return ece(stats, n);
}

void write_reliability_csv(std::span<const BinStats> stats, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "bin_lo,bin_hi,count,acc,conf,gap\n";
  for (const auto& b : stats) {
    out << fmt(b.lo) << ',' << fmt(b.hi) << ',' << b.count << ',' << fmt(b.acc) << ','
        << fmt(b.conf) << ',' << fmt(b.gap()) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::vector<BinStats> read_reliability_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != "bin_lo,bin_hi,count,acc,conf,gap") {
    throw std::runtime_error("'" + path.string() + "' is not a reliability CSV");
  }
  std::vector<BinStats> stats;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell[6];
    for (auto& c : cell) std::getline(row, c, ',');
    BinStats b;
    b.lo = std::stod(cell[0]);
    b.hi = std::stod(cell[1]);
    b.count = std::stoull(cell[2]);
    b.acc = std::stod(cell[3]);
    b.conf = std::stod(cell[4]);
    stats.push_back(b);
  }
  return stats;
}

void write_reliability_svg(std::span<const BinStats> stats, const fs::path& path) {
  constexpr double kWidth = 480, kHeight = 320, kMargin = 40;
  const double plot_w = kWidth - 2 * kMargin, plot_h = kHeight - 2 * kMargin;
  const double slot = stats.empty() ? plot_w : plot_w / static_cast<double>(stats.size());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\""
      << kWidth - kMargin << "\" y2=\"" << kHeight - kMargin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin
      << "\" y2=\"" << kHeight - kMargin << "\" stroke=\"black\"/>\n";
  for (std::size_t m = 0; m < stats.size(); ++m) {
    const auto& b = stats[m];
    const double x0 = kMargin + slot * static_cast<double>(m);
    const double bar = slot * 0.4;
    const double acc_h = plot_h * b.acc, conf_h = plot_h * b.conf;
    out << "<rect x=\"" << x0 + slot * 0.1 << "\" y=\"" << kHeight - kMargin - acc_h
        << "\" width=\"" << bar << "\" height=\"" << acc_h << "\" fill=\"#3366cc\"/>\n";
    out << "<rect x=\"" << x0 + slot * 0.5 << "\" y=\"" << kHeight - kMargin - conf_h
        << "\" width=\"" << bar << "\" height=\"" << conf_h << "\" fill=\"#dc3912\"/>\n";
    char label[64];
    std::snprintf(label, sizeof label, "%.2f-%.2f", b.lo, b.hi);
    out << "<text x=\"" << x0 + slot * 0.5 << "\" y=\"" << kHeight - kMargin + 14
        << "\" text-anchor=\"middle\">" << label << "</text>\n";
  }
  out << "<text x=\"" << kMargin << "\" y=\"" << kMargin - 10
      << "\">accuracy (blue) vs confidence (red)</text>\n";
  out << "</svg>\n";
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

void reliability_export(std::span<const BinStats> stats, const fs::path& csv_path,
                        const fs::path& svg_path) {
  write_reliability_csv(stats, csv_path);
  write_reliability_svg(stats, svg_path);
}

void write_ece_iou_scatter(std::span<const ScatterPoint> points, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "id,iou,ece\n";
  for (const auto& p : points) out << p.id << ',' << fmt(p.iou) << ',' << fmt(p.ece) << '\n';
}

ConfidenceDelta confidence_delta_map(std::span<const double> before, std::span<const double> after,
                                     std::optional<std::span<const double>> band) {
  require_same_size(before.size(), after.size(), "confidence_delta_map");
  if (band) require_same_size(band->size(), before.size(), "confidence_delta_map band");
  ConfidenceDelta out;
  out.delta.resize(before.size());
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t out_count = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    out.delta[i] = after[i] - before[i];
    if (band && (*band)[i] > 0.5) {
      in_sum += out.delta[i];
      ++out.band_count;
    } else {
      out_sum += out.delta[i];
      ++out_count;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.band_mean = out.band_count ? in_sum / static_cast<double>(out.band_count) : nan;
  out.outside_mean = out_count ? out_sum / static_cast<double>(out_count) : nan;
  return out;
}

}  // namespace mismatch
