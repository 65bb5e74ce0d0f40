#include "mismatch/ablation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

namespace mismatch {

namespace fs = std::filesystem;

std::vector<std::string> ablation_grids() {
  return {"decoders", "alpha", "dilation", "stopgrad", "baselines"};
}

namespace {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

AblationCell with_decoders(const RunConfig& base, const char* label, BlockKind d1, BlockKind d2) {
  AblationCell cell{label, base.network, base.train};
  cell.network.decoder1_kind = d1;
  cell.network.decoder2_kind = d2;
  return cell;
}

}  // namespace

std::vector<AblationCell> ablation_cells(const std::string& grid, const RunConfig& base) {
  using enum BlockKind;
  std::vector<AblationCell> cells;
  if (grid == "decoders") {
    cells.push_back(with_decoders(base, "MM-a", standard, standard));
    cells.push_back(with_decoders(base, "MM-b", standard, negative_attention));
    cells.push_back(with_decoders(base, "MM-c", standard, positive_attention));
    cells.push_back(with_decoders(base, "MM", positive_attention, negative_attention));
  } else if (grid == "alpha") {
    for (double a : {0.0, 0.0005, 0.001, 0.002, 0.004}) {
      AblationCell cell{"alpha=" + format_number(a), base.network, base.train};
      cell.train.alpha = a;
      cells.push_back(cell);
    }
  } else if (grid == "dilation") {
    for (std::size_t d : {2, 5, 9}) {
      AblationCell cell{"d=" + std::to_string(d), base.network, base.train};
      cell.network.dilation_rate = d;
      cells.push_back(cell);
    }
  } else if (grid == "stopgrad") {
    for (bool on : {true, false}) {
      AblationCell cell{on ? "stopgrad=on" : "stopgrad=off", base.network, base.train};
      cell.train.stop_gradient = on;
      cells.push_back(cell);
    }
  } else if (grid == "baselines") {
    AblationCell sup1 = with_decoders(base, "Sup1", standard, standard);
    sup1.network.heads = 1;
    sup1.train.consistency_term = false;
    AblationCell sup2 = sup1;
    sup2.label = "Sup2";
    sup2.train.augment = true;
    AblationCell morph = with_decoders(base, "Morph", standard, standard);
    morph.network.decoder1_morph = FeatureMorph::dilate;
    morph.network.decoder2_morph = FeatureMorph::erode;
    cells = {sup1, sup2, morph, with_decoders(base, "MM", positive_attention, negative_attention)};
  } else {
    throw std::invalid_argument("unknown ablation grid '" + grid +
                                "' (expected decoders, alpha, dilation, stopgrad or baselines)");
  }
  for (const auto& c : cells) {
    validate(c.network);
    validate(c.train);
  }
  return cells;
}

AblationRun run_cell(const AblationCell& cell, const Dataset& data, std::uint64_t seed) {
  TrainConfig tc = cell.train;
  tc.seed = cell.train.seed + seed;
  Network net = build_network(cell.network, tc.seed);
  const TrainResult result = train(net, {data.labeled, data.unlabeled, data.validation}, tc);
  const AveragedModel model =
      make_averaged_model(cell.network, result.checkpoints, tc.avg_last_k, tc.averaging);
  AblationRun run;
  run.cell = cell.label;
  run.seed = tc.seed;
  run.per_image = evaluate(model, data.test);
  for (const auto& m : run.per_image) {
    run.mean_iou += m.iou;
    run.mean_dice += m.dice;
    run.mean_ece += m.ece;
  }
  if (!run.per_image.empty()) {
    const double n = static_cast<double>(run.per_image.size());
    run.mean_iou /= n;
    run.mean_dice /= n;
    run.mean_ece /= n;
  }
  return run;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("MISMATCH_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

AblationReport run_ablation(const std::string& grid, const RunConfig& base, const Dataset& data,
                            std::size_t seeds, std::size_t threads) {
  if (seeds < 1) throw std::invalid_argument("run_ablation: seeds must be >= 1");
  const auto cells = ablation_cells(grid, base);
  AblationReport report;
  report.grid = grid;
  report.runs.resize(cells.size() * seeds);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t job = next++; job < report.runs.size(); job = next++) {
      try {
        report.runs[job] = run_cell(cells[job / seeds], data, job % seeds);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t pool = std::max<std::size_t>(1, std::min(threads, report.runs.size()));
  std::vector<std::thread> workers;
  for (std::size_t i = 1; i < pool; ++i) workers.emplace_back(worker);
  worker();
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);

  for (std::size_t c = 0; c < cells.size(); ++c) {
    AblationRow row;
    row.cell = cells[c].label;
    row.seeds = seeds;
    for (std::size_t s = 0; s < seeds; ++s) row.mean_iou += report.runs[c * seeds + s].mean_iou;
    row.mean_iou /= static_cast<double>(seeds);
    if (seeds > 1) {
      double ss = 0.0;
      for (std::size_t s = 0; s < seeds; ++s) {
        const double d = report.runs[c * seeds + s].mean_iou - row.mean_iou;
        ss += d * d;
      }
      row.std_iou = std::sqrt(ss / static_cast<double>(seeds - 1));
    }
    report.summary.push_back(row);
  }
  return report;
}

void write_ablation_csvs(const AblationReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  char buf[512];
  {
    std::ofstream out(dir / "ablation_summary.csv");
    if (!out) throw std::runtime_error("cannot write ablation summary in '" + dir.string() + "'");
    out << "cell,mean_iou,std_iou,seeds\n";
    for (const auto& r : report.summary) {
      std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%zu\n", r.cell.c_str(), r.mean_iou, r.std_iou,
                    r.seeds);
      out << buf;
    }
  }
  std::ofstream out(dir / "ablation_per_seed.csv");
  if (!out) throw std::runtime_error("cannot write per-seed ablation table in '" + dir.string() + "'");
  out << "cell,seed,mean_iou,mean_dice,mean_ece\n";
  for (const auto& r : report.runs) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%.17g,%.17g,%.17g\n", r.cell.c_str(),
                  static_cast<unsigned long long>(r.seed), r.mean_iou, r.mean_dice, r.mean_ece);
    out << buf;
  }
}

}  // namespace mismatch
