#include "mismatch/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "mismatch/ablation.hpp"
#include "mismatch/calibration.hpp"
#include "mismatch/config.hpp"
#include "mismatch/erf.hpp"
#include "mismatch/mmt.hpp"
#include "mismatch/train.hpp"

namespace mismatch {

namespace fs = std::filesystem;

namespace {
constexpr const char* kResolvedConfig = "resolved_config.json";
}  // namespace

LoadedModel load_model(const fs::path& p) {
  if (p.empty()) throw std::invalid_argument("--checkpoint is required");
  LoadedModel lm;
  if (fs::exists(p / "manifest.json")) {
    const StoredCheckpoint s = read_checkpoint(p);
    lm.config.network = s.network;
    lm.config.data.size = s.network.input_size;
    lm.model.members.push_back(restore_network(s));
    return lm;
  }
  lm.config = load_run_config(p / kResolvedConfig);
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(p / "checkpoints")) {
    if (e.is_directory() && e.path().filename().string().starts_with("epoch_")) {
      dirs.push_back(e.path());
    }
  }
  if (dirs.empty()) throw std::runtime_error("no epoch checkpoints under '" + p.string() + "'");
  std::sort(dirs.begin(), dirs.end());
  std::vector<Checkpoint> checkpoints;
  for (const auto& dir : dirs) checkpoints.push_back(read_checkpoint(dir).checkpoint);
  lm.model = make_averaged_model(lm.config.network, checkpoints, lm.config.train.avg_last_k,
                                 lm.config.train.averaging);
  return lm;
}

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string grid;
};

RunConfig resolve(const Options& o) { return load_run_config(o.config); }

Dataset load_or_generate(const std::string& data_dir, RunConfig& config) {
  if (data_dir.empty()) return generate_dataset(config.data);
  Dataset d = read_dataset(data_dir);
  config.data = d.spec;  // the echo must describe the data actually used
  return d;
}

void cmd_gen_data(const Options& o) {
  RunConfig config = resolve(o);
  if (o.seed) config.data.seed = *o.seed;
  validate(config.data);
  const Dataset d = generate_dataset(config.data);
  write_dataset(d, o.out);
  write_resolved_config(config, fs::path(o.out) / kResolvedConfig);
  std::printf("wrote %zu samples to %s\n", config.data.count(), o.out.c_str());
}

std::string epoch_dir(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04zu", epoch);
  return buf;
}

void cmd_train(const Options& o) {
  RunConfig config = resolve(o);
  if (o.seed) config.train.seed = *o.seed;
  const Dataset d = load_or_generate(o.data, config);
  if (config.network.input_size != config.data.size) config.network.input_size = config.data.size;
  validate(config.network);
  const fs::path out(o.out);
  fs::create_directories(out);
  write_resolved_config(config, out / kResolvedConfig);

  const std::string hash = config_fingerprint(to_json(config));
  Network net = build_network(config.network, config.train.seed);
  const TrainResult result =
      train(net, {d.labeled, d.unlabeled, d.validation}, config.train, hash);
  write_metrics_csv(result.log, out / "metrics.csv");

  const std::size_t k = std::min(config.train.avg_last_k, result.checkpoints.size());
  const auto tail = std::span(result.checkpoints).last(k);
  for (const auto& c : tail) {
    write_checkpoint(out / "checkpoints" / epoch_dir(c.epoch), config.network, config.train.seed, c);
  }
  write_checkpoint(out / "checkpoints" / "averaged", config.network, config.train.seed,
                   average_checkpoints(tail));
  const auto& last = result.log.back();
  std::printf("trained %zu epochs: dice_loss=%.6f val_iou=%.4f val_ece=%.4f\n", last.epoch,
              last.dice_loss, last.val_iou, last.val_ece);
}

/// A run directory (resolved config + checkpoints/epoch_*) or a single
/// checkpoint directory (manifest.json).
Dataset eval_data(const Options& o, RunConfig& config) {
  if (!o.data.empty()) return read_dataset(o.data);
  if (o.checkpoint.empty() || !fs::exists(fs::path(o.checkpoint) / kResolvedConfig)) {
    throw std::invalid_argument("--data is required when the checkpoint carries no run config");
  }
  return generate_dataset(config.data);
}

void cmd_eval(const Options& o) {
  LoadedModel lm = load_model(o.checkpoint);
  const Dataset d = eval_data(o, lm.config);
  const fs::path out(o.out);
  fs::create_directories(out);
  write_resolved_config(lm.config, out / kResolvedConfig);
  const auto rows = evaluate(lm.model, d.test, lm.config.calibrate.bins);
  write_image_metrics_csv(rows, out / "per_image.csv");
  double iou_sum = 0.0;
  for (const auto& r : rows) iou_sum += r.iou;
  std::printf("evaluated %zu test images: mean_iou=%.4f\n", rows.size(),
              rows.empty() ? 0.0 : iou_sum / static_cast<double>(rows.size()));
}

void cmd_calibrate(const Options& o) {
  LoadedModel lm = load_model(o.checkpoint);
  const Dataset d = eval_data(o, lm.config);
  const auto& cc = lm.config.calibrate;
  const fs::path out(o.out);
  fs::create_directories(out);
  write_resolved_config(lm.config, out / kResolvedConfig);

  std::vector<double> probs, truth;
  std::vector<ScatterPoint> scatter;
  for (const auto& s : d.test) {
    const Prediction p = predict(lm.model, stack_images({&s, 1}));
    probs.insert(probs.end(), p.prob.data().begin(), p.prob.data().end());
    truth.insert(truth.end(), s.mask.values.begin(), s.mask.values.end());
    const auto stats = bin_stats(p.prob.data(), s.mask.values, cc.bins, cc.lo, cc.hi);
    std::size_t n = 0;
    for (const auto& b : stats) n += b.count;
    scatter.push_back({sample_stem(s.id), iou(p.mask.data(), s.mask.values), n ? ece(stats, n) : 0.0});
  }
  const auto stats = bin_stats(probs, truth, cc.bins, cc.lo, cc.hi);
  std::size_t n = 0;
  for (const auto& b : stats) n += b.count;
  reliability_export(stats, out / "reliability.csv", out / "reliability.svg");
  write_ece_iou_scatter(scatter, out / "ece_iou_scatter.csv");
  if (lm.model.members.front().decoders.size() == 2) {
    write_attention_shift_csv(attention_shift(lm.model, d.test), out / "attention_shift.csv");
  }
  std::printf("pooled test ECE=%.6f over %zu pixels\n", n ? ece(stats, n) : 0.0, n);
}

void cmd_erf(const Options& o) {
  RunConfig config = resolve(o);
  ErfConfig& ec = config.erf;
  if (o.seed) {
    for (auto& s : ec.seeds) s += *o.seed;
  }
  const fs::path out(o.out);
  fs::create_directories(out / "maps");
  write_resolved_config(config, out / kResolvedConfig);

  std::vector<ErfReport> reports;
  std::vector<double> depths, sizes;
  for (std::size_t n = 1; n <= ec.max_plain_depth; ++n) {
    reports.push_back(measure_erf(plain_stack(n, ec.channels), ec.mode, ec.seeds, ec.input_size,
                                  ec.threshold));
    depths.push_back(static_cast<double>(n));
    sizes.push_back(reports.back().erf_size);
  }
  const auto blocks = decoder_block_stacks(config.network.dilation_rate, ec.prefix_depth, ec.channels);
  for (const auto* stack : {&blocks.main, &blocks.pasb_side, &blocks.nasb_side}) {
    reports.push_back(measure_erf(*stack, ec.mode, ec.seeds, ec.input_size, ec.threshold));
  }
  if (!o.checkpoint.empty()) {
    // Trained decoder blocks, measured as-is at their native resolution.
    const LoadedModel lm = load_model(o.checkpoint);
    const Network& net = lm.model.members.front();
    for (std::size_t dec = 0; dec < net.decoders.size(); ++dec) {
      for (std::size_t b = 0; b < net.decoders[dec].blocks.size(); ++b) {
        const std::size_t size = net.config.input_size >> (net.config.depth - 1 - b);
        const std::string base = "trained.dec" + std::to_string(dec + 1) + ".block" + std::to_string(b);
        reports.push_back(measure_erf(base + ".main",
                                      decoder_branch_probe(net, dec, b, BlockBranch::main, size),
                                      ErfMode::as_is, ec.seeds, ec.threshold));
        if (net.decoders[dec].blocks[b].kind != BlockKind::standard) {
          reports.push_back(measure_erf(base + ".side",
                                        decoder_branch_probe(net, dec, b, BlockBranch::side, size),
                                        ErfMode::as_is, ec.seeds, ec.threshold));
        }
      }
    }
  }
  for (const auto& r : reports) {
    write_mmt(out / "maps" / (r.id + ".mmt"), {r.height, r.width}, r.gradient_map);
  }
  write_erf_summary_csv(reports, out / "erf_summary.csv");
  const SqrtFit fit = fit_sqrt_growth(depths, sizes);
  std::ofstream fit_out(out / "erf_sqrt_fit.csv");
  fit_out << "c,r2\n";
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", fit.c, fit.r2);
  fit_out << buf;
  std::printf("plain-stack sqrt fit: c=%.4f r2=%.4f; %zu reports\n", fit.c, fit.r2, reports.size());
}

void cmd_ablate(const Options& o) {
  RunConfig config = resolve(o);
  if (!o.grid.empty()) config.ablate.grid = o.grid;
  if (o.seed) config.train.seed = *o.seed;
  ablation_cells(config.ablate.grid, config);  // reject unknown grids before any work
  const Dataset d = load_or_generate(o.data, config);
  config.network.input_size = config.data.size;
  const fs::path out(o.out);
  fs::create_directories(out);
  write_resolved_config(config, out / kResolvedConfig);
  const AblationReport report =
      run_ablation(config.ablate.grid, config, d, config.ablate.seeds, worker_threads());
  write_ablation_csvs(report, out);
  for (const auto& r : report.summary) {
    std::printf("%-14s %.4f +- %.4f (%zu seeds)\n", r.cell.c_str(), r.mean_iou, r.std_iou, r.seeds);
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Semi-supervised segmentation with paired attention-shifting decoders", "mismatch"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "JSON run config (all keys optional)");
    if (needs_config) c->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed override");
    sub->add_option("--out", o.out, "Output directory")->required();
  };
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  common(gen, true);
  auto* tr = app.add_subcommand("train", "Train a network and write checkpoints");
  common(tr, true);
  tr->add_option("--data", o.data, "Dataset directory (generated from the config when absent)");
  auto* ev = app.add_subcommand("eval", "Per-image IoU, Dice and ECE on the test split");
  common(ev, false);
  ev->add_option("--checkpoint", o.checkpoint, "Run or checkpoint directory")->required();
  ev->add_option("--data", o.data, "Dataset directory");
  auto* erf = app.add_subcommand("erf", "Effective receptive field probes");
  common(erf, true);
  erf->add_option("--checkpoint", o.checkpoint, "Also probe the blocks of a trained model");
  auto* cal = app.add_subcommand("calibrate", "Reliability diagram and ECE-vs-IoU scatter");
  common(cal, false);
  cal->add_option("--checkpoint", o.checkpoint, "Run or checkpoint directory")->required();
  cal->add_option("--data", o.data, "Dataset directory");
  auto* abl = app.add_subcommand("ablate", "Run an ablation grid over several seeds");
  common(abl, true);
  abl->add_option("--grid", o.grid, "decoders, alpha, dilation, stopgrad or baselines");
  abl->add_option("--data", o.data, "Dataset directory (generated from the config when absent)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "mismatch: " << e.what() << '\n';
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    if (gen->parsed()) cmd_gen_data(o);
    else if (tr->parsed()) cmd_train(o);
    else if (ev->parsed()) cmd_eval(o);
    else if (erf->parsed()) cmd_erf(o);
    else if (cal->parsed()) cmd_calibrate(o);
    else if (abl->parsed()) cmd_ablate(o);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "mismatch: error: " << msg << '\n';
    return 1;
  }
  return 0;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace mismatch
