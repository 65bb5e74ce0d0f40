#include "mismatch/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "mismatch/adam.hpp"
#include "mismatch/calibration.hpp"
#include "mismatch/error.hpp"
#include "mismatch/losses.hpp"

namespace mismatch {

namespace fs = std::filesystem;

std::string to_string(Regime regime) { return regime == Regime::streaming ? "streaming" : "joint"; }

std::string to_string(Averaging averaging) {
  return averaging == Averaging::parameters ? "parameters" : "predictions";
}

Regime parse_regime(const std::string& name) {
  if (name == "streaming") return Regime::streaming;
  if (name == "joint") return Regime::joint;
  throw std::invalid_argument("unknown regime '" + name + "'");
}

Averaging parse_averaging(const std::string& name) {
  if (name == "parameters") return Averaging::parameters;
  if (name == "predictions") return Averaging::predictions;
  throw std::invalid_argument("unknown averaging '" + name + "'");
}

void validate(const TrainConfig& c) {
  if (!(c.alpha >= 0.0) || !std::isfinite(c.alpha)) throw ConfigError("alpha", "must be >= 0");
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw ConfigError("lr", "must be > 0");
  if (c.epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (c.avg_last_k < 1) throw ConfigError("avg_last_k", "must be >= 1");
  if (c.avg_last_k > c.epochs) throw ConfigError("avg_last_k", "must not exceed epochs");
  if (!(c.augment_noise_sigma >= 0.0)) throw ConfigError("augment_noise_sigma", "must be >= 0");
}

namespace {

/// Turns gradient tracking off on every parameter for the guard's lifetime.
class NoGrad {
 public:
  explicit NoGrad(const Network& net) : params_(net.registry.tensors()) {
    for (auto& p : params_) p.set_requires_grad(false);
  }
  ~NoGrad() {
    for (auto& p : params_) p.set_requires_grad(true);
  }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  std::vector<Tensor> params_;
};

using Batch = std::vector<std::size_t>;

std::vector<Batch> make_batches(std::size_t count, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t i = 0; i < count; i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
  }
  return batches;
}

std::vector<Sample> gather(std::span<const Sample> pool, const Batch& batch) {
  std::vector<Sample> out;
  out.reserve(batch.size());
  for (auto i : batch) out.push_back(pool[i]);
  return out;
}

void augment_batch(std::vector<Sample>& batch, double sigma, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  for (auto& s : batch) {
    if (coin(rng)) s = augment(s, AugmentKind::hflip, 0.0, 0);
    if (coin(rng)) s = augment(s, AugmentKind::vflip, 0.0, 0);
    if (sigma > 0.0) s = augment(s, AugmentKind::gaussian_noise, sigma, rng());
  }
}

void require_finite(double value, const char* what, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(value)) {
    throw std::runtime_error(std::string("non-finite ") + what + " at epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(step));
  }
}

struct Validation {
  double iou = 0.0;
  double ece = 0.0;
};

Validation validate_on(const Network& net, std::span<const Sample> samples) {
  if (samples.empty()) return {};
  NoGrad guard(net);
  Validation v;
  for (const auto& s : samples) {
    const Prediction pred = predict(net, stack_images({&s, 1}));
    v.iou += iou(pred.mask.data(), s.mask.values);
    v.ece += ece(pred.prob.data(), s.mask.values);
  }
  v.iou /= static_cast<double>(samples.size());
  v.ece /= static_cast<double>(samples.size());
  return v;
}

}  // namespace

TrainResult train(Network& net, const TrainData& data, const TrainConfig& config,
                  const std::string& config_hash) {
  validate(config);
  if (data.labeled.empty()) throw std::invalid_argument("train: labeled dataset is empty");
  if (data.unlabeled.empty()) throw std::invalid_argument("train: unlabeled dataset is empty");
  const std::size_t factor = std::size_t{1} << net.config.depth;
  for (const auto* split : {&data.labeled, &data.unlabeled, &data.validation}) {
    for (const auto& s : *split) {
      if (s.image.height % factor != 0 || s.image.width % factor != 0) {
        throw ShapeError("train: sample " + std::to_string(s.id) +
                         " spatial size is not divisible by 2^depth");
      }
    }
  }

  const bool two_heads = net.decoders.size() > 1;
  const bool use_consistency = config.consistency_term && two_heads;
  const ConsistencyOptions cons_opts{config.stop_gradient, config.batch_dim_normalize};

  // Separate streams keep data order independent of whether augmentation runs.
  std::seed_seq order_seq{config.seed, std::uint64_t{0x0de7}};
  std::seed_seq augment_seq{config.seed, std::uint64_t{0xa06}};
  std::mt19937_64 order_rng(order_seq);
  std::mt19937_64 augment_rng(augment_seq);

  std::vector<Tensor> params = net.registry.tensors();
  AdamState adam;
  TrainResult result;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto lab_batches = make_batches(data.labeled.size(), config.batch_size, order_rng);
    const auto unl_batches = make_batches(data.unlabeled.size(), config.batch_size, order_rng);
    double dice_total = 0.0, cons_total = 0.0;
    std::size_t dice_steps = 0, cons_steps = 0, step = 0;

    // Returns the loss tensor; gradients are left for the caller to apply.
    auto labeled_loss = [&](const Batch& b) {
      auto batch = gather(data.labeled, b);
      if (config.augment) augment_batch(batch, config.augment_noise_sigma, augment_rng);
      const ForwardResult fr = forward(net, stack_images(batch));
      const Tensor target = stack_masks(batch);
      Tensor loss = soft_dice_loss(fr.p1, target);
      if (two_heads) loss = add(loss, soft_dice_loss(fr.p2, target));
      require_finite(loss.item(), "dice loss", epoch, step);
      dice_total += loss.item();
      ++dice_steps;
      return loss;
    };
    auto unlabeled_loss = [&](const Batch& b) -> Tensor {
      if (!use_consistency) return {};
      const auto batch = gather(data.unlabeled, b);
      const ForwardResult fr = forward(net, stack_images(batch));
      const Tensor c = consistency_loss(fr.p1, fr.p2, cons_opts);
      require_finite(c.item(), "consistency loss", epoch, step);
      cons_total += c.item();
      ++cons_steps;
      return scale(c, config.alpha);
    };
    auto apply = [&](const Tensor& loss) {
      net.zero_grad();
      if (loss.defined()) backward(loss);
      adam_step(params, adam, config.lr);
      ++step;
    };

    if (config.regime == Regime::streaming) {
      const std::size_t ratio = (unl_batches.size() + lab_batches.size() - 1) / lab_batches.size();
      std::size_t next_labeled = 0;
      // The labeled batch opens each group. Adam is scale-invariant, so if
      // the unlabeled steps came first, its very first updates would be
      // full-size consistency steps whatever alpha is.
      for (std::size_t u = 0; u < unl_batches.size(); ++u) {
        if (u % ratio == 0 && next_labeled < lab_batches.size()) {
          apply(labeled_loss(lab_batches[next_labeled++]));
        }
        apply(unlabeled_loss(unl_batches[u]));
      }
      while (next_labeled < lab_batches.size()) apply(labeled_loss(lab_batches[next_labeled++]));
    } else {
      const std::size_t steps = std::max(unl_batches.size(), lab_batches.size());
      for (std::size_t i = 0; i < steps; ++i) {
        Tensor loss = labeled_loss(lab_batches[i % lab_batches.size()]);
        const Tensor u = unlabeled_loss(unl_batches[i % unl_batches.size()]);
        if (u.defined()) loss = add(loss, u);
        apply(loss);
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.dice_loss = dice_steps ? dice_total / static_cast<double>(dice_steps) : 0.0;
    m.consistency_loss = cons_steps ? cons_total / static_cast<double>(cons_steps) : 0.0;
    const Validation v = validate_on(net, data.validation);
    m.val_iou = v.iou;
    m.val_ece = v.ece;
    result.log.push_back(m);
    result.checkpoints.push_back({epoch, net.snapshot(), config_hash});
  }
  net.zero_grad();
  return result;
}

void write_metrics_csv(std::span<const EpochMetrics> log, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "epoch,dice_loss,consistency_loss,val_iou,val_ece\n";
  char buf[256];
  for (const auto& m : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.dice_loss,
                  m.consistency_loss, m.val_iou, m.val_ece);
    out << buf;
  }
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Prediction combine_heads(const Tensor& p1, const Tensor& p2) {
  Prediction out;
  if (!p2.defined()) {
    out.prob = p1.detach();
  } else {
    if (p1.shape() != p2.shape()) {
      throw ShapeError("combine_heads: " + shape_string(p1.shape()) + " vs " +
                       shape_string(p2.shape()));
    }
    std::vector<double> v(p1.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.5 * (p1.at(i) + p2.at(i));
    out.prob = Tensor::from(p1.shape(), std::move(v));
  }
  std::vector<double> mask(out.prob.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = out.prob.at(i) >= 0.5 ? 1.0 : 0.0;
  out.mask = Tensor::from(out.prob.shape(), std::move(mask));
  return out;
}

Prediction predict(const Network& net, const Tensor& images) {
  const ForwardResult fr = forward(net, images);
  return combine_heads(fr.p1, fr.p2);
}

AveragedModel make_averaged_model(const NetworkConfig& config,
                                  std::span<const Checkpoint> checkpoints, std::size_t last_k,
                                  Averaging averaging) {
  if (checkpoints.empty()) throw std::invalid_argument("make_averaged_model: no checkpoints");
  if (last_k < 1) throw std::invalid_argument("make_averaged_model: last_k must be >= 1");
  const auto tail = checkpoints.last(std::min(last_k, checkpoints.size()));
  AveragedModel model;
  auto restore = [&](const Checkpoint& c) {
    Network net = build_network(config, 0);
    net.load(c.params);
    return net.inference_copy();
  };
  if (averaging == Averaging::parameters) {
    model.members.push_back(restore(average_checkpoints(tail)));
  } else {
    for (const auto& c : tail) model.members.push_back(restore(c));
  }
  return model;
}

Prediction predict(const AveragedModel& model, const Tensor& images) {
  if (model.members.empty()) throw std::invalid_argument("predict: empty model");
  if (model.members.size() == 1) return predict(model.members.front(), images);
  std::vector<double> acc;
  for (const auto& net : model.members) {
    const Prediction p = predict(net, images);
    if (acc.empty()) acc.assign(p.prob.numel(), 0.0);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p.prob.at(i);
  }
  for (auto& v : acc) v /= static_cast<double>(model.members.size());
  return combine_heads(Tensor::from(images.shape().size() == 4
                                        ? Shape{images.dim(0), 1, images.dim(2), images.dim(3)}
                                        : images.shape(),
                                    std::move(acc)),
                       Tensor{});
}

std::vector<ImageMetrics> evaluate(const AveragedModel& model, std::span<const Sample> samples,
                                   std::size_t bins) {
  std::vector<ImageMetrics> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) {
    const Prediction p = predict(model, stack_images({&s, 1}));
    ImageMetrics m;
    m.id = s.id;
    m.iou = iou(p.mask.data(), s.mask.values);
    m.dice = dice_score(p.mask.data(), s.mask.values);
    m.ece = ece(p.prob.data(), s.mask.values, bins);
    rows.push_back(m);
  }
  return rows;
}

void write_image_metrics_csv(std::span<const ImageMetrics> rows, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "id,iou,dice,ece\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.id, r.iou, r.dice, r.ece);
    out << buf;
  }
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::vector<AttentionShift> attention_shift(const AveragedModel& model, std::span<const Sample> samples) {
  if (model.members.empty()) throw std::invalid_argument("attention_shift: empty model");
  for (const auto& m : model.members) {
    if (m.decoders.size() != 2) throw std::invalid_argument("attention_shift: needs a two-headed network");
  }
  std::vector<AttentionShift> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) {
    const Map2D band = boundary_band(s.mask);
    AttentionShift row;
    row.id = s.id;
    for (const auto& member : model.members) {
      const ForwardResult fr = forward(member, stack_images({&s, 1}));
      double p1 = 0.0, p2 = 0.0, n = 0.0;
      for (std::size_t i = 0; i < band.values.size(); ++i) {
        if (band.values[i] <= 0.5) continue;
        p1 += fr.p1.at(i);
        p2 += fr.p2.at(i);
        n += 1.0;
      }
      row.band_p1 += n > 0 ? p1 / n : 0.0;
      row.band_p2 += n > 0 ? p2 / n : 0.0;

      const Decoder& dec = member.decoders[1];
      const BlockTap& last = fr.taps2.back();
      const Tensor before = sigmoid(dec.head(last.pre_attention));
      const Tensor after = sigmoid(dec.head(last.post_attention));
      const ConfidenceDelta d = confidence_delta_map(before.data(), after.data(), std::span<const double>(band.values));
      row.band_delta2 += n > 0 ? d.band_mean : 0.0;
      row.outside_delta2 += d.outside_mean;
    }
    const double k = static_cast<double>(model.members.size());
    row.band_p1 /= k;
    row.band_p2 /= k;
    row.band_delta2 /= k;
    row.outside_delta2 /= k;
    rows.push_back(row);
  }
  return rows;
}

void write_attention_shift_csv(std::span<const AttentionShift> rows, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "id,band_p1,band_p2,band_delta2,outside_delta2\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.id, r.band_p1, r.band_p2,
                  r.band_delta2, r.outside_delta2);
    out << buf;
  }
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

}  // namespace mismatch
