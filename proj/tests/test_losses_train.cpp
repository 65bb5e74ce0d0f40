#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "mismatch/adam.hpp"
#include "mismatch/checkpoint.hpp"
#include "mismatch/losses.hpp"
#include "mismatch/synth.hpp"
#include "mismatch/train.hpp"
#include "support.hpp"

using namespace mismatch;
using mismatch::testing::random_tensor;

namespace {

Tensor constant(const Shape& s, double v, bool grad = false) { return Tensor::full(s, v, grad); }

std::vector<double> grad_of(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

NetworkConfig tiny_net() {
  NetworkConfig c;
  c.width = 4;
  c.depth = 2;
  return c;
}

Dataset tiny_data() {
  DatasetSpec s;
  s.labeled = 2;
  s.unlabeled = 5;
  s.validation = 2;
  s.test = 2;
  s.seed = 4;
  return generate_dataset(s);
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.epochs = 3;
  t.avg_last_k = 2;
  t.lr = 1e-3;
  t.seed = 9;
  return t;
}

TrainResult run(const Dataset& d, const TrainConfig& t, std::uint64_t init = 1) {
  Network net = build_network(tiny_net(), init);
  return train(net, TrainData{d.labeled, d.unlabeled, d.validation}, t);
}

bool same_params(const Checkpoint& a, const Checkpoint& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i].name != b.params[i].name || a.params[i].values != b.params[i].values) return false;
  return true;
}

Checkpoint scaled(const Checkpoint& c, double f) {
  Checkpoint out = c;
  for (auto& p : out.params)
    for (auto& v : p.values) v *= f;
  return out;
}

}  // namespace

TEST_CASE("dice loss worked examples") {
  const Shape s{1, 1, 2, 2};
  CHECK(soft_dice_loss(constant(s, 1.0), constant(s, 1.0)).item() == doctest::Approx(0.0));
  CHECK(soft_dice_loss(constant(s, 0.0), constant(s, 1.0)).item() == doctest::Approx(0.8));
  CHECK(soft_dice_loss(constant(s, 0.0), constant(s, 0.0)).item() == doctest::Approx(0.0));

  // The batch mean of per-sample losses, not the loss of the pooled batch.
  Tensor p = Tensor::from({2, 1, 1, 2}, {1.0, 1.0, 0.0, 0.0});
  Tensor t = Tensor::from({2, 1, 1, 2}, {1.0, 1.0, 1.0, 1.0});
  CHECK(soft_dice_loss(p, t).item() == doctest::Approx((0.0 + (1.0 - 1.0 / 3.0)) / 2.0));
}

TEST_CASE("consistency loss worked examples") {
  const Shape s{1, 1, 3, 3};
  CHECK(consistency_loss(constant(s, 0.6), constant(s, 0.4)).item() == doctest::Approx(0.04));

  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({2, 1, 4, 4}, rng, true, 0.0, 1.0);
  const Tensor b = random_tensor({2, 1, 4, 4}, rng, true, 0.0, 1.0);
  CHECK(consistency_loss(a, b).item() == consistency_loss(b, a).item());
  CHECK(consistency_loss(a, a).item() == 0.0);

  const ConsistencyOptions bn{false, true};
  const Tensor single = random_tensor({1, 1, 4, 4}, rng, false, 0.0, 1.0);
  const Tensor other = random_tensor({1, 1, 4, 4}, rng, false, 0.0, 1.0);
  CHECK(consistency_loss(single, other, bn).item() == doctest::Approx(consistency_loss(single, other).item()));
}

TEST_CASE("stop-gradient consistency halves each side's gradient") {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({1, 1, 3, 3}, rng, true, 0.0, 1.0);
  const Tensor b = random_tensor({1, 1, 3, 3}, rng, true, 0.0, 1.0);
  const Tensor plain = consistency_loss(a, b);
  backward(plain);
  const auto ga = grad_of(a), gb = grad_of(b);
  Tensor(a).zero_grad();
  Tensor(b).zero_grad();

  const Tensor sg = consistency_loss(a, b, {true, false});
  CHECK(sg.item() == doctest::Approx(plain.item()));
  backward(sg);
  for (std::size_t i = 0; i < ga.size(); ++i) {
    CHECK(a.grad()[i] == doctest::Approx(0.5 * ga[i]));
    CHECK(b.grad()[i] == doctest::Approx(0.5 * gb[i]));
  }
}

TEST_CASE("adam matches a hand-written reference") {
  Tensor theta = Tensor::from({3}, {0.5, -1.0, 2.0}, true);
  std::vector<double> ref = {0.5, -1.0, 2.0}, m(3, 0.0), v(3, 0.0);
  const std::vector<std::vector<double>> grads = {{1.0, -2.0, 0.0}, {0.5, 0.5, 3.0}, {-1.0, 0.0, 1e-3}};
  AdamState state;
  const double lr = 0.01;
  for (std::size_t step = 0; step < grads.size(); ++step) {
    theta.zero_grad();
    backward(dot_with(theta, grads[step]));
    std::vector<Tensor> params{theta};
    adam_step(params, state, lr);
    const double t = static_cast<double>(step + 1);
    for (std::size_t i = 0; i < 3; ++i) {
      const double g = grads[step][i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      ref[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      CHECK(theta.at(i) == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
  // First step moves each coordinate by lr against the gradient sign.
  Tensor fresh = Tensor::from({2}, {0.0, 0.0}, true);
  backward(dot_with(fresh, std::vector<double>{3.0, -0.2}));
  AdamState s2;
  std::vector<Tensor> p2{fresh};
  adam_step(p2, s2, 0.1);
  CHECK(fresh.at(0) == doctest::Approx(-0.1));
  CHECK(fresh.at(1) == doctest::Approx(0.1));
}

TEST_CASE("checkpoint averaging") {
  const Network a = build_network(tiny_net(), 1), b = build_network(tiny_net(), 2), c = build_network(tiny_net(), 3);
  const Checkpoint ca{1, a.snapshot(), ""}, cb{2, b.snapshot(), ""}, cc{3, c.snapshot(), ""};

  const std::vector<Checkpoint> same{ca, ca, ca};
  const Checkpoint idem = average_checkpoints(same);
  for (std::size_t i = 0; i < ca.params.size(); ++i)
    for (std::size_t j = 0; j < ca.params[i].values.size(); ++j)
      CHECK(idem.params[i].values[j] == doctest::Approx(ca.params[i].values[j]).epsilon(1e-14));

  const std::vector<Checkpoint> opposite{ca, scaled(ca, -1.0)};
  for (const auto& p : average_checkpoints(opposite).params)
    for (double x : p.values) CHECK(x == 0.0);

  const std::vector<Checkpoint> abc{ca, cb, cc}, cab{cc, ca, cb};
  const Checkpoint m1 = average_checkpoints(abc), m2 = average_checkpoints(cab);
  for (std::size_t i = 0; i < ca.params.size(); ++i)
    for (std::size_t j = 0; j < ca.params[i].values.size(); ++j) {
      const double want = (ca.params[i].values[j] + cb.params[i].values[j] + cc.params[i].values[j]) / 3.0;
      CHECK(m1.params[i].values[j] == doctest::Approx(want).epsilon(1e-13));
      CHECK(m2.params[i].values[j] == doctest::Approx(m1.params[i].values[j]).epsilon(1e-13));
    }

  NetworkConfig other = tiny_net();
  other.decoder2_kind = BlockKind::standard;
  const std::vector<Checkpoint> mixed{ca, Checkpoint{4, build_network(other, 1).snapshot(), ""}};
  CHECK_THROWS(average_checkpoints(mixed));
  Checkpoint reshaped = ca;
  reshaped.params[0].shape[0] += 1;
  const std::vector<Checkpoint> bad_shape{ca, reshaped};
  CHECK_THROWS(average_checkpoints(bad_shape));
  CHECK_THROWS(average_checkpoints(std::vector<Checkpoint>{}));
}

TEST_CASE("head combination rule") {
  const Shape s{1, 1, 1, 3};
  const Prediction p = combine_heads(Tensor::from(s, {0.6, 0.4, 0.1}), Tensor::from(s, {0.8, 0.6, 0.3}));
  CHECK(p.prob.at(0) == doctest::Approx(0.7));
  CHECK(p.prob.at(1) == 0.5);
  CHECK(p.mask.at(0) == 1.0);
  CHECK(p.mask.at(1) == 1.0);  // ties go to foreground
  CHECK(p.mask.at(2) == 0.0);
  CHECK_THROWS(combine_heads(Tensor::zeros(s), Tensor::zeros({1, 1, 3, 1})));
}

TEST_CASE("training configuration validation") {
  TrainConfig t = tiny_train();
  t.avg_last_k = 5;
  try {
    validate(t);
    FAIL("expected rejection");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "avg_last_k");
  }
  t = tiny_train();
  t.alpha = -1.0;
  CHECK_THROWS_AS(validate(t), ConfigError);
  CHECK(TrainConfig{}.alpha == 0.002);
}

TEST_CASE("training is deterministic") {
  const Dataset d = tiny_data();
  const TrainResult a = run(d, tiny_train()), b = run(d, tiny_train());
  REQUIRE(a.checkpoints.size() == 3);
  CHECK(a.log == b.log);
  CHECK(same_params(a.checkpoints.back(), b.checkpoints.back()));

  TrainConfig reseeded = tiny_train();
  reseeded.seed = 10;
  CHECK_FALSE(same_params(run(d, reseeded).checkpoints.back(), a.checkpoints.back()));
}

TEST_CASE("zero consistency weight equals dropping the term") {
  const Dataset d = tiny_data();
  TrainConfig zero = tiny_train();
  zero.alpha = 0.0;
  TrainConfig dropped = zero;
  dropped.consistency_term = false;
  const TrainResult a = run(d, zero), b = run(d, dropped);
  for (std::size_t e = 0; e < a.checkpoints.size(); ++e) CHECK(same_params(a.checkpoints[e], b.checkpoints[e]));

  TrainConfig on = tiny_train();
  CHECK_FALSE(same_params(run(d, on).checkpoints.back(), a.checkpoints.back()));
}

TEST_CASE("joint regime and stop-gradient both train") {
  const Dataset d = tiny_data();
  TrainConfig t = tiny_train();
  t.regime = Regime::joint;
  t.stop_gradient = true;
  t.batch_size = 2;
  t.batch_dim_normalize = true;
  const TrainResult r = run(d, t);
  CHECK(r.log.size() == 3);
  for (const auto& m : r.log) {
    CHECK(std::isfinite(m.dice_loss));
    CHECK(std::isfinite(m.consistency_loss));
  }
}

TEST_CASE("empty splits are rejected") {
  const Dataset d = tiny_data();
  Network net = build_network(tiny_net(), 0);
  CHECK_THROWS(train(net, TrainData{{}, d.unlabeled, {}}, tiny_train()));
  CHECK_THROWS(train(net, TrainData{d.labeled, {}, {}}, tiny_train()));
}

TEST_CASE("supervised loss goes down on a small problem") {
  const Dataset d = tiny_data();
  TrainConfig t = tiny_train();
  t.epochs = 8;
  t.lr = 3e-3;
  const TrainResult r = run(d, t);
  CHECK(r.log.back().dice_loss < r.log.front().dice_loss);
}

TEST_CASE("averaged models") {
  const Dataset d = tiny_data();
  const TrainResult r = run(d, tiny_train());
  const Tensor x = stack_images(d.test);

  const AveragedModel last = make_averaged_model(tiny_net(), r.checkpoints, 1, Averaging::parameters);
  Network direct = build_network(tiny_net(), 0);
  direct.load(r.checkpoints.back().params);
  const Prediction want = predict(direct.inference_copy(), x);
  const Prediction got = predict(last, x);
  for (std::size_t i = 0; i < want.prob.numel(); ++i) CHECK(got.prob.at(i) == want.prob.at(i));

  const AveragedModel ens = make_averaged_model(tiny_net(), r.checkpoints, 2, Averaging::predictions);
  CHECK(ens.members.size() == 2);
  const AveragedModel avg = make_averaged_model(tiny_net(), r.checkpoints, 2, Averaging::parameters);
  CHECK(avg.members.size() == 1);
  const Prediction pe = predict(ens, x);
  for (double p : pe.prob.data()) CHECK((p >= 0.0 && p <= 1.0));

  const auto rows = evaluate(avg, d.test);
  CHECK(rows.size() == d.test.size());
  for (const auto& row : rows) {
    CHECK((row.iou >= 0.0 && row.iou <= 1.0));
    CHECK((row.ece >= 0.0 && row.ece <= 1.0));
  }
}

TEST_CASE("attention shift rows") {
  const Dataset d = tiny_data();
  const TrainResult r = run(d, tiny_train());
  const AveragedModel m = make_averaged_model(tiny_net(), r.checkpoints, 2, Averaging::predictions);
  const auto rows = attention_shift(m, d.test);
  REQUIRE(rows.size() == d.test.size());
  for (const auto& row : rows) {
    CHECK((row.band_p1 > 0.0 && row.band_p1 < 1.0));
    CHECK(std::isfinite(row.band_delta2));
    CHECK(std::abs(row.band_delta2) < 1.0);
  }

  NetworkConfig single = tiny_net();
  single.heads = 1;
  Network one = build_network(single, 0);
  AveragedModel plain;
  plain.members.push_back(one.inference_copy());
  CHECK_THROWS(attention_shift(plain, d.test));
}
