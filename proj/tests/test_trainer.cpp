#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "adan/router.hpp"
#include "adan/trainer.hpp"
#include "oracles.hpp"

using namespace adan;

namespace {

// Digits drawn as class-dependent blobs so a few steps already learn something.
Dataset synthetic_digits(std::size_t n, std::uint64_t seed, bool labeled, float shift = 0.0f) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.3f);
  Dataset d;
  d.images = Tensor({n, 1, 32, 32});
  if (labeled) d.labels.emplace();
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 10);
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        const bool on = (y / 8) == static_cast<std::size_t>(label % 4) && (x / 11) == static_cast<std::size_t>(label / 4);
        d.images.at(i, 0, y, x) = (on ? 1.5f : -0.3f) + shift + noise(rng);
      }
    if (labeled) d.labels->push_back(label);
  }
  return d;
}

TrainConfig quick_config(double lambda) {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.seed = 3;
  c.loss.lambda = lambda;
  c.learning_rate = 0.05;
  return c;
}

DomainBatch fixed_batch(const Dataset& s, const Dataset& t, std::size_t n) {
  DomainBatch b;
  b.source_images = s.images.slice_rows(0, n);
  b.target_images = t.images.slice_rows(0, n);
  b.source_labels.assign(s.labels->begin(), s.labels->begin() + static_cast<std::ptrdiff_t>(n));
  return b;
}

}  // namespace

TEST_CASE("momentum SGD recurrence") {
  Tensor theta({1}, 1.0f);
  std::vector<ParameterRef<Tensor>> params{{"theta", &theta, 1}};
  std::vector<Tensor> velocity;
  const std::vector<Tensor> g{Tensor({1}, 1.0f)};
  sgd_step(params, g, velocity, 0.1, 0.9, 0.0);
  CHECK(theta[0] == doctest::Approx(0.9));
  sgd_step(params, g, velocity, 0.1, 0.9, 0.0);
  CHECK(theta[0] == doctest::Approx(0.71).epsilon(1e-6));

  Tensor fixed({3}, {1, -2, 3});
  std::vector<ParameterRef<Tensor>> fp{{"w", &fixed, 3}};
  std::vector<Tensor> fv;
  sgd_step(fp, {Tensor({3})}, fv, 0.1, 0.9, 0.0);
  CHECK(fixed.storage() == std::vector<float>{1, -2, 3});

  // Zero momentum is plain gradient descent with decay folded into g.
  Tensor w({2}, {1.0f, 2.0f});
  std::vector<ParameterRef<Tensor>> wp{{"w", &w, 2}};
  std::vector<Tensor> wv;
  sgd_step(wp, {Tensor({2}, {0.5f, -1.0f})}, wv, 0.1, 0.0, 0.01);
  CHECK(w[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.01)));
  CHECK(w[1] == doctest::Approx(2.0 - 0.1 * (-1.0 + 0.02)));

  CHECK_THROWS_AS(sgd_step(wp, {Tensor({3})}, wv, 0.1, 0.0, 0.0), DimensionError);
  CHECK_THROWS_AS(sgd_step(wp, {}, wv, 0.1, 0.0, 0.0), DimensionError);
}

TEST_CASE("training configuration validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.loss.lambda = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("a gradient step lowers the loss on a fixed batch") {
  const Dataset s = synthetic_digits(16, 1, true), t = synthetic_digits(16, 2, false, 0.4f);
  for (double lambda : {0.0, 1.0}) {
    CAPTURE(lambda);
    Network net = build_lenet_adan(10);
    net.init_params(4);
    TrainConfig cfg = quick_config(lambda);
    cfg.learning_rate = 1e-2;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    // A fixed kernel keeps the objective the same function across the step.
    if (lambda > 0) cfg.loss.fixed_kernel = KernelFamily{{50.0, 100.0, 200.0}};
    const DomainBatch b = fixed_batch(s, t, 16);
    OptimizerState st{cfg.learning_rate, cfg.momentum, cfg.weight_decay, {}};
    const double before = train_step(net, b, cfg, st).total;
    const double after = batch_loss(net, b, cfg.loss).total;
    CHECK(after < before);
  }
}

TEST_CASE("training history") {
  const Dataset s = synthetic_digits(40, 1, true), t = synthetic_digits(24, 2, false, 0.4f);
  const Dataset eval = synthetic_digits(20, 5, true, 0.4f);
  SUBCASE("lambda 0 records no transfer term") {
    Network net = build_lenet_adan(10);
    net.init_params(1);
    int calls = 0;
    const auto h = train(net, s, t, quick_config(0.0), &eval, [&](const EpochRecord&) { ++calls; });
    CHECK(calls == 2);
    REQUIRE(h.size() == 2);
    CHECK_FALSE(h[0].mmd.has_value());
    CHECK(h[1].cross_entropy.size() == 2);
    CHECK(h[1].eval_accuracy.has_value());
    CHECK(h[1].eval_exit_accuracy->size() == 2);
    CHECK(std::isfinite(h[1].total_loss));
  }
  SUBCASE("lambda 1 records the transfer term and finite losses") {
    Network net = build_lenet_adan(10);
    net.init_params(1);
    const auto h = train(net, s, t, quick_config(1.0));
    for (const auto& r : h) {
      REQUIRE(r.mmd.has_value());
      CHECK(r.mmd->size() == 2);
      CHECK(std::isfinite(r.total_loss));
      CHECK_FALSE(r.eval_accuracy.has_value());
    }
  }
  SUBCASE("same seed, same run") {
    Network a = build_lenet_adan(10), b = build_lenet_adan(10);
    a.init_params(9);
    b.init_params(9);
    const auto ha = train(a, s, t, quick_config(1.0));
    const auto hb = train(b, s, t, quick_config(1.0));
    CHECK(history_to_jsonl(ha) == history_to_jsonl(hb));
    CHECK(encode_checkpoint(a) == encode_checkpoint(b));
  }
  SUBCASE("history round trip") {
    Network net = build_lenet_adan(10);
    net.init_params(2);
    const auto h = train(net, s, t, quick_config(1.0), &eval);
    const auto path = std::filesystem::temp_directory_path() / "adan_test_history.jsonl";
    write_history(path, h);
    const auto back = read_history(path);
    CHECK(history_to_jsonl(back) == history_to_jsonl(h));
    std::filesystem::remove(path);
  }
  SUBCASE("non-finite loss is reported with its position") {
    Network net = build_lenet_adan(10);
    net.init_params(2);
    net.parameters().back().tensor->fill(std::numeric_limits<float>::quiet_NaN());
    try {
      train(net, s, t, quick_config(0.0));
      FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
      CHECK(e.epoch() == 1);
      CHECK(e.step() == 1);
    }
  }
  SUBCASE("data errors") {
    Network net = build_lenet_adan(10);
    TrainConfig big = quick_config(0.0);
    big.batch_size = 64;
    CHECK_THROWS_AS(train(net, s, t, big), ConfigError);
    CHECK_THROWS_AS(train(net, t, t, quick_config(0.0)), ArgumentError);
  }
}

TEST_CASE("argmax breaks ties toward the smaller index") {
  CHECK(argmax(std::vector<float>{1, 3, 3, 2}) == 1);
  CHECK(argmax(std::vector<double>{0, 0, 0}) == 0);
  CHECK(argmax(std::vector<float>{-1, -5, 2}) == 2);
}

TEST_CASE("accuracy evaluation") {
  Network net = build_lenet_adan(10);
  net.init_params(6);
  Dataset d = synthetic_digits(30, 7, true);
  CHECK_THROWS_AS(evaluate_accuracy(net, Dataset{}), ArgumentError);
  Dataset unlabeled = d;
  unlabeled.labels.reset();
  CHECK_THROWS_AS(evaluate_accuracy(net, unlabeled), ArgumentError);

  // Relabel with the network's own predictions: accuracy is exactly 1.
  const auto trace = net.forward_full(d.images);
  for (std::size_t i = 0; i < d.size(); ++i)
    (*d.labels)[i] = static_cast<int>(argmax(trace.exits[1].logits.row(i)));
  const AccuracyReport full = evaluate_accuracy(net, d);
  CHECK(full.accuracy == 1.0);
  CHECK(full.exit_accuracy.size() == 2);

  const auto zero = ThresholdPolicy::uniform(0.0, 2);
  const AccuracyReport routed = evaluate_accuracy(net, d, &zero);
  CHECK(routed.accuracy == full.accuracy);
  CHECK(routed.exit_ratios == std::vector<double>{0.0, 1.0});
}
