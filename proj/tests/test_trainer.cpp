// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "tcdfern/errors.hpp"
#include "tcdfern/trainer.hpp"
#include "test_support.hpp"

using namespace tcdfern;
using model::ModelConfig;
using model::ModelParams;
using model::Tensor;

namespace {

/// Four classes told apart by the level of the window.
std::vector<das::DasSample> toy_samples(const ModelConfig& cfg, int per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<das::DasSample> out;
  for (int i = 0; i < per_class; ++i) {
    for (int y = 1; y <= 4; ++y) {
      auto s = testing::random_sample(rng, cfg.tau, cfg.input_dim, y);
      for (auto& v : s.spatial.values) v = 0.2 * v + 0.2 * (y - 1);
      const auto last = s.spatial.row(cfg.tau - 1);
      s.last_spatial.assign(last.begin(), last.end());
      out.push_back(std::move(s));
    }
  }
  return out;
}

ModelParams bowl(const std::vector<double>& start) {
  ModelParams p;
  p.add("x", Tensor({static_cast<int>(start.size())}, start));
  return p;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("sgd identities") {
    auto p = bowl({1.0, -2.0, 3.0});
    const auto before = p.at("x");
    train::sgd_step(p, {Tensor({3})}, 0.5);
    CHECK(p.at("x") == before);
    train::sgd_step(p, {Tensor({3}, {1.0, 1.0, 1.0})}, 0.0);
    CHECK(p.at("x") == before);
    train::sgd_step(p, {Tensor({3}, {1.0, 2.0, -1.0})}, 0.5);
    CHECK(p.at("x").to_vector() == std::vector<double>{0.5, -3.0, 3.5});
  }

  TEST_CASE("adam with zero learning rate is the identity") {
    auto p = bowl({1.0, -2.0});
    const auto before = p.at("x");
    train::AdamState st;
    for (int i = 0; i < 5; ++i) train::adam_step(p, {Tensor({2}, {0.3, -0.7})}, st, 0.0);
    CHECK(p.at("x") == before);
    CHECK(st.step == 5);
  }

  TEST_CASE("adam reaches the minimum of a quadratic bowl") {
    const std::vector<double> target{0.5, -1.25, 2.0, 0.0};
    const std::vector<double> curvature{1.0, 4.0, 0.5, 2.0};
    auto p = bowl({-0.5, 0.0, 1.0, 1.0});
    train::AdamState st;
    for (int i = 0; i < 500; ++i) {
      Tensor g({4});
      for (std::size_t j = 0; j < 4; ++j) g[j] = curvature[j] * (p.at("x")[j] - target[j]);
      train::adam_step(p, {g}, st, 0.05);
    }
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(p.at("x")[j] - target[j]) < 1e-6);
  }

  TEST_CASE("one-sample overfit") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.dropout = 0.0;  // a fixed objective, so the loss must fall monotonically
    Rng rng(3);
    const std::vector<das::DasSample> one{testing::random_sample(rng, cfg.tau, cfg.input_dim, 3)};
    const das::ReferenceSpatial b{testing::random_vector(rng, static_cast<std::size_t>(cfg.input_dim), 0.0, 1.0)};
    const auto batch = das::assemble_batch(one, b);
    auto params = model::init_params(cfg, 1);
    train::TrainConfig tcfg;
    tcfg.learning_rate = 1e-2;
    const auto losses = train::fit_batch(params, cfg, batch, tcfg, 201);
    for (int i = 0; i < 10; ++i) CHECK(losses[static_cast<std::size_t>(i + 1)] < losses[static_cast<std::size_t>(i)]);
    CHECK(losses.back() < 0.01);
  }

  TEST_CASE("train is deterministic under the seed and returns a usable checkpoint") {
    const ModelConfig cfg = ModelConfig::tiny();
    const auto data = toy_samples(cfg, 12, 4);
    Rng rng(1);
    const train::VectorSource src(data, {testing::random_vector(rng, static_cast<std::size_t>(cfg.input_dim), 0.0, 0.2)});
    train::TrainConfig tcfg;
    tcfg.epochs = 4;
    tcfg.batch_size = 8;
    tcfg.learning_rate = 1e-2;
    const auto a = train::train(src, cfg, tcfg);
    const auto b = train::train(src, cfg, tcfg);
    CHECK(a.history.same_trajectory(b.history));
    CHECK(a.history.epochs.size() == 4);
    CHECK(a.history.best_epoch >= 0);
    for (std::size_t i = 0; i < a.params.entries().size(); ++i)
      CHECK(a.params.entries()[i].value == b.params.entries()[i].value);

    tcfg.seed = 8;
    const auto c = train::train(src, cfg, tcfg);
    CHECK_FALSE(a.history.same_trajectory(c.history));

    const auto eval = train::evaluate(a.params, cfg, src);
    CHECK(eval.probs.size() == data.size());
    // Thread count never changes results; batch size only moves the last bits.
    const auto one = train::evaluate(a.params, cfg, src, 7, 1);
    const auto three = train::evaluate(a.params, cfg, src, 7, 3);
    CHECK(three.probs == one.probs);
    CHECK(three.loss == one.loss);
    for (std::size_t i = 0; i < eval.probs.size(); ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(one.probs[i][j] == doctest::Approx(eval.probs[i][j]).epsilon(1e-12));
  }

  TEST_CASE("a class with a single sample is rejected") {
    const ModelConfig cfg = ModelConfig::tiny();
    auto data = toy_samples(cfg, 3, 2);
    data.pop_back();
    data.pop_back();
    data.pop_back();
    data.pop_back();
    data.pop_back();  // class 4 is left with one sample
    const train::VectorSource src(data, {std::vector<double>(static_cast<std::size_t>(cfg.input_dim), 0.1)});
    train::TrainConfig tcfg;
    tcfg.epochs = 1;
    CHECK_THROWS_AS(train::train(src, cfg, tcfg), DataIntegrityError);
  }

  TEST_CASE("divergence stops training and keeps a finite checkpoint") {
    const ModelConfig cfg = ModelConfig::tiny();
    const auto data = toy_samples(cfg, 6, 5);
    const train::VectorSource src(data, {std::vector<double>(static_cast<std::size_t>(cfg.input_dim), 0.1)});
    train::TrainConfig tcfg;
    tcfg.epochs = 5;
    tcfg.batch_size = 4;
    tcfg.optimizer = train::OptimizerKind::Sgd;
    tcfg.learning_rate = 1e300;
    const auto r = train::train(src, cfg, tcfg);
    CHECK(r.history.diverged);
    CHECK(r.params.all_finite());
  }

  TEST_CASE("config validation") {
    train::TrainConfig t;
    t.validate();
    CHECK(t.validation_fraction == 0.2);
    CHECK(t.learning_rate == 1e-3);
    CHECK(t.batch_size == 64);
    CHECK(t.epochs == 50);
    t.validation_fraction = 1.0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    CHECK_THROWS_AS(train::parse_optimizer("rmsprop"), ConfigError);
  }

  TEST_CASE("end-to-end gradients of the tiny network") {
    for (model::Variant v : model::all_variants()) {
      ModelConfig cfg = ModelConfig::tiny();
      cfg.variant = v;
      CAPTURE(std::string(model::variant_name(v)));
      const auto params = model::init_params(cfg, 13);
      const auto r = train::gradient_check(params, cfg, train::random_batch(cfg, 3, 21));
      CHECK(r.max_rel_error < 1e-3);
      CHECK(r.coordinates > 0);
    }
  }
}
