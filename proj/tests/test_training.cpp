#include <doctest.h>

#include <cmath>

#include "fedirm/gradcheck.hpp"
#include "fedirm/rng.hpp"
#include "fedirm/training.hpp"

using namespace fedirm;

namespace {

Network tiny_net(std::uint64_t seed, std::size_t d = 4, std::size_t classes = 3) {
  return make_network(d, {4, 3}, classes, Activation::Tanh, 0.25, seed);
}

ClientDataset unlabeled_client(std::uint64_t seed, std::size_t n, std::size_t d,
                               std::vector<int> hidden) {
  Rng rng(seed);
  Matrix feats(n, d);
  for (double& v : feats.data()) v = rng.normal();
  return ClientDataset(5, ClientKind::Unlabeled, std::move(feats), {}, std::move(hidden));
}

ClientDataset labeled_client(std::uint64_t seed, std::size_t n, std::size_t d,
                             std::size_t classes) {
  Rng rng(seed);
  Matrix feats(n, d);
  for (double& v : feats.data()) v = rng.normal();
  std::vector<int> targets(n);
  for (auto& t : targets) t = static_cast<int>(rng.uniform_index(classes));
  return ClientDataset(1, ClientKind::Labeled, std::move(feats), targets, targets);
}

RelationMatrix uniform_relation(std::size_t classes) {
  Matrix e(classes, classes, 1.0 / static_cast<double>(classes));
  return RelationMatrix(e, std::vector<std::uint8_t>(classes, 1),
                        RelationProvenance::ServerAggregate);
}

}  // namespace

TEST_CASE("cross entropy: one-hot predictions on the target are free") {
  Matrix probs = Matrix::from_rows({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}});
  CHECK(cross_entropy(probs, {0, 1}) <= 1e-7);
}

TEST_CASE("cross entropy: uniform probabilities cost ln C") {
  Matrix probs(3, 4, 0.25);
  CHECK(cross_entropy(probs, {0, 1, 2}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(cross_entropy(probs, {0, 1, 2}) == doctest::Approx(1.386294).epsilon(1e-6));
}

TEST_CASE("cross entropy: matches an independent scalar recomputation") {
  Rng rng(2);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t b = 1 + trial % 6;
    const std::size_t classes = 2 + trial % 4;
    Matrix probs(b, classes);
    std::vector<int> targets(b);
    for (std::size_t i = 0; i < b; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        probs.at(i, c) = rng.uniform(0.01, 1.0);
        sum += probs.at(i, c);
      }
      for (std::size_t c = 0; c < classes; ++c) probs.at(i, c) /= sum;
      targets[i] = static_cast<int>(rng.uniform_index(classes));
    }
    long double expected = 0.0L;
    for (std::size_t i = 0; i < b; ++i)
      expected -= std::log(static_cast<long double>(probs.at(i, targets[i])));
    expected /= b;
    CHECK(std::abs(cross_entropy(probs, targets) - static_cast<double>(expected)) <= 1e-10);
  }
}

TEST_CASE("cross entropy: rejects out-of-range targets") {
  Matrix probs(2, 3, 1.0 / 3.0);
  CHECK_THROWS_AS(cross_entropy(probs, {0, 3}), InvalidInput);
  CHECK_THROWS_AS(cross_entropy(probs, {-1, 0}), InvalidInput);
  CHECK_THROWS_AS(cross_entropy(probs, {0}), InvalidInput);
}

TEST_CASE("consistency: equal inputs give zero") {
  Matrix p = Matrix::from_rows({{0.2, 0.8}, {0.5, 0.5}});
  CHECK(consistency_loss(p, p) == 0.0);
}

TEST_CASE("consistency: opposite one-hot rows give exactly one") {
  Matrix p1 = Matrix::from_rows({{1.0, 0.0}});
  Matrix p2 = Matrix::from_rows({{0.0, 1.0}});
  CHECK(consistency_loss(p1, p2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("consistency: nonnegative and symmetric") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a(2, 3), b(2, 3);
    for (double& v : a.data()) v = rng.uniform();
    for (double& v : b.data()) v = rng.uniform();
    const double ab = consistency_loss(a, b);
    CHECK(ab >= 0.0);
    CHECK(ab == consistency_loss(b, a));
  }
  CHECK_THROWS_AS(consistency_loss(Matrix(2, 3), Matrix(3, 2)), InvalidInput);
}

TEST_CASE("warmup: reaches one at the horizon and stays there") {
  CHECK(warmup(30, 30) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(warmup(31, 30) == 1.0);
  CHECK(warmup(1000, 30) == 1.0);
}

TEST_CASE("warmup: initial value is exp(-5)") {
  CHECK(warmup(0, 30) == doctest::Approx(std::exp(-5.0)).epsilon(1e-12));
  CHECK(warmup(0, 30) == doctest::Approx(0.006738).epsilon(1e-3));
}

TEST_CASE("warmup: non-decreasing over the ramp") {
  double prev = -1.0;
  for (std::size_t w = 0; w <= 60; ++w) {
    const double v = warmup(w, 30);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("warmup: literal variant drops the square") {
  CHECK(warmup(0, 30, false) == doctest::Approx(std::exp(-5.0)).epsilon(1e-12));
  CHECK(warmup(15, 30, false) == doctest::Approx(std::exp(-2.5)).epsilon(1e-12));
  CHECK(warmup(15, 30, true) == doctest::Approx(std::exp(-1.25)).epsilon(1e-12));
  CHECK(warmup(30, 30, false) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("labeled update: zero learning rate leaves parameters unchanged") {
  const Network net = tiny_net(10);
  LocalConfig cfg;
  cfg.batch_size = 4;
  cfg.adam.learning_rate = 0.0;
  const auto ds = labeled_client(11, 10, 4, 3);
  const ParameterSet updated = labeled_local_update(net, ds, cfg, 99);
  CHECK(updated == net.params);
}

TEST_CASE("labeled update: input parameters are untouched") {
  const Network net = tiny_net(12);
  const ParameterSet before = net.params;
  LocalConfig cfg;
  cfg.batch_size = 5;
  const auto ds = labeled_client(13, 10, 4, 3);
  const ParameterSet updated = labeled_local_update(net, ds, cfg, 5);
  CHECK(net.params == before);
  CHECK(!(updated == before));
}

TEST_CASE("labeled update: one step on one sample reduces its loss") {
  int improved = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Network net = tiny_net(100 + trial);
    const auto ds = labeled_client(200 + trial, 1, 4, 3);
    LocalConfig cfg;
    cfg.batch_size = 1;
    cfg.adam.learning_rate = 1e-3;

    const double before =
        cross_entropy(forward(net, ds.features(), Pass::Eval).probs, ds.targets());
    Network after = net;
    after.params = labeled_local_update(net, ds, cfg, 300 + trial);
    const double post =
        cross_entropy(forward(after, ds.features(), Pass::Eval).probs, ds.targets());
    improved += (post < before);
  }
  CHECK(improved == 20);
}

TEST_CASE("default local epochs is one") {
  const LocalConfig cfg;
  CHECK(cfg.epochs == 1);
}

TEST_CASE("unlabeled update: zero lambda is a bit-exact pass-through") {
  const Network net = tiny_net(20);
  LocalConfig cfg;
  cfg.batch_size = 4;
  const auto ds = unlabeled_client(21, 9, 4, std::vector<int>(9, 0));
  const auto result =
      unlabeled_local_update(net, ds, uniform_relation(3), 0.0, cfg, 7);
  CHECK(result.params == net.params);
  CHECK(!result.last_relation.has_value());
}

TEST_CASE("unlabeled update: no server matrix means consistency only") {
  const Network net = tiny_net(22);
  LocalConfig cfg;
  cfg.batch_size = 4;
  const auto ds = unlabeled_client(23, 8, 4, std::vector<int>(8, 1));

  const auto without_matrix = unlabeled_local_update(net, ds, std::nullopt, 1.0, cfg, 17);
  LocalConfig zero_weight = cfg;
  zero_weight.irm_weight = 0.0;
  const auto weighted_out =
      unlabeled_local_update(net, ds, uniform_relation(3), 1.0, zero_weight, 17);

  CHECK(without_matrix.params == weighted_out.params);
  CHECK(!without_matrix.last_relation.has_value());
}

TEST_CASE("unlabeled update: label-blind under hidden-target corruption") {
  const Network net = tiny_net(24);
  LocalConfig cfg;
  cfg.batch_size = 4;
  Rng rng(25);
  Matrix feats(10, 4);
  for (double& v : feats.data()) v = rng.normal();

  const ClientDataset honest(5, ClientKind::Unlabeled, feats, {},
                             std::vector<int>(10, 0));
  const ClientDataset corrupted(5, ClientKind::Unlabeled, feats, {},
                                std::vector<int>(10, 2));
  const auto a = unlabeled_local_update(net, honest, uniform_relation(3), 0.8, cfg, 31);
  const auto b = unlabeled_local_update(net, corrupted, uniform_relation(3), 0.8, cfg, 31);
  CHECK(a.params == b.params);
}

TEST_CASE("unlabeled update: emits the last batch relation matrix") {
  const Network net = tiny_net(26);
  LocalConfig cfg;
  cfg.batch_size = 4;
  cfg.entropy_threshold = 10.0;  // keep everything
  const auto ds = unlabeled_client(27, 8, 4, std::vector<int>(8, 0));
  const auto result = unlabeled_local_update(net, ds, uniform_relation(3), 1.0, cfg, 41);
  CHECK(result.last_relation.has_value());
  CHECK(result.last_relation->class_count() == 3);
}

TEST_CASE("unlabeled objective: full gradient matches finite differences") {
  const Network net = tiny_net(30);
  Rng rng(31);
  Matrix batch(4, 4);
  for (double& v : batch.data()) v = rng.normal();

  LocalConfig cfg;
  cfg.perturb.sigma = 0.05;
  cfg.mc_passes = 3;
  cfg.entropy_threshold = 2.0;  // keep everything: no mask boundary nearby
  const RelationMatrix server = uniform_relation(3);
  const UnlabeledBatchSeeds seeds{11, 12, 13, 14, 15};

  const auto analytic = unlabeled_batch_objective(net, batch, server, 0.9, cfg, seeds);
  const ParameterSet fd = finite_difference_gradient(net, [&](const Network& n) {
    return unlabeled_batch_objective(n, batch, server, 0.9, cfg, seeds).loss;
  });
  CHECK(gradient_rel_err(analytic.grads, fd) <= 1e-4);
}

TEST_CASE("unlabeled update: rejects labeled datasets and negative lambda") {
  const Network net = tiny_net(32);
  LocalConfig cfg;
  const auto labeled = labeled_client(33, 6, 4, 3);
  CHECK_THROWS_AS(unlabeled_local_update(net, labeled, std::nullopt, 1.0, cfg, 1),
                  InvalidInput);
  const auto ds = unlabeled_client(34, 6, 4, std::vector<int>(6, 0));
  CHECK_THROWS_AS(unlabeled_local_update(net, ds, std::nullopt, -0.1, cfg, 1),
                  InvalidInput);
}
