#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fedirm/relation.hpp"
#include "fedirm/rng.hpp"

using namespace fedirm;

namespace {

// Straight-line reference softmax over long doubles, independent of the
// library implementation.
std::vector<double> naive_tsoftmax(const std::vector<double>& v, double tau) {
  long double sum = 0.0L;
  std::vector<long double> e(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    e[j] = std::exp(static_cast<long double>(v[j]) / static_cast<long double>(tau));
    sum += e[j];
  }
  std::vector<double> s(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) s[j] = static_cast<double>(e[j] / sum);
  return s;
}

Network small_net(std::uint64_t seed, std::size_t d, std::size_t classes) {
  return make_network(d, {3, 3}, classes, Activation::Tanh, 0.3, seed);
}

ClientDataset labeled_client(std::uint64_t seed, std::size_t n, std::size_t d,
                             std::size_t classes) {
  Rng rng(seed);
  Matrix feats(n, d);
  for (double& v : feats.data()) v = rng.normal();
  std::vector<int> targets(n);
  for (auto& t : targets) t = static_cast<int>(rng.uniform_index(classes));
  return ClientDataset(0, ClientKind::Labeled, std::move(feats), targets, targets);
}

RelationMatrix random_relation(std::uint64_t seed, std::size_t classes,
                               RelationProvenance prov) {
  Rng rng(seed);
  Matrix entries(classes, classes);
  std::vector<double> v(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    for (auto& x : v) x = rng.normal();
    const auto s = naive_tsoftmax(v, 2.0);
    for (std::size_t j = 0; j < classes; ++j) entries.at(c, j) = s[j];
  }
  return RelationMatrix(std::move(entries), std::vector<std::uint8_t>(classes, 1), prov);
}

}  // namespace

TEST_CASE("labeled relation: zero-weight network gives uniform valid rows") {
  Network net = small_net(1, 4, 3);
  net.params.fill(0.0);
  const auto m = labeled_relation(net, labeled_client(2, 12, 4, 3), 2.0);
  for (std::size_t c = 0; c < 3; ++c) {
    if (!m.row_valid(c)) continue;
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(m.entries().at(c, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("labeled relation: unobserved class rows are invalid") {
  const Network net = small_net(3, 4, 3);
  Rng rng(4);
  Matrix feats(6, 4);
  for (double& v : feats.data()) v = rng.normal();
  const std::vector<int> targets = {0, 1, 0, 1, 0, 1};  // class 2 never appears
  const ClientDataset ds(0, ClientKind::Labeled, std::move(feats), targets, targets);
  const auto m = labeled_relation(net, ds, 2.0);
  CHECK(m.row_valid(0));
  CHECK(m.row_valid(1));
  CHECK(!m.row_valid(2));
  CHECK(m.valid_row_count() == 2);
}

TEST_CASE("labeled relation: matches the brute-force recomputation") {
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t classes = 2 + trial % 3;
    const std::size_t d = 2 + trial % 4;
    const std::size_t n = 1 + trial % 8;
    const Network net = small_net(100 + trial, d, classes);
    const ClientDataset ds = labeled_client(200 + trial, n, d, classes);

    const auto m = labeled_relation(net, ds, 2.0);

    const Matrix logits = forward(net, ds.features(), Pass::Eval).logits;
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<double> mean(classes, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<std::size_t>(ds.targets()[i]) != c) continue;
        for (std::size_t j = 0; j < classes; ++j) mean[j] += logits.at(i, j);
        ++count;
      }
      CHECK(m.row_valid(c) == (count > 0));
      if (count == 0) continue;
      for (auto& v : mean) v /= static_cast<double>(count);
      const auto expected = naive_tsoftmax(mean, 2.0);
      for (std::size_t j = 0; j < classes; ++j)
        CHECK(std::abs(m.entries().at(c, j) - expected[j]) <= 1e-6);
    }
  }
}

TEST_CASE("mc dropout: a saturated network is maximally certain") {
  Network net = small_net(5, 3, 3);
  net.params.fill(0.0);
  net.params.layers().back().bias = {50.0, 0.0, 0.0};  // one-hot head
  Matrix batch(2, 3, 0.5);
  const auto report = mc_dropout_uncertainty(net, batch, 4, 0.1, 9);
  for (double w : report.entropy) CHECK(w == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(report.kept_count() == 2);
}

TEST_CASE("mc dropout: uniform predictions sit exactly at ln C and are excluded") {
  Network net = small_net(6, 3, 2);
  net.params.fill(0.0);  // logits are all zero whatever the dropout mask
  Matrix batch(3, 3, 0.25);
  const double ln2 = -std::log(0.5);  // exactly what the estimator evaluates
  const auto report = mc_dropout_uncertainty(net, batch, 4, ln2, 10);
  for (double w : report.entropy) {
    CHECK(w == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
    CHECK(w == ln2);
  }
  // Strict comparison: the boundary value is filtered out.
  CHECK(report.kept_count() == 0);
}

TEST_CASE("mc dropout: entropy is bounded by ln C") {
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t classes = 2 + trial % 4;
    const Network net = small_net(300 + trial, 4, classes);
    Rng rng(400 + trial);
    Matrix batch(3, 4);
    for (double& v : batch.data()) v = rng.normal();
    const auto report = mc_dropout_uncertainty(net, batch, 5, 1.0, trial);
    for (double w : report.entropy) {
      CHECK(w >= 0.0);
      CHECK(w <= std::log(static_cast<double>(classes)) + 1e-9);
    }
  }
}

TEST_CASE("mc dropout: fewer than two passes is an error") {
  const Network net = small_net(7, 3, 3);
  CHECK_THROWS_AS(mc_dropout_uncertainty(net, Matrix(1, 3, 0.0), 1, 0.5, 1), InvalidInput);
}

TEST_CASE("mc dropout: raising the threshold never shrinks the kept set") {
  const Network net = small_net(8, 4, 3);
  Rng rng(11);
  Matrix batch(6, 4);
  for (double& v : batch.data()) v = rng.normal();
  const auto low = mc_dropout_uncertainty(net, batch, 6, 0.3, 21);
  const auto high = mc_dropout_uncertainty(net, batch, 6, 0.9, 21);
  for (std::size_t i = 0; i < 6; ++i)
    if (low.keep[i]) CHECK(high.keep[i]);
}

TEST_CASE("unlabeled relation: a fully filtered batch has no valid rows") {
  Matrix probs = Matrix::from_rows({{0.5, 0.3, 0.2}, {0.2, 0.5, 0.3}});
  UncertaintyReport report;
  report.keep = {0, 0};
  report.entropy = {1.0, 1.0};
  report.threshold = 0.0;
  report.pass_count = 2;
  const auto m = unlabeled_relation(probs, report, 2.0);
  CHECK(m.valid_row_count() == 0);
}

TEST_CASE("unlabeled relation: single kept sample, hand evaluated") {
  Matrix probs = Matrix::from_rows({{0.7, 0.2, 0.1}});
  UncertaintyReport report;
  report.keep = {1};
  report.entropy = {0.1};
  report.threshold = 1.0;
  report.pass_count = 2;
  const auto m = unlabeled_relation(probs, report, 2.0);
  CHECK(m.row_valid(0));
  CHECK(!m.row_valid(1));
  CHECK(!m.row_valid(2));
  const auto expected = naive_tsoftmax({0.7, 0.2, 0.1}, 2.0);
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(m.entries().at(0, j) == doctest::Approx(expected[j]).epsilon(1e-10));
}

TEST_CASE("unlabeled relation: argmax ties resolve to the lowest class") {
  Matrix probs = Matrix::from_rows({{0.4, 0.4, 0.2}});
  UncertaintyReport report;
  report.keep = {1};
  report.entropy = {0.1};
  report.threshold = 1.0;
  report.pass_count = 2;
  const auto m = unlabeled_relation(probs, report, 2.0);
  CHECK(m.row_valid(0));
  CHECK(!m.row_valid(1));
}

TEST_CASE("unlabeled relation: matches the brute-force recomputation") {
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t classes = 2 + trial % 3;
    const std::size_t b = 1 + trial % 8;
    Rng rng(500 + trial);

    Matrix probs(b, classes);
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<double> v(classes);
      for (auto& x : v) x = rng.normal();
      const auto s = naive_tsoftmax(v, 1.0);
      for (std::size_t j = 0; j < classes; ++j) probs.at(i, j) = s[j];
    }
    UncertaintyReport report;
    report.pass_count = 2;
    report.threshold = 0.5;
    report.entropy.resize(b);
    report.keep.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
      report.entropy[i] = rng.uniform();
      report.keep[i] = report.entropy[i] < report.threshold ? 1 : 0;
    }

    const auto m = unlabeled_relation(probs, report, 2.0);

    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<double> mean(classes, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < b; ++i) {
        if (!report.keep[i]) continue;
        std::size_t top = 0;
        for (std::size_t j = 1; j < classes; ++j)
          if (probs.at(i, j) > probs.at(i, top)) top = j;
        if (top != c) continue;
        for (std::size_t j = 0; j < classes; ++j) mean[j] += probs.at(i, j);
        ++count;
      }
      CHECK(m.row_valid(c) == (count > 0));
      if (count == 0) continue;
      for (auto& v : mean) v /= static_cast<double>(count);
      const auto expected = naive_tsoftmax(mean, 2.0);
      for (std::size_t j = 0; j < classes; ++j)
        CHECK(std::abs(m.entries().at(c, j) - expected[j]) <= 1e-6);
    }
  }
}

TEST_CASE("irm loss: identical matrices give exactly zero") {
  const auto m = random_relation(13, 3, RelationProvenance::ServerAggregate);
  const auto u = random_relation(13, 3, RelationProvenance::UnlabeledBatch);
  CHECK(irm_loss(m, u) == 0.0);
}

TEST_CASE("irm loss: nonnegative on random inputs") {
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t classes = 2 + trial % 4;
    const auto a = random_relation(700 + trial, classes, RelationProvenance::ServerAggregate);
    const auto b = random_relation(900 + trial, classes, RelationProvenance::UnlabeledBatch);
    CHECK(irm_loss(a, b) >= 0.0);
  }
}

TEST_CASE("irm loss: hand-checked two-class value") {
  const RelationMatrix m(Matrix::from_rows({{0.8, 0.2}, {0.3, 0.7}}), {1, 1},
                         RelationProvenance::ServerAggregate);
  const RelationMatrix u(Matrix::from_rows({{0.6, 0.4}, {0.3, 0.7}}), {1, 1},
                         RelationProvenance::UnlabeledBatch);

  // Independent scalar recomputation of the symmetric KL average.
  auto kl = [](const std::vector<double>& p, const std::vector<double>& q) {
    long double s = 0.0L;
    for (std::size_t j = 0; j < p.size(); ++j)
      s += static_cast<long double>(p[j]) * std::log(static_cast<long double>(p[j]) / q[j]);
    return static_cast<double>(s);
  };
  const double expected =
      (kl({0.8, 0.2}, {0.6, 0.4}) + kl({0.6, 0.4}, {0.8, 0.2}) + kl({0.3, 0.7}, {0.3, 0.7}) +
       kl({0.3, 0.7}, {0.3, 0.7})) /
      2.0;
  CHECK(std::abs(irm_loss(m, u) - expected) <= 1e-8);
}

TEST_CASE("irm loss: symmetric under argument exchange") {
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_relation(1100 + trial, 4, RelationProvenance::ServerAggregate);
    auto b = random_relation(1300 + trial, 4, RelationProvenance::UnlabeledBatch);
    CHECK(std::abs(irm_loss(a, b) - irm_loss(b, a)) <= 1e-12);
  }
}

TEST_CASE("irm loss: skips rows not valid in both, zero when none shared") {
  const Matrix e = Matrix::from_rows({{0.9, 0.1}, {0.4, 0.6}});
  const RelationMatrix a(e, {1, 0}, RelationProvenance::ServerAggregate);
  const RelationMatrix b(e, {0, 1}, RelationProvenance::UnlabeledBatch);
  CHECK(irm_loss(a, b) == 0.0);
  const RelationMatrix c(e, {1, 1}, RelationProvenance::UnlabeledBatch);
  CHECK(irm_loss(a, c) == 0.0);  // only row 0 shared and it matches itself
}

TEST_CASE("irm loss: class-count mismatch is rejected") {
  const auto a = random_relation(1, 3, RelationProvenance::ServerAggregate);
  const auto b = random_relation(2, 4, RelationProvenance::UnlabeledBatch);
  CHECK_THROWS_AS(irm_loss(a, b), InvalidInput);
}

TEST_CASE("aggregate: a single matrix passes through up to renormalization") {
  const auto m = random_relation(31, 3, RelationProvenance::LabeledClient);
  const auto agg = aggregate_relations({m});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(agg.entries().at(c, j) == doctest::Approx(m.entries().at(c, j)).epsilon(1e-12));
  CHECK(agg.provenance() == RelationProvenance::ServerAggregate);
}

TEST_CASE("aggregate: mean of two matrices, all rows valid") {
  const auto a = random_relation(41, 3, RelationProvenance::LabeledClient);
  const auto b = random_relation(43, 3, RelationProvenance::LabeledClient);
  const auto agg = aggregate_relations({a, b});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t j = 0; j < 3; ++j) {
      const double mean = 0.5 * (a.entries().at(c, j) + b.entries().at(c, j));
      CHECK(std::abs(agg.entries().at(c, j) - mean) <= 1e-12);
    }
}

TEST_CASE("aggregate: row valid when any contributor has it") {
  Matrix e1 = Matrix::from_rows({{0.9, 0.1}, {0.5, 0.5}});
  Matrix e2 = Matrix::from_rows({{0.7, 0.3}, {0.5, 0.5}});
  const RelationMatrix a(e1, {1, 0}, RelationProvenance::LabeledClient, 0);
  const RelationMatrix b(e2, {1, 1}, RelationProvenance::LabeledClient, 1);
  const auto agg = aggregate_relations({a, b});
  CHECK(agg.row_valid(0));
  CHECK(agg.row_valid(1));
  // Row 0 averages both contributors; row 1 only the second.
  CHECK(agg.entries().at(0, 0) == doctest::Approx(0.8).epsilon(1e-9));
  CHECK(agg.entries().at(1, 0) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("aggregate: rejects empty input and non-labeled provenance") {
  CHECK_THROWS_AS(aggregate_relations({}), InvalidInput);
  const auto m = random_relation(51, 3, RelationProvenance::UnlabeledBatch);
  CHECK_THROWS_AS(aggregate_relations({m}), InvalidInput);
}

TEST_CASE("relation matrix: valid rows are checked at construction") {
  Matrix bad = Matrix::from_rows({{0.9, 0.3}, {0.5, 0.5}});  // row 0 sums to 1.2
  CHECK_THROWS_AS(
      RelationMatrix(bad, {1, 1}, RelationProvenance::LabeledClient), InvalidInput);
  CHECK_NOTHROW(RelationMatrix(bad, {0, 1}, RelationProvenance::LabeledClient));
}
