#include "fedirm/relation.hpp"

#include <cmath>
#include <cstdio>

#include "fedirm/rng.hpp"

namespace fedirm {

namespace {
constexpr double kLogFloor = 1e-8;
constexpr double kRowSumTolerance = 1e-6;
}  // namespace

RelationMatrix::RelationMatrix(Matrix entries, std::vector<std::uint8_t> row_valid,
                               RelationProvenance provenance, int client_id)
    : entries_(std::move(entries)),
      row_valid_(std::move(row_valid)),
      provenance_(provenance),
      client_id_(client_id) {
  if (entries_.rows() != entries_.cols())
    throw InvalidInput("RelationMatrix: entries must be square");
  if (entries_.rows() == 0) throw InvalidInput("RelationMatrix: empty");
  if (row_valid_.size() != entries_.rows())
    throw InvalidInput("RelationMatrix: validity length mismatch");
  for (std::size_t c = 0; c < entries_.rows(); ++c) {
    if (!row_valid_[c]) continue;
    double sum = 0.0;
    for (std::size_t j = 0; j < entries_.cols(); ++j) {
      const double v = entries_.at(c, j);
      if (!(v > 0.0)) throw InvalidInput("RelationMatrix: valid row has non-positive entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance)
      throw InvalidInput("RelationMatrix: valid row does not sum to 1");
  }
}

std::size_t RelationMatrix::valid_row_count() const {
  std::size_t n = 0;
  for (auto v : row_valid_) n += (v != 0);
  return n;
}

RelationMatrix labeled_relation(const Network& net, const ClientDataset& dataset,
                                double tau) {
  if (dataset.kind() != ClientKind::Labeled)
    throw InvalidInput("labeled_relation: dataset is not labeled");
  const std::size_t classes = net.class_count;

  const Matrix logits = forward(net, dataset.features(), Pass::Eval).logits;
  const auto& targets = dataset.targets();

  Matrix sums(classes, classes, 0.0);
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const int y = targets[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw InvalidInput("labeled_relation: target out of range");
    const double* z = logits.row(i);
    double* acc = sums.row(y);
    for (std::size_t c = 0; c < classes; ++c) acc[c] += z[c];
    counts[y] += 1;
  }

  Matrix entries(classes, classes, 0.0);
  std::vector<std::uint8_t> valid(classes, 0);
  std::vector<double> mean(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t j = 0; j < classes; ++j)
      mean[j] = sums.at(c, j) / static_cast<double>(counts[c]);
    const auto soft = temperature_softmax(mean, tau);
    for (std::size_t j = 0; j < classes; ++j) entries.at(c, j) = soft[j];
    valid[c] = 1;
  }
  return RelationMatrix(std::move(entries), std::move(valid),
                        RelationProvenance::LabeledClient, dataset.client_id());
}

std::size_t UncertaintyReport::kept_count() const {
  std::size_t n = 0;
  for (auto k : keep) n += (k != 0);
  return n;
}

UncertaintyReport mc_dropout_uncertainty(const Network& net, const Matrix& batch,
                                         int passes, double threshold,
                                         std::uint64_t seed) {
  if (passes < 2)
    throw InvalidInput("mc_dropout_uncertainty: need at least 2 stochastic passes");

  const std::size_t b = batch.rows();
  const std::size_t classes = net.class_count;
  Matrix mean(b, classes, 0.0);
  for (int t = 0; t < passes; ++t) {
    const Matrix probs = forward(net, batch, Pass::Train, mix_seed(seed, 0x3C0, t)).probs;
    for (std::size_t k = 0; k < mean.size(); ++k) mean.data()[k] += probs.data()[k];
  }
  const double inv = 1.0 / static_cast<double>(passes);
  for (double& v : mean.data()) v *= inv;

  UncertaintyReport report;
  report.pass_count = passes;
  report.threshold = threshold;
  report.entropy.resize(b);
  report.keep.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    double w = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double q = mean.at(i, c);
      if (q > 0.0) w -= q * std::log(q);
    }
    report.entropy[i] = w;
    report.keep[i] = (w < threshold) ? 1 : 0;
  }
  report.mean_probs = std::move(mean);
  return report;
}

RelationMatrix unlabeled_relation(const Matrix& probs, const UncertaintyReport& report,
                                  double tau) {
  const std::size_t b = probs.rows();
  const std::size_t classes = probs.cols();
  if (report.keep.size() != b)
    throw InvalidInput("unlabeled_relation: report batch size mismatch");

  Matrix sums(classes, classes, 0.0);
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < b; ++i) {
    if (!report.keep[i]) continue;
    const std::size_t pseudo = argmax_row(probs, i);
    const double* p = probs.row(i);
    double* acc = sums.row(pseudo);
    for (std::size_t c = 0; c < classes; ++c) acc[c] += p[c];
    counts[pseudo] += 1;
  }

  Matrix entries(classes, classes, 0.0);
  std::vector<std::uint8_t> valid(classes, 0);
  std::vector<double> mean(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t j = 0; j < classes; ++j)
      mean[j] = sums.at(c, j) / static_cast<double>(counts[c]);
    const auto soft = temperature_softmax(mean, tau);
    for (std::size_t j = 0; j < classes; ++j) entries.at(c, j) = soft[j];
    valid[c] = 1;
  }
  return RelationMatrix(std::move(entries), std::move(valid),
                        RelationProvenance::UnlabeledBatch);
}

double irm_loss(const RelationMatrix& server, const RelationMatrix& local) {
  const std::size_t classes = server.class_count();
  if (classes != local.class_count())
    throw InvalidInput("irm_loss: class count mismatch");

  auto kl = [classes](const Matrix& a, const Matrix& b, std::size_t c) {
    double sum = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = a.at(c, j);
      const double lp = std::log(std::max(p, kLogFloor));
      const double lq = std::log(std::max(b.at(c, j), kLogFloor));
      sum += p * (lp - lq);
    }
    return sum;
  };

  double total = 0.0;
  std::size_t shared = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!server.row_valid(c) || !local.row_valid(c)) continue;
    total += kl(server.entries(), local.entries(), c) +
             kl(local.entries(), server.entries(), c);
    ++shared;
  }
  return shared == 0 ? 0.0 : total / static_cast<double>(shared);
}

RelationMatrix aggregate_relations(const std::vector<RelationMatrix>& matrices) {
  if (matrices.empty()) throw InvalidInput("aggregate_relations: empty input");
  const std::size_t classes = matrices.front().class_count();
  for (const auto& m : matrices) {
    if (m.class_count() != classes)
      throw InvalidInput("aggregate_relations: class count mismatch");
    if (m.provenance() != RelationProvenance::LabeledClient)
      throw InvalidInput("aggregate_relations: inputs must come from labeled clients");
  }

  Matrix entries(classes, classes, 0.0);
  std::vector<std::uint8_t> valid(classes, 0);
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t contributors = 0;
    for (const auto& m : matrices) {
      if (!m.row_valid(c)) continue;
      for (std::size_t j = 0; j < classes; ++j) entries.at(c, j) += m.entries().at(c, j);
      ++contributors;
    }
    if (contributors == 0) continue;
    double sum = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      entries.at(c, j) /= static_cast<double>(contributors);
      sum += entries.at(c, j);
    }
    for (std::size_t j = 0; j < classes; ++j) entries.at(c, j) /= sum;
    valid[c] = 1;
  }
  return RelationMatrix(std::move(entries), std::move(valid),
                        RelationProvenance::ServerAggregate);
}

void write_relation_csv(std::ostream& os, const Matrix& entries,
                        const std::vector<std::uint8_t>& validity,
                        const std::string& matrix_name, bool header) {
  const std::size_t classes = entries.rows();
  if (header) {
    os << "matrix,class";
    for (std::size_t j = 0; j < classes; ++j) os << ",e" << j;
    os << ",valid\n";
  }
  char buf[32];
  for (std::size_t c = 0; c < classes; ++c) {
    os << matrix_name << ',' << c;
    for (std::size_t j = 0; j < classes; ++j) {
      std::snprintf(buf, sizeof(buf), "%.6f", entries.at(c, j));
      os << ',' << buf;
    }
    os << ',' << (validity[c] ? 1 : 0) << '\n';
  }
}

}  // namespace fedirm
