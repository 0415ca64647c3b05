#include "fedirm/training.hpp"

#include <algorithm>
#include <cmath>

#include "fedirm/rng.hpp"

namespace fedirm {

namespace {
constexpr double kLogFloor = 1e-8;
}

double cross_entropy(const Matrix& probs, const std::vector<int>& targets) {
  if (targets.size() != probs.rows())
    throw InvalidInput("cross_entropy: one target per row required");
  const std::size_t classes = probs.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= classes)
      throw InvalidInput("cross_entropy: target out of range");
    total -= std::log(std::max(probs.at(i, t), kLogFloor));
  }
  return total / static_cast<double>(probs.rows());
}

double consistency_loss(const Matrix& p1, const Matrix& p2) {
  if (!p1.same_shape(p2)) throw InvalidInput("consistency_loss: shape mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < p1.size(); ++k) {
    const double d = p1.data()[k] - p2.data()[k];
    total += d * d;
  }
  return total / static_cast<double>(p1.size());
}

double warmup(std::size_t round, std::size_t horizon, bool squared) {
  if (horizon < 1) throw InvalidInput("warmup: horizon must be at least 1");
  const double ratio =
      std::min(1.0, static_cast<double>(round) / static_cast<double>(horizon));
  const double gap = 1.0 - ratio;
  return std::exp(-5.0 * (squared ? gap * gap : gap));
}

namespace {

// d(cross entropy)/d(probs): -1/(B*p) at the target entry while the floor is
// inactive, zero elsewhere.
Matrix cross_entropy_prob_grad(const Matrix& probs, const std::vector<int>& targets) {
  Matrix g(probs.rows(), probs.cols(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const double p = probs.at(i, targets[i]);
    if (p > kLogFloor) g.at(i, targets[i]) = -inv_b / p;
  }
  return g;
}

Matrix probs_to_logit_grad(const Matrix& probs, const Matrix& prob_grad) {
  Matrix out(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i)
    softmax_vjp_row(probs.row(i), prob_grad.row(i), out.row(i), probs.cols());
  return out;
}

void ensure_finite(double loss, const char* name) {
  if (!std::isfinite(loss))
    throw NumericalFailure(std::string("non-finite loss: ") + name);
}

// Shared machinery for the relation-matching term. Given probabilities (or
// logits) `values` from the training forward, the server matrix, and the keep
// mask, produces the batch relation matrix, the loss, and d(loss)/d(values),
// treating pseudo labels and the keep mask as constants.
struct RelationTerm {
  double loss = 0.0;
  std::optional<RelationMatrix> relation;
  Matrix value_grad;  // same shape as values; zero when the term is absent
};

RelationTerm relation_matching_term(const Matrix& values, const UncertaintyReport& report,
                                    const RelationMatrix& server, double tau) {
  RelationTerm term;
  term.value_grad = Matrix(values.rows(), values.cols(), 0.0);

  const std::size_t b = values.rows();
  const std::size_t classes = values.cols();

  std::vector<std::size_t> pseudo(b);
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < b; ++i) {
    pseudo[i] = argmax_row(values, i);
    if (report.keep[i]) counts[pseudo[i]] += 1;
  }

  RelationMatrix local = unlabeled_relation(values, report, tau);
  term.loss = irm_loss(server, local);
  term.relation = local;

  // Gradient per class row shared by both matrices: through the symmetric KL,
  // the temperature softmax, and the kept-sample mean.
  const std::size_t shared = [&] {
    std::size_t n = 0;
    for (std::size_t c = 0; c < classes; ++c)
      if (server.row_valid(c) && local.row_valid(c)) ++n;
    return n;
  }();
  if (shared == 0) return term;

  const double inv_shared = 1.0 / static_cast<double>(shared);
  std::vector<double> row(classes), row_grad(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    if (!server.row_valid(c) || !local.row_valid(c)) continue;
    for (std::size_t j = 0; j < classes; ++j) {
      const double m = server.entries().at(c, j);
      const double u = local.entries().at(c, j);
      row[j] = u;
      // d/du of m*(log m - log u) + u*(log u - log m), with the floors of
      // irm_loss differentiated exactly.
      double g = 0.0;
      if (u > kLogFloor) g += -m / u;                   // first KL direction
      g += std::log(std::max(u, kLogFloor));            // second KL direction
      g -= std::log(std::max(m, kLogFloor));
      if (u > kLogFloor) g += 1.0;
      row_grad[j] = g * inv_shared;
    }
    const auto v_grad = temperature_softmax_vjp(row, row_grad, tau);
    const double inv_count = 1.0 / static_cast<double>(counts[c]);
    for (std::size_t i = 0; i < b; ++i) {
      if (!report.keep[i] || pseudo[i] != c) continue;
      double* dst = term.value_grad.row(i);
      for (std::size_t j = 0; j < classes; ++j) dst[j] += v_grad[j] * inv_count;
    }
  }
  return term;
}

}  // namespace

LossGrad cross_entropy_grad(const Network& net, const Matrix& batch,
                            const std::vector<int>& targets, std::uint64_t dropout_seed) {
  const ForwardTrace trace = forward_trace(net, batch, Pass::Train, dropout_seed);
  LossGrad out;
  out.loss = cross_entropy(trace.probs, targets);
  ensure_finite(out.loss, "cross_entropy");
  const Matrix prob_grad = cross_entropy_prob_grad(trace.probs, targets);
  out.grads = backprop(net, trace, probs_to_logit_grad(trace.probs, prob_grad));
  return out;
}

LossGrad consistency_grad(const Network& net, const Matrix& batch1, const Matrix& batch2,
                          std::uint64_t dropout_seed1, std::uint64_t dropout_seed2) {
  const ForwardTrace t1 = forward_trace(net, batch1, Pass::Train, dropout_seed1);
  const ForwardTrace t2 = forward_trace(net, batch2, Pass::Train, dropout_seed2);
  LossGrad out;
  out.loss = consistency_loss(t1.probs, t2.probs);
  ensure_finite(out.loss, "consistency");

  const double scale = 2.0 / static_cast<double>(t1.probs.size());
  Matrix g1(t1.probs.rows(), t1.probs.cols());
  Matrix g2(t1.probs.rows(), t1.probs.cols());
  for (std::size_t k = 0; k < g1.size(); ++k) {
    const double d = scale * (t1.probs.data()[k] - t2.probs.data()[k]);
    g1.data()[k] = d;
    g2.data()[k] = -d;
  }
  out.grads = backprop(net, t1, probs_to_logit_grad(t1.probs, g1));
  out.grads.add_scaled(backprop(net, t2, probs_to_logit_grad(t2.probs, g2)), 1.0);
  return out;
}

UnlabeledBatchResult unlabeled_batch_objective(const Network& net, const Matrix& raw_batch,
                                               const std::optional<RelationMatrix>& server,
                                               double lambda, const LocalConfig& cfg,
                                               const UnlabeledBatchSeeds& seeds) {
  const Matrix x1 = perturb_batch(raw_batch, cfg.perturb, seeds.perturb1);
  const Matrix x2 = perturb_batch(raw_batch, cfg.perturb, seeds.perturb2);
  const ForwardTrace t1 = forward_trace(net, x1, Pass::Train, seeds.dropout1);
  const ForwardTrace t2 = forward_trace(net, x2, Pass::Train, seeds.dropout2);

  UnlabeledBatchResult result;
  result.consistency = consistency_loss(t1.probs, t2.probs);
  ensure_finite(result.consistency, "consistency");

  const double scale = lambda * 2.0 / static_cast<double>(t1.probs.size());
  Matrix g1(t1.probs.rows(), t1.probs.cols());
  Matrix g2(t1.probs.rows(), t1.probs.cols());
  for (std::size_t k = 0; k < g1.size(); ++k) {
    const double d = scale * (t1.probs.data()[k] - t2.probs.data()[k]);
    g1.data()[k] = d;
    g2.data()[k] = -d;
  }

  Matrix logit_grad1 = probs_to_logit_grad(t1.probs, g1);

  if (server.has_value() && cfg.irm_weight != 0.0) {
    const UncertaintyReport report = mc_dropout_uncertainty(
        net, raw_batch, cfg.mc_passes, cfg.entropy_threshold, seeds.mc);
    const Matrix& values = cfg.unlabeled_uses_logits ? t1.logits() : t1.probs;
    RelationTerm term =
        relation_matching_term(values, report, *server, cfg.temperature);
    result.irm = term.loss;
    ensure_finite(result.irm, "irm");
    result.relation = std::move(term.relation);

    const double w = lambda * cfg.irm_weight;
    if (cfg.unlabeled_uses_logits) {
      for (std::size_t k = 0; k < logit_grad1.size(); ++k)
        logit_grad1.data()[k] += w * term.value_grad.data()[k];
    } else {
      for (double& v : term.value_grad.data()) v *= w;
      const Matrix extra = probs_to_logit_grad(t1.probs, term.value_grad);
      for (std::size_t k = 0; k < logit_grad1.size(); ++k)
        logit_grad1.data()[k] += extra.data()[k];
    }
  }

  result.loss = lambda * (result.consistency + cfg.irm_weight * result.irm);
  ensure_finite(result.loss, "unlabeled objective");

  result.grads = backprop(net, t1, logit_grad1);
  result.grads.add_scaled(backprop(net, t2, probs_to_logit_grad(t2.probs, g2)), 1.0);
  return result;
}

LossGrad irm_objective_grad(const Network& net, const Matrix& batch,
                            const RelationMatrix& server, const LocalConfig& cfg,
                            std::uint64_t dropout_seed, std::uint64_t mc_seed) {
  const ForwardTrace trace = forward_trace(net, batch, Pass::Train, dropout_seed);
  const UncertaintyReport report = mc_dropout_uncertainty(
      net, batch, cfg.mc_passes, cfg.entropy_threshold, mc_seed);
  const Matrix& values = cfg.unlabeled_uses_logits ? trace.logits() : trace.probs;
  RelationTerm term = relation_matching_term(values, report, server, cfg.temperature);

  LossGrad out;
  out.loss = term.loss;
  ensure_finite(out.loss, "irm");
  if (cfg.unlabeled_uses_logits) {
    out.grads = backprop(net, trace, term.value_grad);
  } else {
    out.grads = backprop(net, trace, probs_to_logit_grad(trace.probs, term.value_grad));
  }
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xBA7C));
  const auto order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    batches.emplace_back(order.begin() + begin, order.begin() + end);
  }
  return batches;
}

Matrix gather_rows(const Matrix& features, const std::vector<std::size_t>& idx) {
  Matrix out(idx.size(), features.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double* src = features.row(idx[i]);
    std::copy(src, src + features.cols(), out.row(i));
  }
  return out;
}

}  // namespace

ParameterSet labeled_local_update(const Network& net, const ClientDataset& dataset,
                                  const LocalConfig& cfg, std::uint64_t round_seed) {
  if (cfg.batch_size < 1 || cfg.epochs < 1)
    throw InvalidInput("labeled_local_update: batch size and epochs must be positive");
  const auto& targets = dataset.targets();

  Network local = net;
  OptimizerState state(local.params, cfg.adam);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches =
        epoch_batches(dataset.size(), cfg.batch_size, mix_seed(round_seed, epoch));
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Matrix batch = gather_rows(dataset.features(), batches[b]);
      std::vector<int> batch_targets(batches[b].size());
      for (std::size_t i = 0; i < batches[b].size(); ++i)
        batch_targets[i] = targets[batches[b][i]];

      const auto lg = cross_entropy_grad(local, batch, batch_targets,
                                         mix_seed(round_seed, epoch, b, 0xD0));
      adam_step(local.params, lg.grads, state);
    }
  }
  return local.params;
}

UnlabeledUpdateResult unlabeled_local_update(const Network& net, const ClientDataset& dataset,
                                             const std::optional<RelationMatrix>& server,
                                             double lambda, const LocalConfig& cfg,
                                             std::uint64_t round_seed) {
  if (cfg.batch_size < 1 || cfg.epochs < 1)
    throw InvalidInput("unlabeled_local_update: batch size and epochs must be positive");
  if (lambda < 0.0) throw InvalidInput("unlabeled_local_update: lambda must be >= 0");
  if (dataset.kind() != ClientKind::Unlabeled)
    throw InvalidInput("unlabeled_local_update: dataset is not unlabeled");

  UnlabeledUpdateResult result;
  if (lambda == 0.0) {  // the objective vanishes, so the round is a pass-through
    result.params = net.params;
    return result;
  }

  Network local = net;
  OptimizerState state(local.params, cfg.adam);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches =
        epoch_batches(dataset.size(), cfg.batch_size, mix_seed(round_seed, epoch));
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Matrix batch = gather_rows(dataset.features(), batches[b]);
      UnlabeledBatchSeeds seeds;
      seeds.perturb1 = mix_seed(round_seed, epoch, b, 0xA1);
      seeds.perturb2 = mix_seed(round_seed, epoch, b, 0xA2);
      seeds.dropout1 = mix_seed(round_seed, epoch, b, 0xB1);
      seeds.dropout2 = mix_seed(round_seed, epoch, b, 0xB2);
      seeds.mc = mix_seed(round_seed, epoch, b, 0xC1);

      auto batch_result = unlabeled_batch_objective(local, batch, server, lambda, cfg, seeds);
      adam_step(local.params, batch_result.grads, state);
      if (batch_result.relation.has_value())
        result.last_relation = std::move(batch_result.relation);
    }
  }
  result.params = std::move(local.params);
  return result;
}

}  // namespace fedirm
