#pragma once

#include <cstdint>
#include <numbers>
#include <optional>

#include "fedirm/data.hpp"
#include "fedirm/numerics.hpp"
#include "fedirm/relation.hpp"

namespace fedirm {

/// Everything a client needs for one round of local training.
struct LocalConfig {
  std::size_t batch_size = 48;
  std::size_t epochs = 1;
  AdamConfig adam;
  PerturbSpec perturb;
  double temperature = 2.0;
  int mc_passes = 8;
  double entropy_threshold = std::numbers::ln2;
  std::size_t warmup_rounds = 30;
  bool warmup_squared = true;
  double irm_weight = 1.0;
  bool unlabeled_uses_logits = false;

  bool operator==(const LocalConfig&) const = default;
};

/// Mean over the batch of -log p[i, target_i], log floored at 1e-8.
double cross_entropy(const Matrix& probs, const std::vector<int>& targets);

/// Mean squared difference over batch and classes between two probability
/// outputs of the same model under different perturbations.
double consistency_loss(const Matrix& p1, const Matrix& p2);

/// Ramp for the unlabeled objective: exp(-5 * (1 - min(round/horizon, 1))^2),
/// reaching 1 at the horizon and constant afterwards. With squared == false
/// the exponent is not squared.
double warmup(std::size_t round, std::size_t horizon, bool squared = true);

struct LossGrad {
  double loss = 0.0;
  ParameterSet grads;
};

/// Train-mode forward (dropout driven by dropout_seed) followed by the exact
/// gradient of the floored cross entropy. Throws NumericalFailure if the loss
/// is not finite.
LossGrad cross_entropy_grad(const Network& net, const Matrix& batch,
                            const std::vector<int>& targets, std::uint64_t dropout_seed);

/// Consistency loss between two train-mode forwards of (possibly different)
/// inputs; the gradient flows through both branches.
LossGrad consistency_grad(const Network& net, const Matrix& batch1, const Matrix& batch2,
                          std::uint64_t dropout_seed1, std::uint64_t dropout_seed2);

struct UnlabeledBatchSeeds {
  std::uint64_t perturb1 = 0;
  std::uint64_t perturb2 = 0;
  std::uint64_t dropout1 = 0;
  std::uint64_t dropout2 = 0;
  std::uint64_t mc = 0;
};

struct UnlabeledBatchResult {
  double loss = 0.0;
  double consistency = 0.0;
  double irm = 0.0;
  ParameterSet grads;
  std::optional<RelationMatrix> relation;
};

/// The full per-batch unlabeled objective: lambda * (consistency + irm_weight
/// * relation-matching). The first perturbed branch supplies the predictions
/// the batch relation matrix is built from; the uncertainty filter runs on the
/// raw batch and contributes no gradient. With no server matrix the relation
/// term is absent.
UnlabeledBatchResult unlabeled_batch_objective(const Network& net, const Matrix& raw_batch,
                                               const std::optional<RelationMatrix>& server,
                                               double lambda, const LocalConfig& cfg,
                                               const UnlabeledBatchSeeds& seeds);

/// Relation-matching term alone (used by the gradient checker).
LossGrad irm_objective_grad(const Network& net, const Matrix& batch,
                            const RelationMatrix& server, const LocalConfig& cfg,
                            std::uint64_t dropout_seed, std::uint64_t mc_seed);

/// One round of supervised local training: `epochs` epochs of minibatch Adam
/// on cross entropy. Batch order is a pure function of round_seed. The input
/// parameters are untouched; the updated copy is returned.
ParameterSet labeled_local_update(const Network& net, const ClientDataset& dataset,
                                  const LocalConfig& cfg, std::uint64_t round_seed);

struct UnlabeledUpdateResult {
  ParameterSet params;
  std::optional<RelationMatrix> last_relation;
};

/// One round of unsupervised local training under the combined objective.
/// Reads no targets. With lambda == 0 the parameters pass through unchanged.
UnlabeledUpdateResult unlabeled_local_update(const Network& net, const ClientDataset& dataset,
                                             const std::optional<RelationMatrix>& server,
                                             double lambda, const LocalConfig& cfg,
                                             std::uint64_t round_seed);

}  // namespace fedirm
