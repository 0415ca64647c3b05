#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedirm/config.hpp"
#include "fedirm/data.hpp"
#include "fedirm/metrics.hpp"
#include "fedirm/relation.hpp"
#include "fedirm/rng.hpp"
#include "fedirm/training.hpp"

namespace fedirm {

/// Client -> server message for one round.
struct ClientUpdate {
  int client_id = -1;
  ParameterSet params;
  std::size_t sample_count = 0;
  std::optional<RelationMatrix> relation;  // labeled clients only
};

/// Server -> client message opening a round.
struct RoundBroadcast {
  std::size_t round = 0;
  ParameterSet params;
  std::optional<RelationMatrix> relation;
};

struct RoundMetricsRow {
  std::size_t round = 0;
  std::string split;
  double auc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  double lambda = 0.0;
};

struct ExperimentState {
  Network model;
  std::size_t round = 0;  // completed aggregations
  std::optional<RelationMatrix> aggregate;
  std::vector<RoundMetricsRow> history;
  std::uint64_t root_seed = 0;
};

/// What one round leaves behind besides the mutated state (used for dumps and
/// protocol tests).
struct RoundArtifacts {
  std::size_t updates_consumed = 0;
  std::size_t total_samples = 0;
  std::optional<RelationMatrix> aggregate;           // end-of-round server matrix
  std::optional<RelationMatrix> sampled_unlabeled;   // one client's last batch matrix
  double lambda = 0.0;
};

// Deterministic seed tree; client results are independent of execution order.
inline std::uint64_t round_seed(std::uint64_t root, std::size_t round) {
  return mix_seed(root, 0x5EED, round);
}
inline std::uint64_t client_seed(std::uint64_t round_seed_value, int client_id) {
  return mix_seed(round_seed_value, 0xC11E, static_cast<std::uint64_t>(client_id));
}

/// Sample-count weighted average of the client parameters, accumulated in
/// ascending client-id order so the result is independent of list order.
ParameterSet fedavg(const std::vector<ClientUpdate>& updates);

/// One synchronous federated round: broadcast, local updates, aggregation,
/// relation collection, validation metrics. Any client failure aborts the
/// round with the client id in the error message and leaves state untouched.
RoundArtifacts run_round(ExperimentState& state, const FederationSplit& split,
                         const LocalConfig& cfg, Mode mode);

struct ExperimentResult {
  std::vector<RoundMetricsRow> history;
  EvalResult test;
  std::size_t best_round = 0;
  double best_val_auc = 0.0;
  ParameterSet best_params;
  ParameterSet final_params;
};

/// Full experiment: build data, run all rounds, select the best round by
/// validation AUC, evaluate it on the test split. When cfg.out_dir is set the
/// run directory receives metrics.csv, config.resolved, checkpoints/ and
/// per-round relation dumps.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

std::string metrics_csv_header();
std::string metrics_csv_row(const RoundMetricsRow& row);

}  // namespace fedirm
