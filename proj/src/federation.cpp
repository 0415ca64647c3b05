#include "fedirm/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fedirm/checkpoint.hpp"

namespace fedirm {

ParameterSet fedavg(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw InvalidInput("fedavg: no client updates");

  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });

  const auto signature = updates[order[0]].params.shape_signature();
  std::size_t total = 0;
  for (const auto& u : updates) {
    if (u.sample_count < 1)
      throw InvalidInput("fedavg: client " + std::to_string(u.client_id) +
                         " reports zero samples");
    if (u.params.shape_signature() != signature)
      throw InvalidInput("fedavg: shape signature mismatch for client " +
                         std::to_string(u.client_id));
    total += u.sample_count;
  }

  ParameterSet global = updates[order[0]].params.zeros_like();
  for (const std::size_t i : order) {
    const double weight =
        static_cast<double>(updates[i].sample_count) / static_cast<double>(total);
    global.add_scaled(updates[i].params, weight);
  }
  return global;
}

namespace {

template <typename Fn>
auto with_client_context(int client_id, Fn&& fn) {
  try {
    return fn();
  } catch (const InvalidInput& e) {
    throw InvalidInput("client " + std::to_string(client_id) + ": " + e.what());
  } catch (const NumericalFailure& e) {
    throw NumericalFailure("client " + std::to_string(client_id) + ": " + e.what());
  }
}

}  // namespace

RoundArtifacts run_round(ExperimentState& state, const FederationSplit& split,
                         const LocalConfig& cfg, Mode mode) {
  const std::size_t omega = state.round;
  const std::uint64_t rseed = round_seed(state.root_seed, omega);

  const RoundBroadcast broadcast{omega, state.model.params,
                                 mode == Mode::FedIrm ? state.aggregate : std::nullopt};

  const bool use_unlabeled =
      (mode == Mode::FedIrm || mode == Mode::FedConsistency) && !split.unlabeled.empty();
  const double lambda = use_unlabeled
                            ? warmup(omega, cfg.warmup_rounds, cfg.warmup_squared)
                            : 0.0;

  RoundArtifacts artifacts;
  artifacts.lambda = lambda;

  std::vector<ClientUpdate> updates;
  std::vector<RelationMatrix> labeled_matrices;

  for (const auto& client : split.labeled) {
    const std::uint64_t cseed = client_seed(rseed, client.client_id());
    ClientUpdate update;
    update.client_id = client.client_id();
    update.sample_count = client.size();
    with_client_context(client.client_id(), [&] {
      Network net = state.model;
      net.params = broadcast.params;
      update.params = labeled_local_update(net, client, cfg, cseed);
      if (mode == Mode::FedIrm && !split.unlabeled.empty()) {
        net.params = update.params;
        update.relation = labeled_relation(net, client, cfg.temperature);
        labeled_matrices.push_back(*update.relation);
      }
      return 0;
    });
    updates.push_back(std::move(update));
  }

  if (use_unlabeled) {
    for (const auto& client : split.unlabeled) {
      const std::uint64_t cseed = client_seed(rseed, client.client_id());
      ClientUpdate update;
      update.client_id = client.client_id();
      update.sample_count = client.size();
      with_client_context(client.client_id(), [&] {
        Network net = state.model;
        net.params = broadcast.params;
        auto result = unlabeled_local_update(net, client, broadcast.relation, lambda,
                                             cfg, cseed);
        update.params = std::move(result.params);
        if (!artifacts.sampled_unlabeled.has_value() && result.last_relation.has_value())
          artifacts.sampled_unlabeled = std::move(result.last_relation);
        return 0;
      });
      updates.push_back(std::move(update));
    }
  }

  artifacts.updates_consumed = updates.size();
  for (const auto& u : updates) artifacts.total_samples += u.sample_count;

  ParameterSet next = fedavg(updates);
  std::optional<RelationMatrix> next_aggregate;
  if (!labeled_matrices.empty()) next_aggregate = aggregate_relations(labeled_matrices);

  // Commit only after every client and the aggregation succeeded.
  state.model.params = std::move(next);
  state.aggregate = next_aggregate.has_value() ? next_aggregate : state.aggregate;
  state.round = omega + 1;
  artifacts.aggregate = state.aggregate;

  const EvalResult val = evaluate(state.model, split.val_features, split.val_labels);
  state.history.push_back({omega, "val", val.auc, val.sensitivity, val.specificity,
                           val.accuracy, val.f1, lambda});
  return artifacts;
}

std::string metrics_csv_header() {
  return "round,split,auc,sensitivity,specificity,accuracy,f1,lambda\n";
}

std::string metrics_csv_row(const RoundMetricsRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", row.round,
                row.split.c_str(), row.auc, row.sensitivity, row.specificity,
                row.accuracy, row.f1, row.lambda);
  return buf;
}

namespace {

Dataset build_dataset(const ExperimentConfig& cfg) {
  if (cfg.source == DataSource::Blobs)
    return generate_blobs(cfg.classes, cfg.per_class, cfg.dimension, cfg.spread,
                          mix_seed(cfg.seed, 0xDA7A));
  return load_idx(cfg.images_path, cfg.labels_path, cfg.standardize);
}

void dump_round_relations(const std::string& dir, std::size_t round,
                          const RoundArtifacts& artifacts) {
  if (!artifacts.aggregate.has_value()) return;
  std::ofstream os(dir + "/round_" + std::to_string(round) + ".csv", std::ios::trunc);
  if (!os) throw IoError("cannot write relation dump in " + dir);

  const RelationMatrix& m = *artifacts.aggregate;
  write_relation_csv(os, m, "labeled_aggregate", true);
  if (artifacts.sampled_unlabeled.has_value()) {
    const RelationMatrix& mu = *artifacts.sampled_unlabeled;
    write_relation_csv(os, mu, "unlabeled_sample", false);

    const std::size_t classes = m.class_count();
    Matrix diff(classes, classes, 0.0);
    std::vector<std::uint8_t> valid(classes, 0);
    for (std::size_t c = 0; c < classes; ++c) {
      if (!m.row_valid(c) || !mu.row_valid(c)) continue;
      valid[c] = 1;
      for (std::size_t j = 0; j < classes; ++j)
        diff.at(c, j) = std::abs(m.entries().at(c, j) - mu.entries().at(c, j));
    }
    write_relation_csv(os, diff, valid, "abs_diff", false);
  }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& raw_cfg) {
  ExperimentConfig cfg = raw_cfg;
  resolve(cfg);

  const Dataset dataset = build_dataset(cfg);
  FederationSplit split =
      partition(dataset, cfg.clients, cfg.labeled_clients, mix_seed(cfg.seed, 0x9A27));
  if (cfg.active_unlabeled > 0 && cfg.active_unlabeled < split.unlabeled.size())
    split.unlabeled.erase(split.unlabeled.begin() + cfg.active_unlabeled,
                          split.unlabeled.end());

  LocalConfig local = cfg.local;
  local.perturb.image_height = split.image_height;
  local.perturb.image_width = split.image_width;

  ExperimentState state;
  state.root_seed = cfg.seed;
  state.model = make_network(dataset.dim(), {cfg.hidden, cfg.hidden}, cfg.classes,
                             cfg.activation, cfg.dropout, mix_seed(cfg.seed, 0x1417));

  const bool write_outputs = !cfg.out_dir.empty();
  std::string relations_dir;
  if (write_outputs) {
    std::filesystem::create_directories(cfg.out_dir);
    std::filesystem::create_directories(cfg.out_dir + "/checkpoints");
    relations_dir = cfg.out_dir + "/relations";
    std::filesystem::create_directories(relations_dir);
    std::ofstream echo(cfg.out_dir + "/config.resolved", std::ios::trunc);
    if (!echo) throw IoError("cannot write config echo in " + cfg.out_dir);
    echo << serialize_config(cfg);
  }

  ExperimentResult result;
  result.best_val_auc = -1.0;
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const RoundArtifacts artifacts = run_round(state, split, local, cfg.mode);
    if (write_outputs) dump_round_relations(relations_dir, r, artifacts);

    const double val_auc = state.history.back().auc;
    if (val_auc > result.best_val_auc) {
      result.best_val_auc = val_auc;
      result.best_round = r;
      result.best_params = state.model.params;
    }
  }

  Network best_model = state.model;
  best_model.params = result.best_params;
  result.test = evaluate(best_model, split.test_features, split.test_labels);
  state.history.push_back({result.best_round, "test", result.test.auc,
                           result.test.sensitivity, result.test.specificity,
                           result.test.accuracy, result.test.f1, 0.0});
  result.history = state.history;
  result.final_params = state.model.params;

  if (write_outputs) {
    std::ofstream metrics(cfg.out_dir + "/metrics.csv", std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics.csv in " + cfg.out_dir);
    metrics << metrics_csv_header();
    for (const auto& row : result.history) metrics << metrics_csv_row(row);

    save_checkpoint(result.final_params, cfg.out_dir + "/checkpoints/final.bin");
    save_checkpoint(result.best_params, cfg.out_dir + "/checkpoints/best.bin");
  }
  return result;
}

}  // namespace fedirm
