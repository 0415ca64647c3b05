// fedirm: federated semi-supervised learning simulator with inter-client
// relation matching. Subcommands: run, sweep, gradcheck, dump-relations.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedirm/checkpoint.hpp"
#include "fedirm/federation.hpp"
#include "fedirm/gradcheck.hpp"
#include "fedirm/sweep.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string mode;
};

fedirm::ExperimentConfig load_config(const CommonFlags& flags) {
  fedirm::ExperimentConfig cfg = fedirm::parse_config_file(flags.config_path);
  if (flags.seed.has_value()) cfg.seed = *flags.seed;
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (!flags.mode.empty()) cfg.mode = fedirm::mode_from_string(flags.mode);
  return cfg;
}

std::size_t sweep_thread_cap() {
  if (const char* env = std::getenv("FEDIRM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return 4;
}

std::vector<std::size_t> parse_size_list(const std::string& csv) {
  std::vector<std::size_t> out;
  std::size_t begin = 0;
  while (begin <= csv.size()) {
    const std::size_t comma = csv.find(',', begin);
    const std::string token =
        csv.substr(begin, comma == std::string::npos ? std::string::npos : comma - begin);
    if (!token.empty()) out.push_back(std::stoul(token));
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  return out;
}

int cmd_run(const CommonFlags& flags) {
  fedirm::ExperimentConfig cfg = load_config(flags);
  if (cfg.out_dir.empty()) cfg.out_dir = "run_out";
  const fedirm::ExperimentResult result = fedirm::run_experiment(cfg);
  std::printf("best_round=%zu val_auc=%.6f\n", result.best_round, result.best_val_auc);
  std::printf("test auc=%.6f sensitivity=%.6f specificity=%.6f accuracy=%.6f f1=%.6f\n",
              result.test.auc, result.test.sensitivity, result.test.specificity,
              result.test.accuracy, result.test.f1);
  std::printf("outputs in %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& axis_name,
              const std::string& values_csv, const std::string& seeds_csv) {
  fedirm::ExperimentConfig base = load_config(flags);

  fedirm::SweepAxis axis;
  std::vector<std::size_t> values;
  if (axis_name == "labeled") {
    axis = fedirm::SweepAxis::LabeledClients;
    values = {1, 2, 3, 4};
  } else if (axis_name == "unlabeled") {
    axis = fedirm::SweepAxis::UnlabeledClients;
    values = {1, 2, 4, 8};
  } else {
    throw fedirm::ConfigError("unknown sweep axis: " + axis_name);
  }
  if (!values_csv.empty()) values = parse_size_list(values_csv);

  std::vector<std::uint64_t> seeds = {1, 2, 3};
  if (!seeds_csv.empty()) {
    seeds.clear();
    for (std::size_t v : parse_size_list(seeds_csv)) seeds.push_back(v);
  }

  const auto cells = fedirm::run_sweep(base, axis, values, seeds, sweep_thread_cap());
  std::cout << fedirm::sweep_summary_table(cells);
  if (!base.out_dir.empty()) {
    std::filesystem::create_directories(base.out_dir);
    std::ofstream os(base.out_dir + "/sweep_summary.csv", std::ios::trunc);
    if (!os) throw fedirm::IoError("cannot write sweep summary in " + base.out_dir);
    os << fedirm::sweep_summary_csv(cells);
  }
  for (const auto& c : cells)
    if (c.failed) return 1;
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int trials, bool corrupt) {
  const auto report = fedirm::run_gradient_checks(seed, trials, 1e-4, corrupt);
  std::cout << fedirm::format_gradcheck_report(report);
  if (!report.all_pass) {
    for (const auto& c : report.cases)
      if (!c.pass) std::fprintf(stderr, "error: gradient check failed for %s\n",
                                c.loss_name.c_str());
    return 1;
  }
  return 0;
}

int cmd_dump_relations(const CommonFlags& flags, const std::string& checkpoint_path) {
  fedirm::ExperimentConfig cfg = load_config(flags);
  fedirm::resolve(cfg);
  const std::string out = cfg.out_dir.empty() ? std::string("relations_out") : cfg.out_dir;
  std::filesystem::create_directories(out);

  const fedirm::Dataset dataset =
      cfg.source == fedirm::DataSource::Blobs
          ? fedirm::generate_blobs(cfg.classes, cfg.per_class, cfg.dimension, cfg.spread,
                                   fedirm::mix_seed(cfg.seed, 0xDA7A))
          : fedirm::load_idx(cfg.images_path, cfg.labels_path, cfg.standardize);
  fedirm::FederationSplit split = fedirm::partition(
      dataset, cfg.clients, cfg.labeled_clients, fedirm::mix_seed(cfg.seed, 0x9A27));

  fedirm::Network net =
      fedirm::make_network(dataset.dim(), {cfg.hidden, cfg.hidden}, cfg.classes,
                           cfg.activation, cfg.dropout, fedirm::mix_seed(cfg.seed, 0x1417));
  net.params = fedirm::load_checkpoint(checkpoint_path);
  if (net.params.shape_signature() !=
      fedirm::make_network(dataset.dim(), {cfg.hidden, cfg.hidden}, cfg.classes,
                           cfg.activation, cfg.dropout, 0)
          .params.shape_signature())
    throw fedirm::FormatError("checkpoint shape does not match the configured model");

  std::vector<fedirm::RelationMatrix> labeled_matrices;
  for (const auto& client : split.labeled)
    labeled_matrices.push_back(fedirm::labeled_relation(net, client, cfg.local.temperature));
  const fedirm::RelationMatrix aggregate = fedirm::aggregate_relations(labeled_matrices);

  std::ofstream os(out + "/relations.csv", std::ios::trunc);
  if (!os) throw fedirm::IoError("cannot write relations in " + out);
  fedirm::write_relation_csv(os, aggregate, "labeled_aggregate", true);
  for (std::size_t i = 0; i < labeled_matrices.size(); ++i)
    fedirm::write_relation_csv(os, labeled_matrices[i],
                               "labeled_client_" + std::to_string(i), false);

  if (!split.unlabeled.empty()) {
    const auto& client = split.unlabeled.front();
    const std::size_t b = std::min(cfg.local.batch_size, client.size());
    fedirm::Matrix batch(b, client.features().cols());
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < batch.cols(); ++j)
        batch.at(i, j) = client.features().at(i, j);

    const auto report = fedirm::mc_dropout_uncertainty(
        net, batch, cfg.local.mc_passes, cfg.local.entropy_threshold,
        fedirm::mix_seed(cfg.seed, 0xD0));
    const fedirm::Matrix probs =
        fedirm::forward(net, batch, fedirm::Pass::Train, fedirm::mix_seed(cfg.seed, 0xD1))
            .probs;
    const fedirm::RelationMatrix local =
        fedirm::unlabeled_relation(probs, report, cfg.local.temperature);
    fedirm::write_relation_csv(os, local, "unlabeled_sample", false);

    const std::size_t classes = aggregate.class_count();
    fedirm::Matrix diff(classes, classes, 0.0);
    std::vector<std::uint8_t> valid(classes, 0);
    for (std::size_t c = 0; c < classes; ++c) {
      if (!aggregate.row_valid(c) || !local.row_valid(c)) continue;
      valid[c] = 1;
      for (std::size_t j = 0; j < classes; ++j)
        diff.at(c, j) = std::abs(aggregate.entries().at(c, j) - local.entries().at(c, j));
    }
    fedirm::write_relation_csv(os, diff, valid, "abs_diff", false);
  }
  std::printf("relations written to %s/relations.csv\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated semi-supervised learning simulator"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string axis = "unlabeled";
  std::string values_csv;
  std::string seeds_csv;
  std::uint64_t gradcheck_seed = 7;
  int gradcheck_trials = 20;
  bool gradcheck_corrupt = false;
  std::string checkpoint_path;

  auto add_common = [&](CLI::App* cmd, bool config_required) {
    auto* opt = cmd->add_option("--config", flags.config_path, "config file path");
    if (config_required) opt->required();
    cmd->add_option("--seed", [&flags](const std::vector<std::string>& v) {
      flags.seed = std::stoull(v.front());
      return true;
    }, "override the config seed");
    cmd->add_option("--out", flags.out_dir, "output directory override");
    cmd->add_option("--mode", flags.mode, "mode override");
  };

  auto* run = app.add_subcommand("run", "run one experiment");
  add_common(run, true);

  auto* sweep = app.add_subcommand("sweep", "run a client-count sweep grid");
  add_common(sweep, true);
  sweep->add_option("--axis", axis, "labeled | unlabeled");
  sweep->add_option("--values", values_csv, "comma separated axis values");
  sweep->add_option("--seeds", seeds_csv, "comma separated seeds");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seed", gradcheck_seed, "suite seed");
  gradcheck->add_option("--trials", gradcheck_trials, "trials per loss");
  gradcheck->add_flag("--corrupt", gradcheck_corrupt,
                      "negative control: corrupt one gradient entry");

  auto* dump = app.add_subcommand("dump-relations", "relation matrices of a checkpoint");
  add_common(dump, true);
  dump->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(flags);
    if (sweep->parsed()) return cmd_sweep(flags, axis, values_csv, seeds_csv);
    if (gradcheck->parsed())
      return cmd_gradcheck(gradcheck_seed, gradcheck_trials, gradcheck_corrupt);
    if (dump->parsed()) return cmd_dump_relations(flags, checkpoint_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
