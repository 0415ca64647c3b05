#pragma once

#include <cstdint>
#include <string>

#include "fedirm/numerics.hpp"
#include "fedirm/training.hpp"

namespace fedirm {

enum class Mode { FedIrm, FedConsistency, FedAvgLabeledOnly, FedAvgAllLabeled };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

enum class DataSource { Blobs, Idx };

/// Fully resolved experiment description. Parsed from a sectioned key-value
/// file; unknown keys are hard errors. `resolve()` applies the forcing rules
/// (all-labeled mode pins labeled_clients to clients; synthetic data lowers
/// the default batch size) and validates every field.
struct ExperimentConfig {
  Mode mode = Mode::FedIrm;
  std::uint64_t seed = 1;
  std::size_t rounds = 100;
  std::size_t clients = 10;
  std::size_t labeled_clients = 2;
  std::size_t active_unlabeled = 0;  // 0 = all unlabeled clients participate
  std::string out_dir;

  DataSource source = DataSource::Blobs;
  std::size_t classes = 5;
  std::size_t per_class = 286;
  std::size_t dimension = 16;
  double spread = 0.4;
  std::string images_path;
  std::string labels_path;
  bool standardize = false;

  std::size_t hidden = 64;
  double dropout = 0.3;
  Activation activation = Activation::Tanh;

  // Adam epsilon doubles as a trust region here: gradients far below it get
  // damped, which is what lets the round warm-up actually attenuate the
  // unlabeled objective early on. 1e-8 destabilizes desk-scale federation.
  LocalConfig local = [] {
    LocalConfig l;
    l.adam.epsilon = 1e-3;
    return l;
  }();
  bool batch_size_explicit = false;

  bool operator==(const ExperimentConfig&) const = default;
};

/// The base default before source-specific resolution.
inline constexpr std::size_t kDefaultBatchSize = 48;
/// Desk-scale default applied to synthetic data during resolve().
inline constexpr std::size_t kSyntheticBatchSize = 16;

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

/// Canonical echo of a resolved config; parsing it back yields an equal
/// config (doubles are printed round-trip exact).
std::string serialize_config(const ExperimentConfig& cfg);

/// Applies forcing rules in place and validates. Throws ConfigError.
void resolve(ExperimentConfig& cfg);

}  // namespace fedirm
