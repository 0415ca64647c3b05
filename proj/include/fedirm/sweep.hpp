#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedirm/federation.hpp"

namespace fedirm {

enum class SweepAxis { LabeledClients, UnlabeledClients };

std::string to_string(SweepAxis axis);

/// One (axis value, mode) cell aggregated over seeds.
struct SweepCell {
  SweepAxis axis = SweepAxis::LabeledClients;
  std::size_t value = 0;
  Mode mode = Mode::FedIrm;
  std::vector<double> aucs;        // test macro AUC per seed
  std::vector<double> accuracies;  // test accuracy per seed
  double auc_mean = 0.0;
  double auc_std = 0.0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  bool failed = false;
  std::string error;
};

inline const std::vector<Mode>& sweep_modes() {
  static const std::vector<Mode> modes = {Mode::FedIrm, Mode::FedConsistency,
                                          Mode::FedAvgLabeledOnly};
  return modes;
}

/// Runs the experiment grid: every axis value crossed with the standard mode
/// set, each cell averaged over the given seeds. A failing cell is recorded
/// and the sweep continues. Cells run on up to `max_threads` worker threads;
/// results are deterministic regardless of scheduling.
std::vector<SweepCell> run_sweep(const ExperimentConfig& base, SweepAxis axis,
                                 const std::vector<std::size_t>& values,
                                 const std::vector<std::uint64_t>& seeds,
                                 std::size_t max_threads);

std::string sweep_summary_csv(const std::vector<SweepCell>& cells);
std::string sweep_summary_table(const std::vector<SweepCell>& cells);

}  // namespace fedirm
