#include "fedirm/sweep.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

namespace fedirm {

std::string to_string(SweepAxis axis) {
  return axis == SweepAxis::LabeledClients ? "labeled" : "unlabeled";
}

namespace {

void finalize_stats(SweepCell& cell) {
  auto stats = [](const std::vector<double>& xs, double& mean, double& sd) {
    mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) {
      sd = 0.0;
      return;
    }
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  };
  stats(cell.aucs, cell.auc_mean, cell.auc_std);
  stats(cell.accuracies, cell.accuracy_mean, cell.accuracy_std);
}

ExperimentConfig cell_config(const ExperimentConfig& base, SweepAxis axis,
                             std::size_t value, Mode mode, std::uint64_t seed) {
  ExperimentConfig cfg = base;
  cfg.mode = mode;
  cfg.seed = seed;
  if (axis == SweepAxis::LabeledClients) {
    cfg.labeled_clients = value;
    cfg.active_unlabeled = 0;  // all remaining shards participate
  } else {
    cfg.active_unlabeled = value;
  }
  if (!base.out_dir.empty()) {
    cfg.out_dir = base.out_dir + "/" + to_string(axis) + "_" + std::to_string(value) +
                  "_" + to_string(mode) + "_seed" + std::to_string(seed);
  }
  return cfg;
}

}  // namespace

std::vector<SweepCell> run_sweep(const ExperimentConfig& base, SweepAxis axis,
                                 const std::vector<std::size_t>& values,
                                 const std::vector<std::uint64_t>& seeds,
                                 std::size_t max_threads) {
  if (values.empty()) throw InvalidInput("run_sweep: no axis values");
  if (seeds.empty()) throw InvalidInput("run_sweep: no seeds");

  std::vector<SweepCell> cells;
  for (std::size_t value : values) {
    for (Mode mode : sweep_modes()) {
      SweepCell cell;
      cell.axis = axis;
      cell.value = value;
      cell.mode = mode;
      cells.push_back(std::move(cell));
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      SweepCell& cell = cells[i];
      try {
        for (std::uint64_t seed : seeds) {
          const ExperimentConfig cfg = cell_config(base, axis, cell.value, cell.mode, seed);
          const ExperimentResult result = run_experiment(cfg);
          cell.aucs.push_back(result.test.auc);
          cell.accuracies.push_back(result.test.accuracy);
        }
        finalize_stats(cell);
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
      }
    }
  };

  const std::size_t thread_count = std::max<std::size_t>(
      1, std::min({max_threads, cells.size(),
                   static_cast<std::size_t>(std::thread::hardware_concurrency())}));
  if (thread_count == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(thread_count);
    for (std::size_t t = 0; t < thread_count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return cells;
}

std::string sweep_summary_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  os << "axis,value,mode,seeds,auc_mean,auc_std,accuracy_mean,accuracy_std,status\n";
  char buf[192];
  for (const auto& c : cells) {
    if (c.failed) {
      os << to_string(c.axis) << ',' << c.value << ',' << to_string(c.mode)
         << ",0,,,,,failed: " << c.error << '\n';
      continue;
    }
    std::snprintf(buf, sizeof(buf), "%s,%zu,%s,%zu,%.6f,%.6f,%.6f,%.6f,ok\n",
                  to_string(c.axis).c_str(), c.value, to_string(c.mode).c_str(),
                  c.aucs.size(), c.auc_mean, c.auc_std, c.accuracy_mean, c.accuracy_std);
    os << buf;
  }
  return os.str();
}

std::string sweep_summary_table(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%-10s %6s %-20s %18s %18s\n", "axis", "value", "mode",
                "auc (mean+/-std)", "acc (mean+/-std)");
  os << buf;
  for (const auto& c : cells) {
    if (c.failed) {
      std::snprintf(buf, sizeof(buf), "%-10s %6zu %-20s failed: %s\n",
                    to_string(c.axis).c_str(), c.value, to_string(c.mode).c_str(),
                    c.error.c_str());
      os << buf;
      continue;
    }
    std::snprintf(buf, sizeof(buf), "%-10s %6zu %-20s %8.4f +/- %6.4f %8.4f +/- %6.4f\n",
                  to_string(c.axis).c_str(), c.value, to_string(c.mode).c_str(),
                  c.auc_mean, c.auc_std, c.accuracy_mean, c.accuracy_std);
    os << buf;
  }
  return os.str();
}

}  // namespace fedirm
