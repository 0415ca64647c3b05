#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fedirm/numerics.hpp"

namespace fedirm {

/// Central finite differences of `value` at net.params, coordinate by
/// coordinate. The value function re-runs the full forward computation, so it
/// is an estimator independent of the analytic reverse pass.
ParameterSet finite_difference_gradient(const Network& net,
                                        const std::function<double(const Network&)>& value,
                                        double step = 1e-4);

/// || analytic - fd ||_2 / max(||analytic||_2, ||fd||_2, 1e-10); zero when
/// both gradients vanish.
double gradient_rel_err(const ParameterSet& analytic, const ParameterSet& fd);

struct GradCheckCase {
  std::string loss_name;
  double max_rel_err = 0.0;
  int trials = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double threshold = 0.0;
  bool all_pass = false;
};

/// Finite-difference suite over random tiny networks (<= 100 parameters) for
/// every loss the artifact trains with. `corrupt` perturbs one analytic
/// gradient entry of the first loss; it exists as a negative control for the
/// suite itself.
GradCheckReport run_gradient_checks(std::uint64_t seed, int trials_per_loss = 20,
                                    double threshold = 1e-4, bool corrupt = false);

std::string format_gradcheck_report(const GradCheckReport& report);

}  // namespace fedirm
