#pragma once

#include <cstdint>
#include <vector>

#include "fedirm/matrix.hpp"
#include "fedirm/numerics.hpp"

namespace fedirm {

/// Macro-averaged evaluation summary plus per-class breakdowns. A per-class
/// value whose defining ratio is 0/0 is reported as 0 with its defined flag
/// cleared and is excluded from the macro average.
struct EvalResult {
  double auc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  std::vector<double> per_class_auc;
  std::vector<double> per_class_sensitivity;
  std::vector<double> per_class_specificity;
  std::vector<double> per_class_f1;
  std::vector<std::uint8_t> auc_defined;
  std::vector<std::uint8_t> sensitivity_defined;
  std::vector<std::uint8_t> specificity_defined;
  std::vector<std::uint8_t> f1_defined;
  std::size_t sample_count = 0;
};

struct AucBreakdown {
  double macro = 0.0;
  std::vector<double> per_class;
  std::vector<std::uint8_t> defined;  // classes with both positives and negatives
};

/// One-vs-rest AUC per class via the Mann-Whitney rank statistic with ties
/// counted half, macro-averaged over classes having both positives and
/// negatives. Throws UndefinedMetric when no class qualifies.
AucBreakdown auc_ovr_breakdown(const Matrix& scores, const std::vector<int>& labels);

double auc_ovr(const Matrix& scores, const std::vector<int>& labels);

/// Confusion-matrix metrics: per-class sensitivity TP/(TP+FN), specificity
/// TN/(TN+FP), F1 = 2TP/(2TP+FP+FN), macro-averaged; accuracy = trace/N.
EvalResult confusion_metrics(const std::vector<int>& predictions,
                             const std::vector<int>& labels, std::size_t classes);

/// Eval-mode forward over the dataset, then AUC + confusion metrics.
EvalResult evaluate(const Network& net, const Matrix& features,
                    const std::vector<int>& labels);

}  // namespace fedirm
