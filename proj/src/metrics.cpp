#include "fedirm/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace fedirm {

AucBreakdown auc_ovr_breakdown(const Matrix& scores, const std::vector<int>& labels) {
  const std::size_t n = scores.rows();
  const std::size_t classes = scores.cols();
  if (labels.size() != n) throw InvalidInput("auc_ovr: one label per row required");
  if (n < 2) throw InvalidInput("auc_ovr: need at least 2 samples");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw InvalidInput("auc_ovr: label out of range");

  AucBreakdown out;
  out.per_class.assign(classes, 0.0);
  out.defined.assign(classes, 0);

  std::vector<std::size_t> order(n);
  std::vector<double> ranks(n);
  double macro_sum = 0.0;
  std::size_t macro_count = 0;

  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t positives = 0;
    for (int y : labels) positives += (static_cast<std::size_t>(y) == c);
    const std::size_t negatives = n - positives;
    if (positives == 0 || negatives == 0) continue;

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores.at(a, c) < scores.at(b, c);
    });
    // Average ranks across tie groups (1-based), which is exactly the
    // half-credit convention for tied pairs.
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && scores.at(order[j + 1], c) == scores.at(order[i], c)) ++j;
      const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
      for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg_rank;
      i = j + 1;
    }

    double rank_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (static_cast<std::size_t>(labels[k]) == c) rank_sum += ranks[k];
    const double u = rank_sum - 0.5 * static_cast<double>(positives) *
                                    static_cast<double>(positives + 1);
    const double auc =
        u / (static_cast<double>(positives) * static_cast<double>(negatives));

    out.per_class[c] = auc;
    out.defined[c] = 1;
    macro_sum += auc;
    ++macro_count;
  }

  if (macro_count == 0)
    throw UndefinedMetric("auc_ovr: no class has both positives and negatives");
  out.macro = macro_sum / static_cast<double>(macro_count);
  return out;
}

double auc_ovr(const Matrix& scores, const std::vector<int>& labels) {
  return auc_ovr_breakdown(scores, labels).macro;
}

EvalResult confusion_metrics(const std::vector<int>& predictions,
                             const std::vector<int>& labels, std::size_t classes) {
  if (predictions.size() != labels.size())
    throw InvalidInput("confusion_metrics: length mismatch");
  if (predictions.empty()) throw InvalidInput("confusion_metrics: empty input");
  const std::size_t n = predictions.size();

  std::vector<std::size_t> confusion(classes * classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    const int p = predictions[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes || p < 0 ||
        static_cast<std::size_t>(p) >= classes)
      throw InvalidInput("confusion_metrics: value out of range");
    confusion[static_cast<std::size_t>(y) * classes + p] += 1;
  }

  EvalResult r;
  r.sample_count = n;
  r.per_class_sensitivity.assign(classes, 0.0);
  r.per_class_specificity.assign(classes, 0.0);
  r.per_class_f1.assign(classes, 0.0);
  r.sensitivity_defined.assign(classes, 0);
  r.specificity_defined.assign(classes, 0);
  r.f1_defined.assign(classes, 0);

  std::size_t trace = 0;
  double sens_sum = 0.0, spec_sum = 0.0, f1_sum = 0.0;
  std::size_t sens_n = 0, spec_n = 0, f1_n = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t tp = confusion[c * classes + c];
    std::size_t fn = 0, fp = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      if (j == c) continue;
      fn += confusion[c * classes + j];
      fp += confusion[j * classes + c];
    }
    const std::size_t tn = n - tp - fn - fp;
    trace += tp;

    if (tp + fn > 0) {
      r.per_class_sensitivity[c] = static_cast<double>(tp) / static_cast<double>(tp + fn);
      r.sensitivity_defined[c] = 1;
      sens_sum += r.per_class_sensitivity[c];
      ++sens_n;
    }
    if (tn + fp > 0) {
      r.per_class_specificity[c] = static_cast<double>(tn) / static_cast<double>(tn + fp);
      r.specificity_defined[c] = 1;
      spec_sum += r.per_class_specificity[c];
      ++spec_n;
    }
    if (2 * tp + fp + fn > 0) {
      r.per_class_f1[c] =
          2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
      r.f1_defined[c] = 1;
      f1_sum += r.per_class_f1[c];
      ++f1_n;
    }
  }

  r.accuracy = static_cast<double>(trace) / static_cast<double>(n);
  r.sensitivity = sens_n ? sens_sum / static_cast<double>(sens_n) : 0.0;
  r.specificity = spec_n ? spec_sum / static_cast<double>(spec_n) : 0.0;
  r.f1 = f1_n ? f1_sum / static_cast<double>(f1_n) : 0.0;
  return r;
}

EvalResult evaluate(const Network& net, const Matrix& features,
                    const std::vector<int>& labels) {
  const Matrix probs = forward(net, features, Pass::Eval).probs;
  std::vector<int> predictions(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i)
    predictions[i] = static_cast<int>(argmax_row(probs, i));

  EvalResult r = confusion_metrics(predictions, labels, net.class_count);
  const AucBreakdown auc = auc_ovr_breakdown(probs, labels);
  r.auc = auc.macro;
  r.per_class_auc = auc.per_class;
  r.auc_defined = auc.defined;
  return r;
}

}  // namespace fedirm
