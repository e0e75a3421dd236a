#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace protofed {

enum class MetricKind { F1, AUC, UAR };

MetricKind parse_metric(std::string_view s);
const char* metric_name(MetricKind kind);

/// K x K counts, rows = true class, columns = predicted class.
std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const int> preds, std::span<const int> labels,
                                                       std::size_t num_classes);

/// Unweighted mean of per-class F1. A class with no support and no
/// predictions contributes 0.
double macro_f1(std::span<const int> preds, std::span<const int> labels, std::size_t num_classes);

/// Mann-Whitney statistic: P(score_pos > score_neg) + P(tie) / 2.
double auc_binary(std::span<const double> scores, std::span<const int> labels);

/// Unweighted mean of per-class recall. Every class must occur in `labels`.
double uar(std::span<const int> preds, std::span<const int> labels, std::size_t num_classes);

struct EvalResult {
  MetricKind metric = MetricKind::F1;
  double value = 0.0;
  double accuracy = 0.0;
  /// Per-class F1 (F1 metric) or recall (UAR); empty for AUC.
  std::vector<double> per_class;
  std::vector<std::vector<std::size_t>> confusion;
};

/// Scores logits [N, K] given row-major. Predictions are the argmax; AUC uses
/// softmax probability of class 1.
EvalResult evaluate_logits(std::span<const double> logits, std::size_t num_classes, std::span<const int> labels,
                           MetricKind metric);

}  // namespace protofed
