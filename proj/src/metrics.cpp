#include "protofed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protofed/errors.hpp"

namespace protofed {

MetricKind parse_metric(std::string_view s) {
  if (s == "f1") return MetricKind::F1;
  if (s == "auc") return MetricKind::AUC;
  if (s == "uar") return MetricKind::UAR;
  throw ConfigError("unknown metric '" + std::string(s) + "' (expected f1, auc, uar)");
}

const char* metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::F1: return "f1";
    case MetricKind::AUC: return "auc";
    case MetricKind::UAR: return "uar";
  }
  return "?";
}

namespace {

void check_pairs(std::size_t a, std::size_t b) {
  if (a != b) throw DataError("prediction count " + std::to_string(a) + " vs label count " + std::to_string(b));
}

void check_range(std::span<const int> v, std::size_t K, const char* what) {
  for (int x : v)
    if (x < 0 || static_cast<std::size_t>(x) >= K) {
      throw DataError(std::string(what) + " " + std::to_string(x) + " outside [0," + std::to_string(K) + ")");
    }
}

std::vector<double> per_class_f1(const std::vector<std::vector<std::size_t>>& cm) {
  const std::size_t K = cm.size();
  std::vector<double> out(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    std::size_t tp = cm[k][k], support = 0, predicted = 0;
    for (std::size_t j = 0; j < K; ++j) {
      support += cm[k][j];
      predicted += cm[j][k];
    }
    // 2PR/(P+R) == 2tp/(support+predicted); 0 when both are empty.
    if (support + predicted > 0) out[k] = 2.0 * static_cast<double>(tp) / static_cast<double>(support + predicted);
  }
  return out;
}

std::vector<double> per_class_recall(const std::vector<std::vector<std::size_t>>& cm) {
  const std::size_t K = cm.size();
  std::vector<double> out(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t support = std::accumulate(cm[k].begin(), cm[k].end(), std::size_t{0});
    if (support == 0) throw DataError("class " + std::to_string(k) + " is absent from the labels");
    out[k] = static_cast<double>(cm[k][k]) / static_cast<double>(support);
  }
  return out;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const int> preds, std::span<const int> labels,
                                                       std::size_t num_classes) {
  check_pairs(preds.size(), labels.size());
  check_range(preds, num_classes, "prediction");
  check_range(labels, num_classes, "label");
  std::vector<std::vector<std::size_t>> cm(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) ++cm[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  return cm;
}

double macro_f1(std::span<const int> preds, std::span<const int> labels, std::size_t num_classes) {
  return mean(per_class_f1(confusion_matrix(preds, labels, num_classes)));
}

double uar(std::span<const int> preds, std::span<const int> labels, std::size_t num_classes) {
  return mean(per_class_recall(confusion_matrix(preds, labels, num_classes)));
}

double auc_binary(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores.size(), labels.size());
  check_range(labels, 2, "label");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks over ties, then the rank-sum form of Mann-Whitney U.
  double pos_rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("AUC needs both classes present");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1) / 2.0) / (np * nn);
}

EvalResult evaluate_logits(std::span<const double> logits, std::size_t num_classes, std::span<const int> labels,
                           MetricKind metric) {
  if (num_classes == 0 || logits.size() != labels.size() * num_classes) {
    throw DataError("logits do not match " + std::to_string(labels.size()) + " samples of " +
                    std::to_string(num_classes) + " classes");
  }
  const std::size_t n = labels.size();
  std::vector<int> preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.subspan(i * num_classes, num_classes);
    preds[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  EvalResult out;
  out.metric = metric;
  out.confusion = confusion_matrix(preds, labels, num_classes);
  std::size_t correct = 0;
  for (std::size_t k = 0; k < num_classes; ++k) correct += out.confusion[k][k];
  out.accuracy = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  switch (metric) {
    case MetricKind::F1:
      out.per_class = per_class_f1(out.confusion);
      out.value = mean(out.per_class);
      break;
    case MetricKind::UAR:
      out.per_class = per_class_recall(out.confusion);
      out.value = mean(out.per_class);
      break;
    case MetricKind::AUC: {
      if (num_classes != 2) throw ConfigError("AUC metric needs a binary task");
      std::vector<double> scores(n);
      for (std::size_t i = 0; i < n; ++i) {
        // softmax probability of class 1 for two logits
        scores[i] = 1.0 / (1.0 + std::exp(logits[i * 2] - logits[i * 2 + 1]));
      }
      out.value = auc_binary(scores, labels);
      break;
    }
  }
  return out;
}

}  // namespace protofed
