#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace alrelu {

/// counts[t][p]: samples of true class t predicted as p.
struct ConfusionMatrix {
  std::vector<std::vector<std::uint64_t>> counts;

  std::size_t n_classes() const noexcept { return counts.size(); }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts) n = std::accumulate(row.begin(), row.end(), n);
    return n;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                 std::size_t n_classes) {
  if (truth.size() != predicted.size()) {
    throw ValidationError("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                          std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm{std::vector<std::vector<std::uint64_t>>(n_classes, std::vector<std::uint64_t>(n_classes, 0))};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= n_classes || predicted[i] >= n_classes) {
      throw ValidationError("confusion: label out of range at position " + std::to_string(i));
    }
    ++cm.counts[truth[i]][predicted[i]];
  }
  return cm;
}

namespace detail {

inline double require_samples(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw ValidationError("metrics need at least one sample");
  return static_cast<double>(n);
}

}  // namespace detail

struct WeightedPrf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Support-weighted precision, recall and F1. A per-class value whose
/// denominator is zero counts as 0.
inline WeightedPrf weighted_prf(const ConfusionMatrix& cm) {
  const double n = detail::require_samples(cm);
  const std::size_t k = cm.n_classes();
  WeightedPrf out;
  double tp_total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const double tp = static_cast<double>(cm.counts[c][c]);
    double support = 0.0, predicted = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      support += static_cast<double>(cm.counts[c][j]);
      predicted += static_cast<double>(cm.counts[j][c]);
    }
    if (support == 0.0) continue;
    const double p = predicted > 0.0 ? tp / predicted : 0.0;
    const double r = tp / support;
    const double f = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    out.precision += support * p;
    out.f1 += support * f;
    // support * (tp / support) == tp; summing integer counts keeps the
    // weighted recall bit-identical to accuracy.
    tp_total += tp;
  }
  out.precision /= n;
  out.recall = tp_total / n;
  out.f1 /= n;
  return out;
}

inline double accuracy(const ConfusionMatrix& cm) {
  const double n = detail::require_samples(cm);
  double trace = 0.0;
  for (std::size_t c = 0; c < cm.n_classes(); ++c) trace += static_cast<double>(cm.counts[c][c]);
  return trace / n;
}

/// Mann-Whitney form of ROC-AUC: P(score_pos > score_neg) + P(tie) / 2,
/// computed from average ranks after one sort.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("roc_auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double n_pos = 0.0, n_neg = 0.0, pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        n_pos += 1.0;
        pos_rank_sum += avg_rank;
      } else if (labels[order[t]] == 0) {
        n_neg += 1.0;
      } else {
        throw ValidationError("roc_auc: labels must be 0 or 1");
      }
    }
    i = j;
  }
  if (n_pos == 0.0 || n_neg == 0.0) throw ValidationError("roc_auc: AUC undefined with a single class present");
  return (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

/// Binary tasks score column 1; more classes use the macro one-vs-rest mean
/// over classes that have both positives and negatives in `truth`.
inline double multiclass_auc(const Tensor& probabilities, std::span<const std::size_t> truth) {
  const std::size_t n = probabilities.extent(0), k = probabilities.extent(1);
  if (truth.size() != n) throw ValidationError("multiclass_auc: label count mismatch");
  std::vector<double> scores(n);
  std::vector<int> bin(n);
  auto one_vs_rest = [&](std::size_t c) {
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = probabilities[i * k + c];
      bin[i] = truth[i] == c ? 1 : 0;
    }
    return roc_auc(scores, bin);
  };
  if (k == 2) return one_vs_rest(1);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const auto pos = std::count(truth.begin(), truth.end(), c);
    if (pos == 0 || static_cast<std::size_t>(pos) == n) continue;
    sum += one_vs_rest(c);
    ++used;
  }
  if (used == 0) throw ValidationError("multiclass_auc: AUC undefined with a single class present");
  return sum / static_cast<double>(used);
}

struct MetricsReport {
  std::string activation;
  std::size_t fold = 0;
  std::size_t repeat = 0;
  std::size_t n_samples = 0;
  double accuracy = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  double auc = 0.0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// All five columns from predicted probabilities.
inline MetricsReport evaluate(const Tensor& probabilities, std::span<const std::size_t> truth) {
  std::vector<std::size_t> predicted(truth.size());
  const std::size_t k = probabilities.extent(1);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const float* row = probabilities.data().data() + i * k;
    predicted[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  const auto cm = confusion(truth, predicted, k);
  const auto prf = weighted_prf(cm);
  MetricsReport r;
  r.n_samples = truth.size();
  r.accuracy = accuracy(cm);
  r.weighted_precision = prf.precision;
  r.weighted_recall = prf.recall;
  r.weighted_f1 = prf.f1;
  r.auc = multiclass_auc(probabilities, truth);
  return r;
}

}  // namespace alrelu
