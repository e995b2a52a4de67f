#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "activations.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "metrics.hpp"
#include "nn.hpp"
#include "rng.hpp"

namespace alrelu {

/// Per-sample fold assignment for stratified k-fold.
struct FoldPlan {
  std::size_t k = 0;
  std::vector<std::size_t> assignments;
  std::uint64_t seed = 0;

  std::vector<std::size_t> test_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] == fold) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> train_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] != fold) out.push_back(i);
    return out;
  }

  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

/// Shuffles each class with a seed-derived stream, then deals its members
/// round-robin over the folds. The dealing position carries over from one
/// class to the next, so both per-class and total fold sizes differ by at
/// most one.
inline FoldPlan stratified_kfold(std::span<const std::size_t> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("stratified_kfold: k must be >= 2");
  const std::size_t n_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> members(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (!members[c].empty() && members[c].size() < k) {
      throw ValidationError("stratified_kfold: class " + std::to_string(c) + " has " +
                            std::to_string(members[c].size()) + " samples, fewer than k = " + std::to_string(k));
    }
  }
  if (labels.empty()) throw ValidationError("stratified_kfold: no samples");

  FoldPlan plan{k, std::vector<std::size_t>(labels.size(), 0), seed};
  Rng rng(seed);
  std::size_t next = 0;
  for (auto& m : members) {
    rng.shuffle(std::span<std::size_t>(m));
    for (std::size_t idx : m) {
      plan.assignments[idx] = next;
      next = (next + 1) % k;
    }
  }
  return plan;
}

struct FoldRun {
  MetricsReport report;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1)
};

struct ActivationSummary {
  std::string activation;
  MetricStats accuracy, weighted_precision, weighted_recall, weighted_f1, auc;
};

struct CvSummary {
  std::string dataset;
  std::size_t k = 0;
  std::size_t repeats = 0;
  std::uint64_t base_seed = 0;
  std::vector<FoldRun> runs;
  std::vector<ActivationSummary> per_activation;
};

struct CvOptions {
  std::string dataset_name = "dataset";
  /// Worker threads; 0 means hardware concurrency.
  std::size_t threads = 1;
  /// Called after each run finishes (from worker threads, serialized).
  std::function<void(const MetricsReport&)> on_report;
};

/// run seed = derive_seed(base, fnv1a(activation), repeat, fold).
inline std::uint64_t run_seed(std::uint64_t base, std::string_view activation, std::size_t repeat, std::size_t fold) {
  return derive_seed(base, fnv1a(activation), repeat, fold);
}

/// Fold assignment seed for one repeat; shared by all activations so they
/// see identical splits.
inline std::uint64_t repeat_fold_seed(std::uint64_t base, std::size_t repeat) {
  return derive_seed(base, 0x666f6c64ULL, repeat);
}

inline MetricStats metric_stats(const std::vector<double>& values) {
  MetricStats s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

inline ActivationSummary summarize(const std::string& activation, const std::vector<FoldRun>& runs) {
  std::vector<double> acc, prec, rec, f1, auc;
  for (const auto& r : runs) {
    if (r.report.activation != activation) continue;
    acc.push_back(r.report.accuracy);
    prec.push_back(r.report.weighted_precision);
    rec.push_back(r.report.weighted_recall);
    f1.push_back(r.report.weighted_f1);
    auc.push_back(r.report.auc);
  }
  return {activation, metric_stats(acc), metric_stats(prec), metric_stats(rec), metric_stats(f1), metric_stats(auc)};
}

/// Repeated stratified k-fold over every activation. Each (activation,
/// repeat, fold) trains a fresh model from `model_template` with every
/// Activation layer set to that activation, seeded from run_seed().
/// Results are ordered activation-major, then repeat, then fold, whatever
/// the thread count.
inline CvSummary run_cv(const Dataset& data, const std::vector<LayerSpec>& model_template, const TrainConfig& config,
                        const std::vector<ActivationKind>& activations, std::size_t k, std::size_t repeats,
                        const CvOptions& options = {}) {
  data.validate();
  config.validate();
  if (activations.empty()) throw ValidationError("run_cv: no activations given");
  if (repeats == 0) throw ValidationError("run_cv: repeats must be >= 1");

  std::vector<FoldPlan> plans;
  for (std::size_t r = 0; r < repeats; ++r) plans.push_back(stratified_kfold(data.labels, k, repeat_fold_seed(config.seed, r)));

  struct Job {
    std::size_t activation, repeat, fold;
  };
  std::vector<Job> jobs;
  for (std::size_t a = 0; a < activations.size(); ++a)
    for (std::size_t r = 0; r < repeats; ++r)
      for (std::size_t f = 0; f < k; ++f) jobs.push_back({a, r, f});

  std::vector<FoldRun> runs(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::mutex report_mutex;

  auto execute = [&](std::size_t j) {
    const Job& job = jobs[j];
    const ActivationKind& kind = activations[job.activation];
    const std::string name(activation_name(kind));
    FoldRun run;
    run.train_indices = plans[job.repeat].train_indices(job.fold);
    run.test_indices = plans[job.repeat].test_indices(job.fold);
    const Dataset train = data.subset(run.train_indices);
    const Dataset test = data.subset(run.test_indices);

    const std::uint64_t seed = run_seed(config.seed, name, job.repeat, job.fold);
    Model model = build_model(with_activation(model_template, kind), data.sample_shape(), data.n_classes(), seed);
    TrainConfig run_config = config;
    run_config.seed = derive_seed(seed, 0x747261696eULL);
    fit(model, train, run_config);

    run.report = evaluate(predict_proba(model, test.features), test.labels);
    run.report.activation = name;
    run.report.repeat = job.repeat;
    run.report.fold = job.fold;
    if (options.on_report) {
      std::lock_guard lock(report_mutex);
      options.on_report(run.report);
    }
    runs[j] = std::move(run);
  };

  std::size_t threads = options.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : options.threads;
  threads = std::min(threads, jobs.size());
  if (threads <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) execute(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
          try {
            execute(j);
          } catch (...) {
            errors[j] = std::current_exception();
          }
        }
      });
    }
    pool.clear();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  CvSummary summary{options.dataset_name, k, repeats, config.seed, std::move(runs), {}};
  for (const auto& kind : activations) summary.per_activation.push_back(summarize(std::string(activation_name(kind)), summary.runs));
  return summary;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  return {{"activation", r.activation}, {"fold", r.fold},
          {"repeat", r.repeat},         {"n_samples", r.n_samples},
          {"accuracy", r.accuracy},     {"weighted_precision", r.weighted_precision},
          {"weighted_recall", r.weighted_recall}, {"weighted_f1", r.weighted_f1},
          {"auc", r.auc}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.activation = j.at("activation").get<std::string>();
  r.fold = j.at("fold").get<std::size_t>();
  r.repeat = j.at("repeat").get<std::size_t>();
  r.n_samples = j.at("n_samples").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.weighted_precision = j.at("weighted_precision").get<double>();
  r.weighted_recall = j.at("weighted_recall").get<double>();
  r.weighted_f1 = j.at("weighted_f1").get<double>();
  r.auc = j.at("auc").get<double>();
  return r;
}

inline nlohmann::json summary_to_json(const CvSummary& s) {
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& run : s.runs) reports.push_back(report_to_json(run.report));
  auto stats = [](const MetricStats& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.stddev}}; };
  nlohmann::json agg = nlohmann::json::array();
  for (const auto& a : s.per_activation) {
    agg.push_back({{"activation", a.activation},
                   {"accuracy", stats(a.accuracy)},
                   {"weighted_precision", stats(a.weighted_precision)},
                   {"weighted_recall", stats(a.weighted_recall)},
                   {"weighted_f1", stats(a.weighted_f1)},
                   {"auc", stats(a.auc)}});
  }
  return {{"format", 1},       {"dataset", s.dataset}, {"k", s.k},
          {"repeats", s.repeats}, {"base_seed", s.base_seed}, {"reports", std::move(reports)},
          {"summary", std::move(agg)}};
}

namespace detail {

struct MetricColumn {
  const char* label;
  MetricStats ActivationSummary::*field;
};

// Fixed row order of the comparison table.
inline constexpr MetricColumn kTableRows[] = {
    {"Weighted Precision", &ActivationSummary::weighted_precision},
    {"Accuracy", &ActivationSummary::accuracy},
    {"Weighted Recall", &ActivationSummary::weighted_recall},
    {"AUC", &ActivationSummary::auc},
    {"Weighted F1", &ActivationSummary::weighted_f1},
};

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
  return buf;
}

}  // namespace detail

/// "dataset,metric,<activation...>" then one row per metric, mean values
/// as percentages with two decimals.
inline std::string table_csv(const CvSummary& s) {
  std::ostringstream os;
  os << "dataset,metric";
  for (const auto& a : s.per_activation) os << ',' << a.activation;
  os << '\n';
  for (const auto& row : detail::kTableRows) {
    os << s.dataset << ',' << row.label;
    for (const auto& a : s.per_activation) os << ',' << detail::percent((a.*row.field).mean);
    os << '\n';
  }
  return os.str();
}

/// Human-readable version of table_csv with mean +/- std.
inline std::string format_table(const CvSummary& s) {
  std::ostringstream os;
  os << s.dataset << " (" << s.k << "-fold x " << s.repeats << ")\n";
  os << std::left << std::setw(20) << "metric";
  for (const auto& a : s.per_activation) os << std::right << std::setw(18) << a.activation;
  os << '\n';
  for (const auto& row : detail::kTableRows) {
    os << std::left << std::setw(20) << row.label;
    for (const auto& a : s.per_activation) {
      const auto& m = a.*row.field;
      os << std::right << std::setw(18) << (detail::percent(m.mean) + "% +/- " + detail::percent(m.stddev));
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace alrelu
