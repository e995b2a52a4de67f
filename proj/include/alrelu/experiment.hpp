#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "activations.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "nn.hpp"
#include "presets.hpp"
#include "rng.hpp"
#include "util.hpp"

namespace alrelu {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

/// Bad or inconsistent experiment configuration (maps to exit code 2).
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct DatasetSource {
  std::string type = "blobs";  // blobs | stress | csv | pgm
  std::string name;            // row label in table.csv; defaults to type
  std::string path;
  std::string label_column = "label";
  std::vector<std::string> drop_columns;
  std::size_t n_per_class = 100;
  std::size_t n_classes = 2;
  std::size_t dim = 2;
  double separation = 10.0;
  std::size_t n = 200;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetSource&, const DatasetSource&) = default;
};

struct StressSettings {
  std::size_t epochs = 5;
  float bias = -10.0f;
  std::size_t hidden_units = 32;
  std::size_t n = 200;
  std::size_t dim = 8;

  friend bool operator==(const StressSettings&, const StressSettings&) = default;
};

/// JSON-backed description of one comparison experiment. `train.seed` is the
/// base seed for everything derived in the run.
struct ExperimentConfig {
  DatasetSource dataset;
  std::string model = "shallow_dense";
  std::vector<std::string> activations = {"relu", "lrelu", "alrelu"};
  float alpha = ActivationKind::kDefaultAlpha;
  std::size_t k = 5;
  std::size_t repeats = 4;
  TrainConfig train;
  std::string output_dir = "results";
  std::size_t threads = 1;
  StressSettings stress;

  void validate() const {
    if (activations.empty()) throw ConfigError("config field \"activations\": must not be empty");
    for (std::size_t i = 0; i < activations.size(); ++i) {
      const auto& a = activations[i];
      if (a != "relu" && a != "lrelu" && a != "alrelu") {
        throw ConfigError("config field \"activations[" + std::to_string(i) + "]\": unknown activation \"" + a +
                          "\" (expected relu, lrelu or alrelu)");
      }
    }
    if (!(alpha > 0.0f && alpha < 1.0f)) throw ConfigError("config field \"alpha\": must lie in (0, 1)");
    if (k < 2) throw ConfigError("config field \"k\": must be >= 2");
    if (repeats < 1) throw ConfigError("config field \"repeats\": must be >= 1");
    if (model != "shallow_dense" && model != "small_cnn") {
      throw ConfigError("config field \"model\": unknown preset \"" + model + "\" (expected shallow_dense or small_cnn)");
    }
    const auto& t = dataset.type;
    if (t != "blobs" && t != "stress" && t != "csv" && t != "pgm") {
      throw ConfigError("config field \"dataset.type\": unknown source \"" + t + "\" (expected blobs, stress, csv or pgm)");
    }
    if ((t == "csv" || t == "pgm") && dataset.path.empty()) throw ConfigError("config field \"dataset.path\": required for " + t);
    if (t == "pgm" && model != "small_cnn") throw ConfigError("config field \"model\": image data needs small_cnn");
    if (t != "pgm" && model != "shallow_dense") throw ConfigError("config field \"model\": tabular data needs shallow_dense");
    if (stress.epochs == 0) throw ConfigError("config field \"stress.epochs\": must be >= 1");
    if (stress.hidden_units == 0) throw ConfigError("config field \"stress.hidden_units\": must be >= 1");
    try {
      train.validate();
    } catch (const ValidationError& e) {
      throw ConfigError(std::string("config field \"train\": ") + e.what());
    }
  }

  std::vector<ActivationKind> activation_kinds() const {
    std::vector<ActivationKind> out;
    for (const auto& a : activations) out.push_back(parse_activation(a, alpha));
    return out;
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out, const std::string& prefix) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field \"" + prefix + key + "\": wrong type (got " + obj.at(key).dump() + ")");
  }
}

inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> known, const std::string& prefix) {
  if (!obj.is_object()) throw ConfigError("config field \"" + prefix + "\": expected an object");
  for (const auto& item : obj.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; })) {
      throw ConfigError("config field \"" + prefix + item.key() + "\": unknown field");
    }
  }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::read_field;
  ExperimentConfig c;
  detail::reject_unknown(j, {"dataset", "model", "activations", "alpha", "k", "repeats", "train", "seed",
                             "output_dir", "threads", "stress"}, "");
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::reject_unknown(d, {"type", "name", "path", "label_column", "drop_columns", "n_per_class", "n_classes",
                               "dim", "separation", "n", "seed"}, "dataset.");
    read_field(d, "type", c.dataset.type, "dataset.");
    read_field(d, "name", c.dataset.name, "dataset.");
    read_field(d, "path", c.dataset.path, "dataset.");
    read_field(d, "label_column", c.dataset.label_column, "dataset.");
    read_field(d, "drop_columns", c.dataset.drop_columns, "dataset.");
    read_field(d, "n_per_class", c.dataset.n_per_class, "dataset.");
    read_field(d, "n_classes", c.dataset.n_classes, "dataset.");
    read_field(d, "dim", c.dataset.dim, "dataset.");
    read_field(d, "separation", c.dataset.separation, "dataset.");
    read_field(d, "n", c.dataset.n, "dataset.");
    read_field(d, "seed", c.dataset.seed, "dataset.");
  }
  read_field(j, "model", c.model, "");
  read_field(j, "activations", c.activations, "");
  read_field(j, "alpha", c.alpha, "");
  read_field(j, "k", c.k, "");
  read_field(j, "repeats", c.repeats, "");
  read_field(j, "seed", c.train.seed, "");
  read_field(j, "output_dir", c.output_dir, "");
  read_field(j, "threads", c.threads, "");
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown(t, {"epochs", "batch_size", "learning_rate", "optimizer"}, "train.");
    read_field(t, "epochs", c.train.epochs, "train.");
    read_field(t, "batch_size", c.train.batch_size, "train.");
    read_field(t, "learning_rate", c.train.learning_rate, "train.");
    if (t.contains("optimizer")) {
      const auto& o = t.at("optimizer");
      detail::reject_unknown(o, {"type", "beta1", "beta2", "epsilon"}, "train.optimizer.");
      std::string type = "adam";
      read_field(o, "type", type, "train.optimizer.");
      if (type == "sgd") {
        c.train.optimizer = Sgd{};
      } else if (type == "adam") {
        Adam a;
        read_field(o, "beta1", a.beta1, "train.optimizer.");
        read_field(o, "beta2", a.beta2, "train.optimizer.");
        read_field(o, "epsilon", a.epsilon, "train.optimizer.");
        c.train.optimizer = a;
      } else {
        throw ConfigError("config field \"train.optimizer.type\": unknown optimizer \"" + type + "\"");
      }
    }
  }
  if (j.contains("stress")) {
    const auto& s = j.at("stress");
    detail::reject_unknown(s, {"epochs", "bias", "hidden_units", "n", "dim"}, "stress.");
    read_field(s, "epochs", c.stress.epochs, "stress.");
    read_field(s, "bias", c.stress.bias, "stress.");
    read_field(s, "hidden_units", c.stress.hidden_units, "stress.");
    read_field(s, "n", c.stress.n, "stress.");
    read_field(s, "dim", c.stress.dim, "stress.");
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json optimizer;
  if (const auto* a = std::get_if<Adam>(&c.train.optimizer)) {
    optimizer = {{"type", "adam"}, {"beta1", a->beta1}, {"beta2", a->beta2}, {"epsilon", a->epsilon}};
  } else {
    optimizer = {{"type", "sgd"}};
  }
  return {{"dataset",
           {{"type", c.dataset.type},
            {"name", c.dataset.name},
            {"path", c.dataset.path},
            {"label_column", c.dataset.label_column},
            {"drop_columns", c.dataset.drop_columns},
            {"n_per_class", c.dataset.n_per_class},
            {"n_classes", c.dataset.n_classes},
            {"dim", c.dataset.dim},
            {"separation", c.dataset.separation},
            {"n", c.dataset.n},
            {"seed", c.dataset.seed}}},
          {"model", c.model},
          {"activations", c.activations},
          {"alpha", c.alpha},
          {"k", c.k},
          {"repeats", c.repeats},
          {"train",
           {{"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"learning_rate", c.train.learning_rate},
            {"optimizer", optimizer}}},
          {"seed", c.train.seed},
          {"output_dir", c.output_dir},
          {"threads", c.threads},
          {"stress",
           {{"epochs", c.stress.epochs},
            {"bias", c.stress.bias},
            {"hidden_units", c.stress.hidden_units},
            {"n", c.stress.n},
            {"dim", c.stress.dim}}}};
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return config_from_json(j);
}

inline Dataset load_dataset(const DatasetSource& src) {
  if (src.type == "blobs") return make_blobs(src.n_per_class, src.n_classes, src.dim, src.separation, src.seed);
  if (src.type == "stress") return make_dying_relu_stress(src.n, src.dim, src.seed);
  if (src.type == "csv") return load_csv(src.path, src.label_column, CsvOptions{',', src.drop_columns});
  if (src.type == "pgm") return load_pgm_dir(src.path);
  throw ConfigError("unknown dataset type \"" + src.type + "\"");
}

struct RunOptions {
  std::optional<std::string> output_dir;
  bool quiet = false;
};

/// `run`: cross-validated comparison; writes summary.json and table.csv.
inline int cmd_run(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  try {
    const Dataset data = load_dataset(cfg.dataset);
    const auto kinds = cfg.activation_kinds();
    const auto tmpl = presets::by_name(cfg.model, data.sample_shape(), data.n_classes(), kinds.front());
    CvOptions cv;
    cv.dataset_name = cfg.dataset.name.empty() ? cfg.dataset.type : cfg.dataset.name;
    cv.threads = cfg.threads;
    if (!opts.quiet) {
      cv.on_report = [&out](const MetricsReport& r) {
        out << "  " << r.activation << " repeat " << r.repeat << " fold " << r.fold << ": accuracy "
            << std::fixed << std::setprecision(2) << r.accuracy * 100.0 << "%\n";
        out.unsetf(std::ios::floatfield);
      };
    }
    const CvSummary summary = run_cv(data, tmpl, cfg.train, kinds, cfg.k, cfg.repeats, cv);
    const std::filesystem::path dir = opts.output_dir.value_or(cfg.output_dir);
    write_file_atomic(dir / "summary.json", summary_to_json(summary).dump(2) + "\n");
    write_file_atomic(dir / "table.csv", table_csv(summary));
    out << format_table(summary);
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

struct StressSeries {
  std::string activation;
  std::vector<EpochStats> epochs;
};

/// Hostile-initialization protocol: a bias-shifted rectifier MLP trained on
/// the all-negative stress dataset, one series of epoch stats per activation.
inline std::vector<StressSeries> run_stress(const ExperimentConfig& cfg) {
  const Dataset data = make_dying_relu_stress(cfg.stress.n, cfg.stress.dim, cfg.dataset.seed);
  std::vector<StressSeries> out;
  for (const auto& kind : cfg.activation_kinds()) {
    const std::string name(activation_name(kind));
    const std::uint64_t seed = derive_seed(cfg.train.seed, fnv1a(name), 0x737472ULL);
    Model model = build_model(presets::stress_dense(data.n_classes(), cfg.stress.hidden_units, kind),
                              data.sample_shape(), data.n_classes(), seed);
    set_biases(model, cfg.stress.bias);
    TrainConfig tc = cfg.train;
    tc.epochs = cfg.stress.epochs;
    tc.seed = derive_seed(seed, 0x747261696eULL);
    out.push_back({name, fit(model, data, tc)});
  }
  return out;
}

inline std::string stress_csv(const std::vector<StressSeries>& series) {
  std::ostringstream os;
  os << "epoch,activation,dead_units\n";
  std::size_t epochs = 0;
  for (const auto& s : series) epochs = std::max(epochs, s.epochs.size());
  for (std::size_t e = 0; e < epochs; ++e)
    for (const auto& s : series)
      if (e < s.epochs.size()) os << e + 1 << ',' << s.activation << ',' << s.epochs[e].dead_unit_count << '\n';
  return os.str();
}

/// `stress`: writes stress.csv (epoch, activation, dead_units).
inline int cmd_stress(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& out,
                      std::ostream& err) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  try {
    const auto series = run_stress(cfg);
    const std::filesystem::path dir = opts.output_dir.value_or(cfg.output_dir);
    write_file_atomic(dir / "stress.csv", stress_csv(series));
    out << "dead hidden units per epoch (bias " << cfg.stress.bias << ")\n";
    for (const auto& s : series) {
      out << "  " << std::left << std::setw(8) << s.activation;
      for (const auto& e : s.epochs) out << ' ' << e.dead_unit_count;
      out << '\n';
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

using ScalarDerivative = std::function<double(const ActivationKind&, double)>;

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 1000;
  double step = 1e-4;
  double activation_tolerance = 1e-5;
  double model_relative_tolerance = 1e-2;
  double model_absolute_tolerance = 1e-4;
  /// Derivative under test for the scalar checks.
  ScalarDerivative derivative = [](const ActivationKind& k, double x) { return activate_grad(k, x); };
};

struct GradcheckComponent {
  std::string name;
  double max_error = 0.0;  // worst relative error
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = true;
};

/// Worst relative error of `derivative` against a double-precision central
/// difference over `trials` uniform points in [-5, 5] outside the kink zone.
inline GradcheckComponent check_activation(const ActivationKind& kind, const GradcheckOptions& o, Rng& rng) {
  GradcheckComponent c{"activation " + std::string(activation_name(kind))};
  for (std::size_t t = 0; t < o.trials; ++t) {
    double x;
    do {
      x = rng.uniform(-5.0, 5.0);
    } while (std::abs(x) <= 10.0 * o.step);
    const double central = (activate(kind, x + o.step) - activate(kind, x - o.step)) / (2.0 * o.step);
    const double analytic = o.derivative(kind, x);
    const double err = std::abs(central - analytic) / std::max(std::abs(analytic), 1e-12);
    c.max_error = std::max(c.max_error, err);
    c.max_abs_error = std::max(c.max_abs_error, std::abs(central - analytic));
    ++c.checked;
  }
  c.passed = c.max_error <= o.activation_tolerance;
  return c;
}

namespace detail {

// Branch pattern of every piecewise layer: activation signs and max-pool
// winners. A finite difference is only meaningful when it stays constant.
inline std::vector<std::uint32_t> branch_signature(const Model& model, const ForwardCache& cache) {
  std::vector<std::uint32_t> sig;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& lc = cache.layers[i];
    if (std::holds_alternative<layer::Activation>(model.layers[i])) {
      for (float v : lc.input.data()) sig.push_back(v > 0.0f ? 1u : 0u);
    } else if (std::holds_alternative<layer::MaxPool2D>(model.layers[i])) {
      sig.insert(sig.end(), lc.argmax.begin(), lc.argmax.end());
    }
  }
  return sig;
}

}  // namespace detail

/// Compares every parameter gradient of `model` (training mode, fixed
/// dropout masks) against central differences of the batch loss. A
/// parameter passes when its relative error is <= rel_tol or its absolute
/// error is <= abs_tol. Parameters whose perturbation flips an activation
/// branch or a max-pool winner are skipped.
inline GradcheckComponent check_model_gradients(const std::string& name, const Model& model, const Tensor& batch,
                                                const Tensor& labels, double rel_tol, double abs_tol,
                                                float step = 1e-2f) {
  GradcheckComponent c{name};
  Model analytic = model;
  ForwardResult fr = forward(analytic, batch, true);
  const auto sig0 = detail::branch_signature(model, fr.cache);
  backward(analytic, fr.cache, labels);

  auto loss_at = [&](std::size_t li, std::size_t pi, std::size_t e, float value, std::vector<std::uint32_t>& sig) {
    Model probe = model;
    probe.params[li][pi][e] = value;
    ForwardResult r = forward(probe, batch, true);
    sig = detail::branch_signature(probe, r.cache);
    return cross_entropy(r.probabilities, labels);
  };

  for (std::size_t li = 0; li < model.params.size(); ++li)
    for (std::size_t pi = 0; pi < model.params[li].size(); ++pi)
      for (std::size_t e = 0; e < model.params[li][pi].size(); ++e) {
        const float p = model.params[li][pi][e];
        // Central differences at step and step/2, combined by Richardson
        // extrapolation to cancel the O(step^2) term.
        bool crossed = false;
        auto central = [&](float h) {
          const float hi = p + h, lo = p - h;
          std::vector<std::uint32_t> sig_hi, sig_lo;
          const double l_hi = loss_at(li, pi, e, hi, sig_hi);
          const double l_lo = loss_at(li, pi, e, lo, sig_lo);
          crossed = crossed || sig_hi != sig0 || sig_lo != sig0;
          return (l_hi - l_lo) / (static_cast<double>(hi) - static_cast<double>(lo));
        };
        const double coarse = central(step);
        const double fine = central(step / 2);
        if (crossed) {
          ++c.skipped;
          continue;
        }
        const double numeric = (4.0 * fine - coarse) / 3.0;
        const double grad = analytic.grads[li][pi][e];
        const double abs_err = std::abs(numeric - grad);
        const double rel_err = abs_err / std::max({std::abs(numeric), std::abs(grad), 1e-12});
        ++c.checked;
        c.max_error = std::max(c.max_error, rel_err);
        c.max_abs_error = std::max(c.max_abs_error, abs_err);
        if (rel_err > rel_tol && abs_err > abs_tol) c.passed = false;
      }
  return c;
}

/// A <= 500-parameter conv model exercising every layer type, with batch and
/// one-hot labels drawn from `seed`.
struct TinyProblem {
  Model model;
  Tensor batch;
  Tensor labels;
};

inline TinyProblem tiny_cnn_problem(const ActivationKind& kind, std::uint64_t seed) {
  const std::vector<LayerSpec> specs = {
      layer::Conv2D{3, 3}, layer::BatchNorm{},  layer::Activation{kind}, layer::MaxPool2D{2},
      layer::Dropout{0.25f}, layer::GlobalAvgPool{}, layer::Dense{4},    layer::Activation{kind},
      layer::Dense{3},     layer::Softmax{}};
  TinyProblem p{build_model(specs, {6, 6, 2}, 3, seed), Tensor(Shape{4, 6, 6, 2}), Tensor()};
  Rng rng(derive_seed(seed, 0x7079ULL));
  for (auto& v : p.batch.data()) v = static_cast<float>(rng.normal());
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 4; ++i) labels.push_back(static_cast<std::size_t>(rng.below(3)));
  p.labels = one_hot(labels, 3);
  return p;
}

inline TinyProblem tiny_dense_problem(const ActivationKind& kind, std::uint64_t seed) {
  const std::vector<LayerSpec> specs = {layer::Dense{6}, layer::Dropout{0.3f}, layer::BatchNorm{},
                                        layer::Activation{kind}, layer::Dense{5}, layer::Activation{kind},
                                        layer::Dense{2}, layer::Softmax{}};
  TinyProblem p{build_model(specs, {4}, 2, seed), Tensor(Shape{5, 4}), Tensor()};
  Rng rng(derive_seed(seed, 0x7079ULL));
  for (auto& v : p.batch.data()) v = static_cast<float>(rng.normal());
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 5; ++i) labels.push_back(i % 2);
  p.labels = one_hot(labels, 2);
  return p;
}

inline std::vector<GradcheckComponent> run_gradcheck(const GradcheckOptions& o) {
  std::vector<GradcheckComponent> out;
  Rng rng(o.seed);
  const ActivationKind kinds[] = {ActivationKind::relu(), ActivationKind::lrelu(), ActivationKind::alrelu()};
  for (const auto& k : kinds) out.push_back(check_activation(k, o, rng));
  for (const auto& k : kinds) {
    const std::string name(activation_name(k));
    auto cnn = tiny_cnn_problem(k, derive_seed(o.seed, fnv1a(name), 1));
    out.push_back(check_model_gradients("tiny cnn (" + name + ")", cnn.model, cnn.batch, cnn.labels,
                                        o.model_relative_tolerance, o.model_absolute_tolerance));
    auto mlp = tiny_dense_problem(k, derive_seed(o.seed, fnv1a(name), 2));
    out.push_back(check_model_gradients("tiny mlp (" + name + ")", mlp.model, mlp.batch, mlp.labels,
                                        o.model_relative_tolerance, o.model_absolute_tolerance));
  }
  return out;
}

/// `gradcheck`: exit 0 when every component is within tolerance.
inline int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out, std::ostream& err) {
  if (o.trials == 0) {
    err << "error: --trials is 0, nothing to check\n";
    return kExitUsage;
  }
  std::vector<GradcheckComponent> results;
  try {
    results = run_gradcheck(o);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  bool ok = true;
  for (const auto& c : results) {
    out << (c.passed ? "PASS " : "FAIL ") << std::left << std::setw(22) << c.name << " max rel error "
        << std::scientific << std::setprecision(3) << c.max_error << ", max abs error " << c.max_abs_error
        << std::defaultfloat << " (" << c.checked
        << " checked";
    if (c.skipped) out << ", " << c.skipped << " skipped at kinks";
    out << ")\n";
    ok = ok && c.passed;
  }
  if (!ok) {
    err << "gradient check failed for:";
    for (const auto& c : results)
      if (!c.passed) err << ' ' << '"' << c.name << '"';
    err << '\n';
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace alrelu
