#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "alrelu/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ReLU / Leaky ReLU / ALReLU comparison runner"};
  app.require_subcommand(1);

  std::string output_dir;
  bool quiet = false;
  app.add_option("--output-dir", output_dir, "Override the config's output directory");
  app.add_flag("--quiet", quiet, "Suppress per-fold progress lines");

  std::string run_config;
  auto* run = app.add_subcommand("run", "Repeated stratified k-fold comparison of activations");
  run->add_option("config", run_config, "Experiment config (JSON)")->required();
  run->add_option("--output-dir", output_dir, "Override the config's output directory");
  run->add_flag("--quiet", quiet, "Suppress per-fold progress lines");

  alrelu::GradcheckOptions grad;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of activations and backprop");
  gradcheck->add_option("--seed", grad.seed, "Random seed");
  gradcheck->add_option("--trials", grad.trials, "Random points per activation");

  std::string stress_config;
  auto* stress = app.add_subcommand("stress", "Dead-unit counts under hostile bias initialization");
  stress->add_option("config", stress_config, "Experiment config (JSON)")->required();
  stress->add_option("--output-dir", output_dir, "Override the config's output directory");
  stress->add_flag("--quiet", quiet, "Suppress progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? alrelu::kExitOk : alrelu::kExitUsage;
  }

  alrelu::RunOptions opts;
  if (!output_dir.empty()) opts.output_dir = output_dir;
  opts.quiet = quiet;

  if (*run) return alrelu::cmd_run(run_config, opts, std::cout, std::cerr);
  if (*stress) return alrelu::cmd_stress(stress_config, opts, std::cout, std::cerr);
  if (*gradcheck) {
#ifdef ALRELU_MUTANT_FLIP_ALRELU_SLOPE
    grad.derivative = [](const alrelu::ActivationKind& k, double x) {
      if (k.variant() == alrelu::Rectifier::ALReLU && x <= 0.0) return static_cast<double>(k.alpha());
      return alrelu::activate_grad(k, x);
    };
#endif
    return alrelu::cmd_gradcheck(grad, std::cout, std::cerr);
  }
  return alrelu::kExitUsage;
}
