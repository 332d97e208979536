#pragma once

// Experiment commands behind the bernnet CLI. Each is a pure function of its
// config, the dataset files and the seed; outputs go under config.output_dir.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bernnet/config.hpp"
#include "bernnet/trainer.hpp"

namespace bernnet {

/// Trains one config and writes its run directory. Prints a final summary line.
TrainResult cmd_train(const ExperimentConfig& config, std::ostream& out, std::ostream* log = nullptr);

struct VariantRun {
  std::string name;
  ExperimentConfig config;
  TrainResult result;
};

/// Trains every sweep variant (base config + patch) into output_dir/<name>.
std::vector<VariantRun> run_variants(const ExperimentConfig& base, std::ostream* log = nullptr);

/// Minimum |σ′| per epoch for the first, middle and last layers, and the
/// final-epoch depth profile, each with the theoretical floor column.
std::vector<VariantRun> cmd_exp1(const ExperimentConfig& config, std::ostream& out, std::ostream* log = nullptr);

/// Final-epoch dead ratio per layer and first-layer MAG per epoch; heatmaps
/// stay in each variant's run directory.
std::vector<VariantRun> cmd_exp2(const ExperimentConfig& config, std::ostream& out, std::ostream* log = nullptr);

struct ScalingRow {
  std::string variant;
  std::string activation;
  int degree = 0;  // 0 for non-Bernstein activations
  std::size_t depth = 0;
  std::string widths;  // hidden widths joined by '-'
  std::size_t parameters = 0;
  double best_train_loss = 0.0;
  double best_val_metric = 0.0;
  int epochs_run = 0;
};

/// Every variant at every sweep depth (or at its own depth when none are listed).
std::vector<ScalingRow> cmd_exp3(const ExperimentConfig& config, std::ostream& out, std::ostream* log = nullptr);

struct ApproxRow {
  std::string target;  // function names joined by '+'
  std::size_t depth = 0;
  int degree = 0;
  std::string model;  // "bernstein" or "relu"
  std::size_t width = 0;
  std::uint64_t seed = 0;
  std::size_t parameters = 0;
  double best_mse = 0.0;
  double best_sup_error = 0.0;  // sup over samples and output components
  double theory_modulus = 0.0;  // ω_f(n^−depth); Bernstein rows only
};

struct ApproxFit {
  double best_mse = 0.0;
  double best_sup_error = 0.0;
};

/// Full-batch Adam on a regression dataset; the best values are taken over
/// the train-mode forwards that precede each step.
ApproxFit fit_full_batch(const Network& net, Parameters& params, const Dataset& data, std::size_t steps, double lr);

/// The modulus of continuity of the target estimated on a dense grid.
double approx_theory_modulus(const SyntheticTarget& target, std::size_t samples, double delta);

std::vector<ApproxRow> cmd_approx(const ExperimentConfig& config, std::ostream& out, std::ostream* log = nullptr);

struct CheckResult {
  std::string module;
  std::string name;
  bool pass = true;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string relation;  // how measured compares with tolerance, e.g. "<=" or ">="
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 1;
  /// Perturbs one backward formula; the gradient check must catch it.
  bool inject_fault = false;
};

std::vector<CheckResult> cmd_verify(const VerifyOptions& options, std::ostream& out);

}  // namespace bernnet
