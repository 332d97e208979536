#pragma once

// Experiment configuration: a strict JSON schema with per-dataset defaults.
//
// Loading merges the user's JSON over the defaults of its dataset kind and
// rejects unknown keys. to_json() writes every field, so a loaded config
// written back out and re-read compares equal.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "bernnet/bernstein.hpp"
#include "bernnet/data.hpp"

namespace bernnet {

struct DatasetConfig {
  std::string kind = "mnist";  // mnist | higgs_csv | synthetic
  std::string path;  // mnist directory or HIGGS file; relative paths resolve against the data root
  std::size_t max_rows = 0;  // rows read from the HIGGS file (0 = all)
  std::size_t train_rows = 0;  // cap on training rows after splitting (0 = all)
  std::size_t val_rows = 0;  // cap on validation rows (0 = all)
  double train_fraction = 0.8;  // HIGGS only; MNIST keeps its file split
  std::uint64_t split_seed = 1;
  SyntheticTarget target;

  bool operator==(const DatasetConfig&) const = default;
};

struct ModelConfig {
  std::string activation = "bernstein";  // relu | leaky_relu | selu | gelu | bernstein
  std::size_t depth = 50;
  std::size_t width = 100;
  std::vector<std::size_t> hidden;  // explicit hidden widths; overrides depth × width when non-empty
  bool batch_norm = true;  // always on for Bernstein
  bool residual = false;
  double leaky_slope = 0.01;
  BernsteinSpec bernstein{};
  std::string sharing = "per_neuron";
  std::string init = "paper";
  bool clamp_straight_through = false;

  bool operator==(const ModelConfig&) const = default;
};

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int decay_start_epoch = 1;
  bool decay_bernstein = false;
  bool decay_bn_affine = false;

  bool operator==(const OptimizerConfig&) const = default;
};

struct SchedulerConfig {
  std::string kind = "none";  // none | exponential | plateau
  double gamma = 0.95;
  int start_epoch = 5;
  double factor = 0.5;
  int patience = 5;
  double min_delta = 0.0;
  double min_lr = 1e-6;

  bool operator==(const SchedulerConfig&) const = default;
};

struct EarlyStopConfig {
  bool enabled = false;
  int patience = 15;
  double min_delta = 1e-3;

  bool operator==(const EarlyStopConfig&) const = default;
};

struct TrainingConfig {
  int epochs = 100;
  std::size_t batch_size = 64;  // 0 = full batch

  bool operator==(const TrainingConfig&) const = default;
};

struct DiagnosticsConfig {
  std::size_t stride = 1;  // statistics on every stride-th batch
  double dead_threshold = 1e-7;
  bool check_bounds = true;
  std::size_t init_batches = 16;  // batches in the epoch-0 pass
  bool plots = false;
  bool checkpoint = true;

  bool operator==(const DiagnosticsConfig&) const = default;
};

struct SweepVariant {
  std::string name;
  nlohmann::json patch = nlohmann::json::object();  // merge patch over the base config

  bool operator==(const SweepVariant&) const = default;
};

struct SweepConfig {
  std::vector<SweepVariant> variants;
  std::vector<std::size_t> depths;  // exp3: every variant at every depth

  bool operator==(const SweepConfig&) const = default;
};

struct ApproxConfig {
  std::vector<std::vector<std::string>> targets{{"sin_4"}};
  std::vector<std::size_t> depths{1, 2, 3};
  std::vector<int> degrees{5};
  std::size_t width = 16;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t steps = 3000;
  double lr = 1e-2;
  std::size_t samples = 256;
  std::size_t theory_samples = 20001;
  bool relu_baseline = true;

  bool operator==(const ApproxConfig&) const = default;
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 1;
  std::string output_dir = "runs/run";
  DatasetConfig dataset;
  ModelConfig model;
  OptimizerConfig optimizer;
  SchedulerConfig scheduler;
  EarlyStopConfig early_stop;
  TrainingConfig training;
  DiagnosticsConfig diagnostics;
  SweepConfig sweep;
  ApproxConfig approx;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Protocol defaults for "mnist", "higgs_csv" or "synthetic".
ExperimentConfig default_config(const std::string& dataset_kind);

nlohmann::json to_json(const ExperimentConfig& config);
/// Defaults of the dataset kind named in j (mnist when absent), overridden by j.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& config, const std::string& path);

/// Applies a merge patch and re-validates.
ExperimentConfig apply_patch(const ExperimentConfig& base, const nlohmann::json& patch);

/// Throws ConfigError on inconsistent settings.
void validate(const ExperimentConfig& config);

/// FNV-1a 64 over the canonical JSON, output_dir excluded; 16 hex digits.
std::string config_fingerprint(const ExperimentConfig& config);

}  // namespace bernnet
