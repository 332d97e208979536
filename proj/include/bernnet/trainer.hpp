#pragma once

// The training loop shared by every experiment command.

#include <iosfwd>
#include <string>
#include <vector>

#include "bernnet/config.hpp"
#include "bernnet/data.hpp"
#include "bernnet/diagnostics.hpp"
#include "bernnet/network.hpp"
#include "bernnet/optim.hpp"

namespace bernnet {

/// $BERNNET_DATA_ROOT if set, else the directory configured at build time.
std::string data_root();

struct PreparedData {
  Dataset train;
  Dataset validation;  // the training set itself for synthetic targets
};

/// Loads, splits and z-scores the configured dataset. Normalization
/// statistics come from the training split only.
PreparedData prepare_data(const ExperimentConfig& config, const std::string& root);
PreparedData prepare_data(const ExperimentConfig& config);

/// Hidden layers are Linear → [BatchNorm] → [Clamp] → activation; Bernstein
/// layers always get BatchNorm and a clamp to their interval. The output
/// layer is a plain Linear.
Network build_network(const ModelConfig& model, std::size_t input_width, std::size_t output_width);

/// Lower bound on |σ′| per activation layer (0 for non-Bernstein layers).
std::vector<double> derivative_floors(const Network& net);

MetricDirection metric_direction(TaskKind task) noexcept;

struct TrainResult {
  Network network;
  Parameters parameters;
  std::vector<DiagnosticsRecord> records;  // records[0] is the state before any update
  double best_train_loss = 0.0;
  double best_val_metric = 0.0;
  int epochs_run = 0;
  bool early_stopped = false;
};

struct TrainOptions {
  std::ostream* log = nullptr;  // one line per epoch when set
};

/// Throws NumericError naming the epoch and batch if the loss stops being finite.
TrainResult train_model(const ExperimentConfig& config, const PreparedData& data, const TrainOptions& options = {});

/// metrics.csv, heatmap.csv, depth_profile.csv and config.json, plus the
/// checkpoint and SVG plots when enabled.
void write_run_outputs(const ExperimentConfig& config, const TrainResult& result, const std::string& dir);

}  // namespace bernnet
