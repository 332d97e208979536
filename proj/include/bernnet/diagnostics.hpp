#pragma once

// Gradient-health statistics and their CSV exports.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bernnet/network.hpp"

namespace bernnet {

struct DeadNeuronPolicy {
  double threshold = 1e-7;
};

/// σ′ at the input of activation `activation_index` for every cached sample
/// (batch rows × width). Bernstein inputs are post-clamp.
Matrix activation_derivatives(const Network& net, const ForwardCache& cache, std::size_t activation_index);

/// Per activation layer: min over samples and neurons of |σ′|.
std::vector<double> min_abs_derivative(const Network& net, const ForwardCache& cache);
/// Per activation layer: fraction of neurons whose batch-mean |σ′| is below the threshold.
std::vector<double> dead_neuron_ratio(const Network& net, const ForwardCache& cache,
                                      const DeadNeuronPolicy& policy = {});
/// Per activation layer: fraction of clamp inputs strictly outside the clamp
/// interval (0 when no clamp feeds the activation).
std::vector<double> clamp_saturation(const Network& net, const ForwardCache& cache);

struct LayerBatchStats {
  double min_abs_derivative = 0.0;
  double dead_ratio = 0.0;
  double clamp_saturation = 0.0;
};

/// The three statistics above in one pass over each layer.
std::vector<LayerBatchStats> layer_batch_stats(const Network& net, const ForwardCache& cache,
                                               const DeadNeuronPolicy& policy = {});

/// Running mean of |∂loss/∂(first activation output)| over every sample and neuron.
class MagAccumulator {
 public:
  void add(const Matrix& grad);
  double value() const noexcept;
  std::size_t count() const noexcept { return count_; }

 private:
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

/// Mann–Whitney AUC with midranks for ties. Needs both classes present.
double compute_auc(std::span<const double> scores, std::span<const std::size_t> labels);
/// Row argmax against labels; a single output column is read as a logit (> 0 ⇒ class 1).
double compute_accuracy(const Matrix& logits, std::span<const std::size_t> labels);

struct DiagnosticsRecord {
  int epoch = 0;
  std::vector<double> min_abs_derivative;  // per activation layer
  std::vector<double> dead_ratio;
  std::vector<double> clamp_saturation;
  double mag = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
  bool bounds_hold = true;
};

/// Folds per-batch statistics into an epoch record: min |σ′| is the epoch
/// minimum, dead ratio and clamp saturation are means over batches.
class EpochAccumulator {
 public:
  explicit EpochAccumulator(std::size_t layers);
  void add(const std::vector<LayerBatchStats>& stats);
  std::size_t batches() const noexcept { return batches_; }
  void write_to(DiagnosticsRecord& record) const;

 private:
  std::vector<double> min_;
  std::vector<double> dead_sum_;
  std::vector<double> sat_sum_;
  std::size_t batches_ = 0;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// Every exported CSV starts with "# config-fingerprint: <hex>" and a header row.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& fingerprint, const std::vector<std::string>& header);
  CsvWriter& cell(double v);
  CsvWriter& cell(long long v);
  CsvWriter& cell(const std::string& v);
  void end_row();
  void close();

 private:
  std::string path_;
  std::string buffer_;
  std::size_t columns_;
  std::size_t in_row_ = 0;
};

struct CsvTable {
  std::vector<std::string> comments;  // without the leading '#'
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
};
CsvTable read_csv(const std::string& path);

void export_metrics_csv(const std::vector<DiagnosticsRecord>& records, const std::string& path,
                        const std::string& fingerprint);
/// epoch, layer_index, dead_ratio, min_abs_derivative.
void export_heatmap_csv(const std::vector<DiagnosticsRecord>& records, const std::string& path,
                        const std::string& fingerprint);
/// One row per layer of `record`, with the theoretical floor (0 where none applies).
void export_depth_profile_csv(const DiagnosticsRecord& record, const std::vector<double>& floors,
                              const std::string& path, const std::string& fingerprint);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};
/// Self-contained SVG line chart; log_y plots log10(max(y, 1e-300)).
void write_svg_plot(const std::string& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<PlotSeries>& series, bool log_y = false);

}  // namespace bernnet
