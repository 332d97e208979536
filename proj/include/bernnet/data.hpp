#pragma once

// Dataset ingestion, splits, normalization, batching and synthetic targets.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bernnet/numcore.hpp"
#include "bernnet/rng.hpp"

namespace bernnet {

enum class TaskKind { multiclass, binary, regression };

struct Dataset {
  TaskKind task = TaskKind::regression;
  Matrix features;
  std::vector<std::size_t> labels;  // multiclass and binary tasks
  Matrix targets;  // regression tasks, one column per output
  std::size_t num_classes = 0;
  std::string split = "all";

  std::size_t size() const noexcept { return features.rows(); }
  /// Columns of the network output this task needs.
  std::size_t output_width() const noexcept;
};

/// Whole file contents; gzip streams are inflated, plain files pass through.
std::vector<unsigned char> read_file_bytes(const std::string& path);

Dataset load_mnist(const std::string& images_path, const std::string& labels_path);

/// Label first, then 28 features per line; no header. Reads the first
/// max_rows rows in file order when given.
Dataset load_higgs_csv(const std::string& path, std::optional<std::size_t> max_rows = std::nullopt);

Dataset subset(const Dataset& d, std::span<const std::size_t> rows);
/// First n rows in order (all of them if n ≥ size).
Dataset take_first(const Dataset& d, std::size_t n);

/// Shuffled partition; the first part holds round(fraction · N) rows.
std::pair<Dataset, Dataset> split(const Dataset& d, double fraction, std::uint64_t seed);
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                            std::uint64_t seed);

/// Per-feature z-scoring with population variance floored at var_floor.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const Matrix& x, double var_floor = 1e-8);
  Matrix apply(const Matrix& x) const;
};

struct Batch {
  Matrix x;
  std::vector<std::size_t> labels;
  Matrix targets;
  std::vector<std::size_t> rows;  // source row indices
};

/// Visits every row once per epoch; the order is a pure function of (seed, epoch).
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool shuffle = true);

  void start_epoch(int epoch);
  bool next(Batch& out);
  std::size_t batches_per_epoch() const noexcept;

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

Batch make_batch(const Dataset& d, std::span<const std::size_t> rows);

/// Names: "linear" (x), "sin_k" (sin 2πkx), "cos_k" (cos 2πkx), "const" (1).
double target_function(const std::string& name, double x);

struct SyntheticTarget {
  std::vector<std::string> functions{"sin_1"};  // one output column each
  double lower = 0.0;
  double upper = 1.0;
  std::size_t samples = 256;
  double noise = 0.0;
  bool random_x = false;  // uniform-random abscissae instead of an even grid

  bool operator==(const SyntheticTarget&) const = default;
};

Dataset synth_regression(const SyntheticTarget& target, std::uint64_t seed);

/// sup |f(x) − f(y)| over sample pairs with |x − y| ≤ delta; the sup also runs
/// over output columns.
double modulus_estimate(std::span<const double> x, const Matrix& y, double delta);

}  // namespace bernnet
