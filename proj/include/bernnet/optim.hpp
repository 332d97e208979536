#pragma once

// AdamW, learning-rate schedules and early stopping.
//
// Epochs are 1-based. The scheduler and early-stop objects are fed the
// validation metric once per completed epoch and are pure state machines over
// that history.

#include <cstdint>
#include <variant>
#include <vector>

#include "bernnet/network.hpp"

namespace bernnet {

enum class MetricDirection { maximize, minimize };

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int decay_start_epoch = 1;
  bool decay_bernstein = false;  // c0 and rho
  bool decay_bn_affine = false;  // gamma and beta
};

class AdamW {
 public:
  AdamW(const Parameters& params, const AdamWConfig& config);

  /// One update of every trainable tensor; grads parallel params.tensors.
  void step(Parameters& params, const std::vector<Matrix>& grads, int epoch);

  double lr() const noexcept { return lr_; }
  void set_lr(double lr) noexcept { lr_ = lr; }
  std::uint64_t step_count() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return config_; }
  bool decays(ParamRole role) const noexcept;

 private:
  AdamWConfig config_;
  double lr_;
  std::uint64_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

struct NoSchedule {};

/// lr(e) = lr0 · gamma^max(0, e − start_epoch) for the epoch e being trained.
struct ExponentialDecay {
  double gamma = 0.95;
  int start_epoch = 5;
};

struct ReduceOnPlateau {
  MetricDirection direction = MetricDirection::maximize;
  double factor = 0.5;
  int patience = 5;
  double min_delta = 0.0;
};

using ScheduleSpec = std::variant<NoSchedule, ExponentialDecay, ReduceOnPlateau>;

class Scheduler {
 public:
  Scheduler(double base_lr, ScheduleSpec spec, double min_lr = 1e-6);

  /// Feed the metric of completed epoch `epoch`; returns the lr for epoch + 1.
  double step(int epoch, double metric);
  double lr() const noexcept { return lr_; }

 private:
  double base_lr_;
  ScheduleSpec spec_;
  double min_lr_;
  double lr_;
  bool has_best_ = false;
  double best_ = 0.0;
  int bad_epochs_ = 0;
};

class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta, MetricDirection direction);

  /// True once `patience` consecutive epochs failed to improve on the best by min_delta.
  bool update(double metric);

  bool has_best() const noexcept { return has_best_; }
  double best() const noexcept { return best_; }
  int epochs_since_improvement() const noexcept { return since_; }

 private:
  int patience_;
  double min_delta_;
  MetricDirection direction_;
  bool has_best_ = false;
  double best_ = 0.0;
  int since_ = 0;
};

/// metric beats best strictly, and by at least min_delta, in the given direction.
bool improves(double metric, double best, double min_delta, MetricDirection direction) noexcept;

}  // namespace bernnet
