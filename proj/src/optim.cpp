#include "bernnet/optim.hpp"

#include <algorithm>
#include <cmath>

#include "bernnet/error.hpp"

namespace bernnet {

AdamW::AdamW(const Parameters& params, const AdamWConfig& config) : config_(config), lr_(config.lr) {
  if (!(config.lr > 0.0)) throw ConfigError("adamw: lr must be > 0");
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0)) {
    throw ConfigError("adamw: betas must lie in [0, 1)");
  }
  if (!(config.weight_decay >= 0.0)) throw ConfigError("adamw: weight decay must be >= 0");
  for (const auto& t : params.tensors) {
    m_.emplace_back(t.value.rows(), t.value.cols());
    v_.emplace_back(t.value.rows(), t.value.cols());
  }
}

bool AdamW::decays(ParamRole role) const noexcept {
  switch (role) {
    case ParamRole::weight: return true;
    case ParamRole::bn_gamma:
    case ParamRole::bn_beta: return config_.decay_bn_affine;
    case ParamRole::bern_c0:
    case ParamRole::bern_rho: return config_.decay_bernstein;
    default: return false;
  }
}

void AdamW::step(Parameters& params, const std::vector<Matrix>& grads, int epoch) {
  if (grads.size() != params.tensors.size() || m_.size() != params.tensors.size()) {
    throw DimensionError("adamw: gradient list does not match parameters");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const bool decay_on = config_.weight_decay > 0.0 && epoch >= config_.decay_start_epoch;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& tensor = params.tensors[i];
    if (!is_trainable(tensor.role)) continue;
    const Matrix& g = grads[i];
    if (g.rows() != tensor.value.rows() || g.cols() != tensor.value.cols()) {
      throw DimensionError("adamw: gradient shape mismatch for " + tensor.name);
    }
    const double shrink = decay_on && decays(tensor.role) ? 1.0 - lr_ * config_.weight_decay : 1.0;
    auto p = tensor.value.values();
    auto gv = g.values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * gv[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * gv[k] * gv[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] = p[k] * shrink - lr_ * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
  params.touch();
}

bool improves(double metric, double best, double min_delta, MetricDirection direction) noexcept {
  const double gain = direction == MetricDirection::maximize ? metric - best : best - metric;
  return gain > 0.0 && gain >= min_delta;
}

Scheduler::Scheduler(double base_lr, ScheduleSpec spec, double min_lr)
    : base_lr_(base_lr), spec_(spec), min_lr_(min_lr), lr_(base_lr) {
  if (!(base_lr > 0.0)) throw ConfigError("scheduler: base lr must be > 0");
  if (const auto* e = std::get_if<ExponentialDecay>(&spec_)) {
    if (!(e->gamma > 0.0 && e->gamma <= 1.0)) throw ConfigError("scheduler: gamma must lie in (0, 1]");
  }
  if (const auto* p = std::get_if<ReduceOnPlateau>(&spec_)) {
    if (!(p->factor > 0.0 && p->factor < 1.0)) throw ConfigError("scheduler: factor must lie in (0, 1)");
    if (p->patience < 0) throw ConfigError("scheduler: patience must be >= 0");
  }
}

double Scheduler::step(int epoch, double metric) {
  if (!std::isfinite(metric)) throw NumericError("scheduler: non-finite metric");
  if (const auto* e = std::get_if<ExponentialDecay>(&spec_)) {
    const int exponent = std::max(0, epoch + 1 - e->start_epoch);
    lr_ = std::max(min_lr_, std::min(lr_, base_lr_ * std::pow(e->gamma, exponent)));
  } else if (const auto* p = std::get_if<ReduceOnPlateau>(&spec_)) {
    if (!has_best_ || improves(metric, best_, p->min_delta, p->direction)) {
      has_best_ = true;
      best_ = metric;
      bad_epochs_ = 0;
    } else if (++bad_epochs_ > p->patience) {
      lr_ = std::max(min_lr_, lr_ * p->factor);
      bad_epochs_ = 0;
    }
  }
  return lr_;
}

EarlyStopping::EarlyStopping(int patience, double min_delta, MetricDirection direction)
    : patience_(patience), min_delta_(min_delta), direction_(direction) {
  if (patience < 1) throw ConfigError("early stopping: patience must be >= 1");
  if (!(min_delta >= 0.0)) throw ConfigError("early stopping: min_delta must be >= 0");
}

bool EarlyStopping::update(double metric) {
  if (!std::isfinite(metric)) throw NumericError("early stopping: non-finite metric");
  if (!has_best_ || improves(metric, best_, min_delta_, direction_)) {
    has_best_ = true;
    best_ = metric;
    since_ = 0;
  } else {
    ++since_;
  }
  return since_ >= patience_;
}

}  // namespace bernnet
