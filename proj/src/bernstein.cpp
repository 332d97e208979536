#include "bernnet/bernstein.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bernnet/error.hpp"

namespace bernnet {

void BernsteinSpec::validate() const {
  if (degree < 1) throw DomainError("bernstein: degree must be >= 1, got " + std::to_string(degree));
  if (!(upper > lower)) {
    throw DomainError("bernstein: interval upper bound must exceed lower bound");
  }
  if (!(delta > 0.0)) throw DomainError("bernstein: delta must be > 0");
  if (!(delta < 1.0 / degree)) {
    throw DomainError("bernstein: delta must be < 1/n (" + std::to_string(1.0 / degree) + ")");
  }
}

std::string_view to_string(InitMode mode) noexcept {
  return mode == InitMode::paper ? "paper" : "raw_identity";
}

InitMode init_mode_from_string(std::string_view name) {
  if (name == "paper") return InitMode::paper;
  if (name == "raw_identity") return InitMode::raw_identity;
  throw ParseError("unknown Bernstein init mode '" + std::string(name) + "'");
}

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw DomainError("softplus_inverse: argument must be > 0");
  return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double normalize_input(const BernsteinSpec& spec, double x) {
  if (!(x >= spec.lower && x <= spec.upper)) {
    throw DomainError("bernstein: input " + std::to_string(x) + " outside [" +
                      std::to_string(spec.lower) + ", " + std::to_string(spec.upper) + "]");
  }
  if (x == spec.upper) return 1.0;
  return (x - spec.lower) / spec.width();
}

void basis_row(int degree, double t, std::span<double> out) noexcept {
  const double s = 1.0 - t;
  out[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    out[j] = t * out[j - 1];
    for (int k = j - 1; k >= 1; --k) out[k] = s * out[k] + t * out[k - 1];
    out[0] *= s;
  }
}

void basis_rows(int degree, double t, std::span<double> lower_row, std::span<double> row) noexcept {
  basis_row(degree - 1, t, lower_row);
  const double s = 1.0 - t;
  row[degree] = t * lower_row[degree - 1];
  for (int k = degree - 1; k >= 1; --k) row[k] = s * lower_row[k] + t * lower_row[k - 1];
  row[0] = s * lower_row[0];
}

std::vector<double> basis_eval_all(const BernsteinSpec& spec, double x) {
  const double t = normalize_input(spec, x);
  std::vector<double> out(static_cast<std::size_t>(spec.degree) + 1);
  basis_row(spec.degree, t, out);
  return out;
}

namespace {

void require_length(std::span<const double> c, const BernsteinSpec& spec) {
  if (c.size() != static_cast<std::size_t>(spec.degree) + 1) {
    throw DimensionError("bernstein: expected " + std::to_string(spec.degree + 1) +
                         " coefficients, got " + std::to_string(c.size()));
  }
}

}  // namespace

double poly_eval(std::span<const double> c, const BernsteinSpec& spec, double x) {
  require_length(c, spec);
  const auto b = basis_eval_all(spec, x);
  double y = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) y += c[k] * b[k];
  return y;
}

double poly_derivative(std::span<const double> c, const BernsteinSpec& spec, double x) {
  require_length(c, spec);
  const double t = normalize_input(spec, x);
  const int n = spec.degree;
  std::vector<double> lower(static_cast<std::size_t>(n));
  basis_row(n - 1, t, lower);
  double acc = 0.0;
  for (int k = 0; k < n; ++k) acc += (c[k + 1] - c[k]) * lower[k];
  return static_cast<double>(n) * acc / spec.width();
}

void reconstruct_coefficients_into(double c0, std::span<const double> rho, double delta,
                                   std::span<double> out) noexcept {
  out[0] = c0;
  for (std::size_t k = 1; k <= rho.size(); ++k) {
    const double prev = out[k - 1];
    double next = prev + (softplus(rho[k - 1]) + delta);
    while (next - prev < delta) next = std::nextafter(next, std::numeric_limits<double>::infinity());
    out[k] = next;
  }
}

std::vector<double> reconstruct_coefficients(const ConstrainedCoefficients& cc, double delta) {
  std::vector<double> c(cc.rho.size() + 1);
  reconstruct_coefficients_into(cc.c0, cc.rho, delta, c);
  return c;
}

ConstrainedCoefficients init_rho(const BernsteinSpec& spec, InitMode mode) {
  const int n = spec.degree;
  if (n < 1) throw DomainError("init_rho: degree must be >= 1");
  const double step = mode == InitMode::paper ? 1.0 / n : spec.width() / n;
  if (!(spec.delta < step)) {
    throw DomainError(std::string("init_rho: delta too large for ") + std::string(to_string(mode)) +
                      " init (needs delta < " + std::to_string(step) + ")");
  }
  ConstrainedCoefficients cc;
  cc.c0 = mode == InitMode::paper ? 0.0 : spec.lower;
  cc.rho.assign(static_cast<std::size_t>(n), softplus_inverse(step - spec.delta));
  return cc;
}

DerivativeBounds derivative_bounds(std::span<const double> c, const BernsteinSpec& spec) {
  require_length(c, spec);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < c.size(); ++k) {
    const double d = c[k + 1] - c[k];
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  // Same operation order as theoretical_lower_bound so m̲ ≥ floor survives rounding.
  const double n = static_cast<double>(spec.degree);
  return {n * lo / spec.width(), n * hi / spec.width()};
}

double theoretical_lower_bound(const BernsteinSpec& spec) {
  return static_cast<double>(spec.degree) * spec.delta / spec.width();
}

bool upper_bound_check(std::span<const double> c, const BernsteinSpec& spec, std::size_t samples) {
  require_length(c, spec);
  if (samples == 0) throw DomainError("upper_bound_check: samples must be >= 1");
  double cmax = 0.0;
  for (double v : c) cmax = std::max(cmax, std::abs(v));
  const double bound = 2.0 * spec.degree * cmax;
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = samples == 1 ? 0.5 * (spec.lower + spec.upper)
                                  : spec.lower + spec.width() * static_cast<double>(i) /
                                                     static_cast<double>(samples - 1);
    if (std::abs(poly_derivative(c, spec, std::min(x, spec.upper))) > bound) return false;
  }
  return true;
}

ActivationGradient activation_backward(const ConstrainedCoefficients& cc, const BernsteinSpec& spec,
                                       double x, double upstream_grad) {
  const int n = spec.degree;
  if (cc.rho.size() != static_cast<std::size_t>(n)) {
    throw DimensionError("activation_backward: rho length must equal degree");
  }
  const double t = normalize_input(spec, x);
  std::vector<double> lower(static_cast<std::size_t>(n)), row(static_cast<std::size_t>(n) + 1);
  basis_rows(n, t, lower, row);
  const auto c = reconstruct_coefficients(cc, spec.delta);

  ActivationGradient g;
  double slope = 0.0;
  for (int k = 0; k < n; ++k) slope += (c[k + 1] - c[k]) * lower[k];
  g.grad_x = upstream_grad * (static_cast<double>(n) * slope / spec.width());

  double total = 0.0;
  for (double b : row) total += b;
  g.grad_c0 = upstream_grad * total;

  // ∂c_k/∂ρ_j = sigmoid(ρ_j) for k > j, so ρ_j sees the basis mass above j.
  g.grad_rho.assign(static_cast<std::size_t>(n), 0.0);
  double suffix = 0.0;
  for (int j = n - 1; j >= 0; --j) {
    suffix += row[j + 1];
    g.grad_rho[j] = upstream_grad * sigmoid(cc.rho[j]) * suffix;
  }
  return g;
}

DiagonalBoundReport check_diagonal_bound(std::span<const std::vector<double>> layer_coeffs,
                                         const BernsteinSpec& spec) {
  const double floor = theoretical_lower_bound(spec);
  DiagonalBoundReport report;
  for (std::size_t i = 0; i < layer_coeffs.size(); ++i) {
    const auto bounds = derivative_bounds(layer_coeffs[i], spec);
    const bool increasing = bounds.m_lower >= floor;
    const bool decreasing = bounds.m_upper <= -floor;
    if (!increasing && !decreasing) {
      report.holds = false;
      report.violating_neurons.push_back(i);
    }
  }
  return report;
}

}  // namespace bernnet
