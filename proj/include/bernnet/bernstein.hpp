#pragma once

// Bernstein-polynomial activations on an interval [l, u]:
//   σ(x) = Σ_k c_k · b_{n,k}(x),   b_{n,k}(x) = C(n,k) t^k (1−t)^{n−k},  t = (x−l)/(u−l)
// with monotone coefficients built from a base value and softplus steps,
//   c_k = c_0 + Σ_{j<k} (softplus(ρ_j) + δ),
// which keeps σ′ ≥ n·δ/(u−l) everywhere on [l, u].

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace bernnet {

struct BernsteinSpec {
  int degree = 9;
  double lower = -3.0;
  double upper = 3.0;
  double delta = 0.01;

  double width() const noexcept { return upper - lower; }
  /// Throws DomainError unless degree ≥ 1, upper > lower and 0 < delta < 1/degree.
  void validate() const;

  friend bool operator==(const BernsteinSpec&, const BernsteinSpec&) = default;
};

struct ConstrainedCoefficients {
  double c0 = 0.0;
  std::vector<double> rho;  // one latent step per coefficient gap
};

struct DerivativeBounds {
  double m_lower = 0.0;
  double m_upper = 0.0;
};

enum class InitMode {
  paper,         // every step 1/n, c spans [c0, c0 + 1]
  raw_identity,  // every step (u−l)/n, c0 = l: σ(x) = x on [l, u]
};

std::string_view to_string(InitMode mode) noexcept;
InitMode init_mode_from_string(std::string_view name);

double softplus(double x) noexcept;
/// ln(eʸ − 1); throws DomainError for y ≤ 0.
double softplus_inverse(double y);
/// Derivative of softplus.
double sigmoid(double x) noexcept;

/// Maps x ∈ [l, u] to t ∈ [0, 1]; throws DomainError outside the interval.
double normalize_input(const BernsteinSpec& spec, double x);

/// Writes b_{degree,0..degree}(t) into out (size degree+1) using the
/// triangular recurrence b_k ← (1−t)·b_k + t·b_{k−1}.
void basis_row(int degree, double t, std::span<double> out) noexcept;

/// Same recurrence, also returning the degree−1 row needed for σ′.
void basis_rows(int degree, double t, std::span<double> lower_row, std::span<double> row) noexcept;

std::vector<double> basis_eval_all(const BernsteinSpec& spec, double x);
double poly_eval(std::span<const double> c, const BernsteinSpec& spec, double x);
double poly_derivative(std::span<const double> c, const BernsteinSpec& spec, double x);

/// Builds c from (c0, ρ). Each gap is nudged up by at most an ulp where the
/// cumulative sum rounds below δ, so c_{k+1} − c_k ≥ δ holds exactly.
std::vector<double> reconstruct_coefficients(const ConstrainedCoefficients& cc, double delta);
void reconstruct_coefficients_into(double c0, std::span<const double> rho, double delta,
                                   std::span<double> out) noexcept;

ConstrainedCoefficients init_rho(const BernsteinSpec& spec, InitMode mode);

DerivativeBounds derivative_bounds(std::span<const double> c, const BernsteinSpec& spec);

/// n·δ / (u − l)
double theoretical_lower_bound(const BernsteinSpec& spec);

/// |σ′| ≤ 2n·max|c_k| at `samples` evenly spaced points of [l, u].
bool upper_bound_check(std::span<const double> c, const BernsteinSpec& spec, std::size_t samples);

struct ActivationGradient {
  double grad_x = 0.0;
  double grad_c0 = 0.0;
  std::vector<double> grad_rho;
};

ActivationGradient activation_backward(const ConstrainedCoefficients& cc, const BernsteinSpec& spec,
                                       double x, double upstream_grad);

struct DiagonalBoundReport {
  bool holds = true;
  std::vector<std::size_t> violating_neurons;
};

/// Per neuron: m̲ ≥ nδ/(u−l) (increasing branch) or m̄ ≤ −nδ/(u−l) (decreasing branch).
DiagonalBoundReport check_diagonal_bound(std::span<const std::vector<double>> layer_coeffs,
                                         const BernsteinSpec& spec);

}  // namespace bernnet
