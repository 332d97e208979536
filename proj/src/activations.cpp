#include "bernnet/activations.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "bernnet/error.hpp"

namespace bernnet {

std::string_view to_string(ActivationKind kind) noexcept {
  switch (kind) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::leaky_relu: return "leaky_relu";
    case ActivationKind::selu: return "selu";
    case ActivationKind::gelu: return "gelu";
    case ActivationKind::bernstein: return "bernstein";
  }
  return "unknown";
}

ActivationKind activation_kind_from_string(std::string_view name) {
  if (name == "relu") return ActivationKind::relu;
  if (name == "leaky_relu") return ActivationKind::leaky_relu;
  if (name == "selu") return ActivationKind::selu;
  if (name == "gelu") return ActivationKind::gelu;
  if (name == "bernstein") return ActivationKind::bernstein;
  throw ParseError("unknown activation '" + std::string(name) + "'");
}

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);

}  // namespace

double activation_value(ActivationKind kind, double leaky_slope, double x) {
  switch (kind) {
    case ActivationKind::relu: return x > 0.0 ? x : 0.0;
    case ActivationKind::leaky_relu: return x > 0.0 ? x : leaky_slope * x;
    case ActivationKind::selu:
      return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
    case ActivationKind::gelu: return 0.5 * x * std::erfc(-x * kInvSqrt2);
    case ActivationKind::bernstein: break;
  }
  throw Error("activation_value: Bernstein activations need coefficients");
}

double activation_derivative(ActivationKind kind, double leaky_slope, double x) {
  switch (kind) {
    case ActivationKind::relu: return x > 0.0 ? 1.0 : 0.0;
    case ActivationKind::leaky_relu: return x > 0.0 ? 1.0 : leaky_slope;
    case ActivationKind::selu: return x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
    case ActivationKind::gelu:
      return 0.5 * std::erfc(-x * kInvSqrt2) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    case ActivationKind::bernstein: break;
  }
  throw Error("activation_derivative: Bernstein activations need coefficients");
}

}  // namespace bernnet
