#pragma once

#include <string_view>

namespace bernnet {

enum class ActivationKind { relu, leaky_relu, selu, gelu, bernstein };

std::string_view to_string(ActivationKind kind) noexcept;
ActivationKind activation_kind_from_string(std::string_view name);

inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kSeluLambda = 1.0507009873554805;

/// Fixed-shape activations. leaky_slope is only read for leaky_relu.
/// Bernstein is parameterized and lives in bernstein.hpp.
double activation_value(ActivationKind kind, double leaky_slope, double x);
/// ReLU′(0) = 0; LeakyReLU′(0) = slope; SELU′(0) takes the negative branch.
double activation_derivative(ActivationKind kind, double leaky_slope, double x);

}  // namespace bernnet
