#pragma once

// Central-difference check of backward() against the MSE loss.

#include <optional>
#include <string>
#include <vector>

#include "bernnet/network.hpp"

namespace bernnet {

struct GradCheckOptions {
  double h = 1e-5;
  double abs_tol = 1e-7;
  double rel_tol = 1e-5;
  BackwardOptions backward{};
};

struct GradCheckReport {
  bool pass = true;
  std::size_t checked = 0;
  double worst_ratio = 0.0;  // max |analytic − fd| / allowed
  std::string worst;  // entry with the largest ratio, with both values
  std::vector<std::string> failing_tensors;  // names, plus "input" when the input gradient fails
  /// When some tensor fails: the ops that can have introduced the error, i.e.
  /// those after the deepest failing tensor up to the next op whose tensors pass.
  std::vector<std::string> suspect_ops;
};

/// Every trainable scalar and every input entry. Train-mode forwards run on
/// copies, so params is left untouched.
GradCheckReport gradient_check(const Network& net, const Parameters& params, const Matrix& x, const Matrix& target,
                               const GradCheckOptions& options = {});

/// Distance of the nearest cached value from a point where the loss is not
/// differentiable (a clamp edge or the ReLU-family kink at 0).
double kink_margin(const Network& net, const Parameters& params, const Matrix& x);

}  // namespace bernnet
