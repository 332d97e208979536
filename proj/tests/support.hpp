#pragma once

// Test-side oracles shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bernnet/loss.hpp"
#include "bernnet/network.hpp"

namespace testsupport {

using namespace bernnet;

inline double mse_loss_of(const Network& net, const Parameters& p, const Matrix& x, const Matrix& target) {
  Parameters copy = p;  // train-mode forward touches running statistics
  const Matrix out = forward(net, copy, x, Mode::train).output;
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = out.values()[i] - target.values()[i];
    s += d * d;
  }
  return s / static_cast<double>(out.size());
}

struct FdReport {
  bool pass = true;
  double worst_excess = 0.0;  // max |analytic − fd| / allowed
  std::string worst;
  std::size_t checked = 0;
};

/// Central differences of the MSE loss over every trainable scalar and every
/// input entry, compared with backward().
inline FdReport finite_difference_check(const Network& net, const Parameters& params, const Matrix& x,
                                        const Matrix& target, double h = 1e-5, double abs_tol = 1e-7,
                                        double rel_tol = 1e-5, const BackwardOptions& opts = {}) {
  Parameters p = params;
  auto fr = forward(net, p, x, Mode::train);
  const auto loss = loss_mse(fr.output, target);
  const Gradients g = backward(net, p, fr.cache, loss.grad, opts);

  FdReport rep;
  auto compare = [&](double analytic, double fd, const std::string& what) {
    const double allowed = std::max(abs_tol, rel_tol * std::max(std::abs(analytic), std::abs(fd)));
    const double excess = std::abs(analytic - fd) / allowed;
    ++rep.checked;
    if (excess > rep.worst_excess) {
      rep.worst_excess = excess;
      rep.worst = what + " analytic=" + std::to_string(analytic) + " fd=" + std::to_string(fd);
    }
    if (excess > 1.0) rep.pass = false;
  };

  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    if (!is_trainable(params.tensors[t].role)) continue;
    for (std::size_t k = 0; k < params.tensors[t].value.size(); ++k) {
      Parameters a = params, b = params;
      a.tensors[t].value.values()[k] += h;
      b.tensors[t].value.values()[k] -= h;
      const double fd = (mse_loss_of(net, a, x, target) - mse_loss_of(net, b, x, target)) / (2 * h);
      compare(g.tensors[t].values()[k], fd, params.tensors[t].name + "[" + std::to_string(k) + "]");
    }
  }
  for (std::size_t k = 0; k < x.size(); ++k) {
    Matrix a = x, b = x;
    a.values()[k] += h;
    b.values()[k] -= h;
    const double fd = (mse_loss_of(net, params, a, target) - mse_loss_of(net, params, b, target)) / (2 * h);
    compare(g.input.values()[k], fd, "input[" + std::to_string(k) + "]");
  }
  return rep;
}

/// Smallest distance of any cached value from a kink (ReLU-family zero or a
/// clamp edge); finite differences are meaningless closer than h to one.
inline double kink_distance(const Network& net, const Parameters& params, const Matrix& x) {
  Parameters p = params;
  const auto fr = forward(net, p, x, Mode::train);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < net.ops().size(); ++i) {
    const Op& op = net.ops()[i];
    const auto& in = fr.cache.ops[i].input;
    if (op.kind == OpKind::clamp) {
      const auto& c = std::get<ClampSpec>(op.spec);
      for (double v : in.values()) best = std::min({best, std::abs(v - c.lower), std::abs(v - c.upper)});
    } else if (op.kind == OpKind::activation) {
      const auto k = std::get<ActivationSpec>(op.spec).kind;
      if (k == ActivationKind::relu || k == ActivationKind::leaky_relu || k == ActivationKind::selu) {
        for (double v : in.values()) best = std::min(best, std::abs(v));
      }
    }
  }
  return best;
}

}  // namespace testsupport
