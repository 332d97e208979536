#include "bernnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "bernnet/loss.hpp"

namespace bernnet {

namespace {

double loss_at(const Network& net, Parameters p, const Matrix& x, const Matrix& target) {
  return loss_mse(forward(net, p, x, Mode::train).output, target).loss;
}

// Op owning each parameter tensor; names look like "op3.weight".
std::vector<std::size_t> tensor_owners(const Parameters& params) {
  std::vector<std::size_t> owner;
  for (const auto& t : params.tensors) owner.push_back(std::stoul(t.name.substr(2, t.name.find('.') - 2)));
  return owner;
}

}  // namespace

GradCheckReport gradient_check(const Network& net, const Parameters& params, const Matrix& x, const Matrix& target,
                               const GradCheckOptions& o) {
  Parameters p = params;
  auto fr = forward(net, p, x, Mode::train);
  const auto loss = loss_mse(fr.output, target);
  const Gradients g = backward(net, p, fr.cache, loss.grad, o.backward);

  GradCheckReport rep;
  auto compare = [&](double analytic, double fd, const std::string& what) {
    const double allowed = std::max(o.abs_tol, o.rel_tol * std::max(std::abs(analytic), std::abs(fd)));
    const double ratio = std::abs(analytic - fd) / allowed;
    ++rep.checked;
    if (ratio > rep.worst_ratio) {
      rep.worst_ratio = ratio;
      std::ostringstream s;
      s.precision(10);
      s << what << " analytic=" << analytic << " fd=" << fd;
      rep.worst = s.str();
    }
    return ratio <= 1.0;
  };

  std::set<std::size_t> failing;
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    if (!is_trainable(params.tensors[t].role)) continue;
    bool ok = true;
    for (std::size_t k = 0; k < params.tensors[t].value.size(); ++k) {
      Parameters a = params, b = params;
      a.tensors[t].value.values()[k] += o.h;
      b.tensors[t].value.values()[k] -= o.h;
      const double fd = (loss_at(net, a, x, target) - loss_at(net, b, x, target)) / (2 * o.h);
      ok &= compare(g.tensors[t].values()[k], fd, params.tensors[t].name + "[" + std::to_string(k) + "]");
    }
    if (!ok) {
      failing.insert(t);
      rep.failing_tensors.push_back(params.tensors[t].name);
    }
  }
  bool input_ok = true;
  for (std::size_t k = 0; k < x.size(); ++k) {
    Matrix a = x, b = x;
    a.values()[k] += o.h;
    b.values()[k] -= o.h;
    const double fd = (loss_at(net, params, a, target) - loss_at(net, params, b, target)) / (2 * o.h);
    input_ok &= compare(g.input.values()[k], fd, "input[" + std::to_string(k) + "]");
  }
  if (!input_ok) rep.failing_tensors.push_back("input");
  rep.pass = failing.empty() && input_ok;

  if (!rep.pass) {
    // Errors flow toward the input, so the culprit sits after the deepest failure.
    const auto owner = tensor_owners(params);
    std::size_t start = 0;
    if (!failing.empty()) start = owner[*failing.rbegin()] + 1;
    for (std::size_t i = start; i < net.ops().size(); ++i) {
      rep.suspect_ops.push_back(net.ops()[i].label);
      bool has_checked_tensor = false;
      for (std::size_t t = 0; t < params.tensors.size(); ++t) {
        if (owner[t] == i && is_trainable(params.tensors[t].role)) has_checked_tensor = true;
      }
      if (has_checked_tensor) break;
    }
  }
  return rep;
}

double kink_margin(const Network& net, const Parameters& params, const Matrix& x) {
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

}  // namespace bernnet
