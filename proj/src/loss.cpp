#include "bernnet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bernnet/bernstein.hpp"
#include "bernnet/error.hpp"

namespace bernnet {

LossResult loss_bce_logits(const Matrix& logits, std::span<const double> targets) {
  if (logits.cols() != 1 || logits.rows() != targets.size()) {
    throw DimensionError("loss_bce_logits: expects N×1 logits and N targets");
  }
  const std::size_t n = logits.rows();
  if (n == 0) throw DimensionError("loss_bce_logits: empty batch");
  LossResult r{0.0, Matrix(n, 1)};
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits(i, 0);
    const double t = targets[i];
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("loss_bce_logits: target outside [0,1]");
    // max(z,0) − z·t + log(1 + e^{−|z|})
    r.loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    r.grad(i, 0) = (sigmoid(z) - t) / static_cast<double>(n);
  }
  r.loss /= static_cast<double>(n);
  return r;
}

LossResult loss_softmax_ce(const Matrix& logits, std::span<const std::size_t> labels) {
  if (logits.rows() != labels.size()) throw DimensionError("loss_softmax_ce: row/label count mismatch");
  const std::size_t n = logits.rows(), k = logits.cols();
  if (n == 0 || k == 0) throw DimensionError("loss_softmax_ce: empty batch");
  LossResult r{0.0, Matrix(n, k)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) {
      throw DomainError("loss_softmax_ce: label " + std::to_string(labels[i]) + " out of range");
    }
    auto z = logits.row(i);
    auto g = r.grad.row(i);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      g[j] = std::exp(z[j] - m);
      sum += g[j];
    }
    r.loss += m + std::log(sum) - z[labels[i]];
    for (std::size_t j = 0; j < k; ++j) g[j] = (g[j] / sum - (j == labels[i] ? 1.0 : 0.0)) * inv_n;
  }
  r.loss *= inv_n;
  return r;
}

LossResult loss_mse(const Matrix& pred, const Matrix& targets) {
  if (pred.rows() != targets.rows() || pred.cols() != targets.cols()) {
    throw DimensionError("loss_mse: shape mismatch");
  }
  if (pred.empty()) throw DimensionError("loss_mse: empty batch");
  const double count = static_cast<double>(pred.size());
  LossResult r{0.0, Matrix(pred.rows(), pred.cols())};
  auto p = pred.values();
  auto t = targets.values();
  auto g = r.grad.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    r.loss += d * d;
    g[i] = 2.0 * d / count;
  }
  r.loss /= count;
  return r;
}

}  // namespace bernnet
