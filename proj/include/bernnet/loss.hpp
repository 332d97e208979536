#pragma once

#include <cstddef>
#include <span>

#include "bernnet/numcore.hpp"

namespace bernnet {

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // ∂loss/∂(network output), already divided by the batch size
};

/// Binary cross-entropy on raw logits (N×1), targets in [0,1].
LossResult loss_bce_logits(const Matrix& logits, std::span<const double> targets);
/// Softmax cross-entropy, labels in [0, logits.cols()).
LossResult loss_softmax_ce(const Matrix& logits, std::span<const std::size_t> labels);
/// Mean over every entry of (pred − target)².
LossResult loss_mse(const Matrix& pred, const Matrix& targets);

}  // namespace bernnet
