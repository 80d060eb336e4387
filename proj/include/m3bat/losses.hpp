#pragma once

#include <vector>

#include "m3bat/matrix.hpp"

namespace m3bat {

struct LossResult {
    double value;
    Matrix grad;  // d loss / d predicted, same shape as predicted
};

// Mean binary cross-entropy over an n x 1 prediction column. Predictions are
// clamped to [1e-7, 1 - 1e-7] before the log.
LossResult bce_loss(const Matrix& predicted, const std::vector<double>& labels);

// Mean squared error over an n x 1 prediction column.
LossResult mse_loss(const Matrix& predicted, const std::vector<double>& actual);

inline constexpr double kProbClamp = 1e-7;

}  // namespace m3bat
