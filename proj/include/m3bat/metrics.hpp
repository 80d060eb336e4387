#pragma once

#include <span>

namespace m3bat {

// Mann-Whitney AUC: fraction of (positive, negative) pairs ranked correctly,
// ties counted as half. Equals macro-averaged ROC AUC for binary labels.
double auc_macro(std::span<const double> scores, std::span<const double> labels);

double mae_value(std::span<const double> predicted, std::span<const double> actual);

}  // namespace m3bat
