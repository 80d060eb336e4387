#include "m3bat/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "m3bat/error.hpp"

namespace m3bat {

namespace {

void check_column(const Matrix& predicted, std::size_t n, const char* op) {
    if (predicted.cols != 1)
        throw ShapeError(std::string(op) + ": predictions must be a single column");
    if (predicted.rows != n)
        throw ShapeError(std::string(op) + ": " + std::to_string(predicted.rows) +
                         " predictions vs " + std::to_string(n) + " targets");
}

}  // namespace

LossResult bce_loss(const Matrix& predicted, const std::vector<double>& labels) {
    check_column(predicted, labels.size(), "bce_loss");
    if (labels.empty()) throw ValidationError("bce_loss: empty batch");
    for (double y : labels) {
        if (y != 0.0 && y != 1.0)
            throw ValidationError("bce_loss: label " + std::to_string(y) + " outside {0,1}");
    }

    const std::size_t n = labels.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    Matrix grad(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(predicted.data[i], kProbClamp, 1.0 - kProbClamp);
        const double y = labels[i];
        loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        grad.data[i] = (-y / p + (1.0 - y) / (1.0 - p)) * inv_n;
    }
    return {loss * inv_n, std::move(grad)};
}

LossResult mse_loss(const Matrix& predicted, const std::vector<double>& actual) {
    check_column(predicted, actual.size(), "mse_loss");
    if (actual.empty()) throw ValidationError("mse_loss: empty batch");

    const std::size_t n = actual.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    Matrix grad(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = predicted.data[i] - actual[i];
        loss += diff * diff;
        grad.data[i] = 2.0 * diff * inv_n;
    }
    return {loss * inv_n, std::move(grad)};
}

}  // namespace m3bat
