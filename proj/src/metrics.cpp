#include "m3bat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "m3bat/error.hpp"

namespace m3bat {

double auc_macro(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size())
        throw ValidationError("auc_macro: scores and labels differ in length");
    std::size_t n_pos = 0, n_neg = 0;
    for (double y : labels) {
        if (y == 1.0) {
            ++n_pos;
        } else if (y == 0.0) {
            ++n_neg;
        } else {
            throw ValidationError("auc_macro: label " + std::to_string(y) + " outside {0,1}");
        }
    }
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetricError("auc_macro: both classes must be present");

    // Average ranks with tie groups -> exact Mann-Whitney U.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1.0) rank_sum_pos += avg_rank;
        i = j + 1;
    }

    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

double mae_value(std::span<const double> predicted, std::span<const double> actual) {
    if (predicted.size() != actual.size())
        throw ValidationError("mae: predictions and targets differ in length");
    if (predicted.empty()) throw ValidationError("mae: empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        sum += std::fabs(predicted[i] - actual[i]);
    return sum / static_cast<double>(predicted.size());
}

}  // namespace m3bat
