#include "m3bat/adam.hpp"

#include <cmath>

#include "m3bat/error.hpp"

namespace m3bat {

AdamState::AdamState(const std::vector<ParamRef>& params, AdamConfig cfg) : cfg_(cfg) {
    std::size_t total = 0;
    sizes_.reserve(params.size());
    for (const auto& p : params) {
        sizes_.push_back(p.size);
        total += p.size;
    }
    m_.assign(total, 0.0);
    v_.assign(total, 0.0);
}

void AdamState::step(const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads) {
    if (params.size() != sizes_.size() || grads.size() != sizes_.size())
        throw StateError("adam_step: parameter layout does not match optimizer state");

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    std::size_t offset = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].size != sizes_[k] || grads[k].size != sizes_[k])
            throw StateError("adam_step: size mismatch for parameter " + params[k].name);
        double* theta = params[k].data;
        const double* g = grads[k].data;
        for (std::size_t i = 0; i < sizes_[k]; ++i) {
            if (!std::isfinite(g[i]))
                throw NumericError("adam_step: non-finite gradient in " + params[k].name);
            const std::size_t j = offset + i;
            m_[j] = cfg_.beta1 * m_[j] + (1.0 - cfg_.beta1) * g[i];
            v_[j] = cfg_.beta2 * v_[j] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m_[j] / bc1;
            const double vhat = v_[j] / bc2;
            theta[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        offset += sizes_[k];
    }
}

}  // namespace m3bat
