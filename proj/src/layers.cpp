#include "m3bat/layers.hpp"

#include <cmath>
#include <string>

#include "m3bat/error.hpp"

namespace m3bat {

GrlCoefficient::GrlCoefficient(double l) : lambda(l) {
    if (!(l >= 0.0 && l <= 1.0))
        throw ValidationError("GrlCoefficient: lambda must lie in [0,1], got " + std::to_string(l));
}

Matrix grl_backward(const GrlCoefficient& coeff, const Matrix& upstream) {
    Matrix out = upstream;
    for (double& v : out.data) v *= -coeff.lambda;
    return out;
}

double activation_apply(Activation act, double x) {
    switch (act) {
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
        case Activation::identity: return x;
    }
    return x;
}

namespace {

double activation_grad(Activation act, double pre) {
    switch (act) {
        case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
        case Activation::sigmoid: {
            const double s = 1.0 / (1.0 + std::exp(-pre));
            return s * (1.0 - s);
        }
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

}  // namespace

DenseLayer::DenseLayer(std::size_t in, std::size_t out, Activation a)
    : W(in, out), b(out, 0.0), act(a), dW(in, out), db(out, 0.0) {
    if (in == 0 || out == 0) throw ValidationError("DenseLayer: zero dimension");
}

void DenseLayer::init_glorot(Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(W.rows + W.cols));
    for (double& v : W.data) v = rng.uniform(-limit, limit);
    for (double& v : b) v = 0.0;
}

void DenseLayer::zero_grads() {
    std::fill(dW.data.begin(), dW.data.end(), 0.0);
    std::fill(db.begin(), db.end(), 0.0);
}

Matrix DenseLayer::forward(const Matrix& x, Mode mode, const DropoutSpec* dropout, Rng* rng,
                           Cache* cache) const {
    if (x.cols != W.rows)
        throw ShapeError("dense_forward: input has " + std::to_string(x.cols) +
                         " columns, layer expects " + std::to_string(W.rows));

    Matrix pre = matmul(x, W);
    for (std::size_t i = 0; i < pre.rows; ++i) {
        double* row = pre.row_ptr(i);
        for (std::size_t j = 0; j < pre.cols; ++j) row[j] += b[j];
    }

    Matrix out(pre.rows, pre.cols);
    for (std::size_t i = 0; i < pre.data.size(); ++i)
        out.data[i] = activation_apply(act, pre.data[i]);

    bool has_mask = false;
    Matrix mask;
    if (mode == Mode::train && dropout && dropout->rate > 0.0) {
        if (!(dropout->rate < 1.0)) throw ValidationError("dropout rate must be < 1");
        if (!rng) throw ValidationError("dense_forward: dropout in train mode needs an rng");
        const double keep = 1.0 - dropout->rate;
        mask = Matrix(out.rows, out.cols);
        for (std::size_t i = 0; i < mask.data.size(); ++i)
            mask.data[i] = rng->uniform() < dropout->rate ? 0.0 : 1.0 / keep;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
        has_mask = true;
    }

    if (cache) {
        cache->input = x;
        cache->preact = std::move(pre);
        cache->mask = std::move(mask);
        cache->has_mask = has_mask;
        cache->valid = true;
    }
    return out;
}

Matrix DenseLayer::backward(const Cache& cache, const Matrix& upstream) {
    if (!cache.valid) throw StateError("dense_backward: no matching forward pass");
    if (upstream.rows != cache.preact.rows || upstream.cols != cache.preact.cols)
        throw ShapeError("dense_backward: upstream shape does not match forward output");

    Matrix dpre = upstream;
    if (cache.has_mask) {
        for (std::size_t i = 0; i < dpre.data.size(); ++i) dpre.data[i] *= cache.mask.data[i];
    }
    for (std::size_t i = 0; i < dpre.data.size(); ++i)
        dpre.data[i] *= activation_grad(act, cache.preact.data[i]);

    Matrix dw = matmul_at(cache.input, dpre);
    for (std::size_t i = 0; i < dW.data.size(); ++i) dW.data[i] += dw.data[i];
    for (std::size_t i = 0; i < dpre.rows; ++i) {
        const double* row = dpre.row_ptr(i);
        for (std::size_t j = 0; j < dpre.cols; ++j) db[j] += row[j];
    }
    return matmul_bt(dpre, W);
}

void LayerStack::push(DenseLayer layer, double rate) {
    layers.push_back(std::move(layer));
    dropout.push_back(rate);
}

void LayerStack::init(Rng& rng) {
    for (auto& l : layers) l.init_glorot(rng);
}

void LayerStack::zero_grads() {
    for (auto& l : layers) l.zero_grads();
}

std::size_t LayerStack::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.W.data.size() + l.b.size();
    return n;
}

Matrix LayerStack::forward(const Matrix& x, Mode mode, Rng* rng, StackCache* cache) const {
    if (cache) cache->layers.resize(layers.size());
    Matrix cur = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        DropoutSpec spec{dropout[i]};
        cur = layers[i].forward(cur, mode, dropout[i] > 0.0 ? &spec : nullptr, rng,
                                cache ? &cache->layers[i] : nullptr);
    }
    return cur;
}

Matrix LayerStack::backward(StackCache& cache, const Matrix& upstream) {
    if (cache.layers.size() != layers.size())
        throw StateError("stack backward: cache does not match stack");
    Matrix grad = upstream;
    for (std::size_t i = layers.size(); i-- > 0;) {
        grad = layers[i].backward(cache.layers[i], grad);
    }
    return grad;
}

}  // namespace m3bat
