#pragma once

#include <cstddef>
#include <vector>

#include "m3bat/matrix.hpp"
#include "m3bat/rng.hpp"

namespace m3bat {

enum class Activation { relu, sigmoid, identity };
enum class Mode { train, infer };

// Inverted dropout: activations are scaled by 1/(1-rate) at train time so
// inference needs no rescaling.
struct DropoutSpec {
    double rate = 0.0;  // in [0,1)
};

// Identity forward, -lambda * upstream backward.
struct GrlCoefficient {
    double lambda;
    explicit GrlCoefficient(double l);
};

Matrix grl_backward(const GrlCoefficient& coeff, const Matrix& upstream);

// Fully connected layer with a fixed activation. Gradients accumulate into
// dW/db; the forward cache lives outside the layer so inference on shared
// parameters can run concurrently.
class DenseLayer {
public:
    Matrix W;  // in x out
    std::vector<double> b;
    Activation act;
    Matrix dW;
    std::vector<double> db;

    struct Cache {
        Matrix input;
        Matrix preact;
        Matrix mask;  // scaled dropout mask, replayed in backward
        bool has_mask = false;
        bool valid = false;
    };

    DenseLayer(std::size_t in, std::size_t out, Activation a);

    std::size_t in_dim() const { return W.rows; }
    std::size_t out_dim() const { return W.cols; }

    void init_glorot(Rng& rng);
    void zero_grads();

    Matrix forward(const Matrix& x, Mode mode, const DropoutSpec* dropout, Rng* rng,
                   Cache* cache) const;
    // Returns the gradient w.r.t. the layer input; accumulates dW/db.
    Matrix backward(const Cache& cache, const Matrix& upstream);
};

struct StackCache {
    std::vector<DenseLayer::Cache> layers;
};

// A sequence of dense layers with an optional dropout rate per layer
// (applied to that layer's output, never to the final output layer).
class LayerStack {
public:
    std::vector<DenseLayer> layers;
    std::vector<double> dropout;  // aligned with layers; 0 = off

    void push(DenseLayer layer, double rate = 0.0);
    void init(Rng& rng);
    void zero_grads();

    bool empty() const { return layers.empty(); }
    std::size_t in_dim() const { return layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.back().out_dim(); }
    std::size_t param_count() const;

    Matrix forward(const Matrix& x, Mode mode, Rng* rng, StackCache* cache) const;
    Matrix backward(StackCache& cache, const Matrix& upstream);
};

double activation_apply(Activation act, double x);

}  // namespace m3bat
