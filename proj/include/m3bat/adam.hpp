#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace m3bat {

// A named view into a flat parameter (or gradient) buffer.
struct ParamRef {
    std::string name;
    double* data;
    std::size_t size;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction over a fixed parameter layout. Moments are kept
// flat in the order the ParamRefs were given at construction.
class AdamState {
public:
    AdamState(const std::vector<ParamRef>& params, AdamConfig cfg = {});

    // grads must mirror the construction layout (same names and sizes).
    void step(const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads);

    long step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
    std::vector<std::size_t> sizes_;
};

}  // namespace m3bat
