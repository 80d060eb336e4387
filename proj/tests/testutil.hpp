#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "m3bat/matrix.hpp"
#include "m3bat/rng.hpp"

namespace testutil {

// Central finite differences of a scalar function over a flat buffer the
// function reads from. The function must be deterministic between calls.
inline std::vector<double> central_diff(const std::function<double()>& f, double* x,
                                        std::size_t n, double h = 1e-5) {
    std::vector<double> grad(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f();
        x[i] = orig - h;
        const double fm = f();
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

inline double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), 1e-6});
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

inline m3bat::Matrix random_matrix(m3bat::Rng& rng, std::size_t rows, std::size_t cols,
                                   double scale = 1.0) {
    m3bat::Matrix m(rows, cols);
    for (double& v : m.data) v = scale * rng.normal();
    return m;
}

// Scratch directory under the system temp root, fresh per call.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("m3bat_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }
    std::string str(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
