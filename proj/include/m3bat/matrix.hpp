#pragma once

#include <cstddef>
#include <vector>

namespace m3bat {

// Dense row-major matrix of doubles. The whole model zoo here is small
// MLPs, so plain loops are fast enough and keep everything inspectable.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row_ptr(std::size_t r) { return data.data() + r * cols; }
    const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }

    bool empty() const { return rows == 0 || cols == 0; }
    std::size_t size() const { return data.size(); }
};

Matrix matmul(const Matrix& a, const Matrix& b);
// a^T * b without forming the transpose.
Matrix matmul_at(const Matrix& a, const Matrix& b);
// a * b^T without forming the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix vstack(const Matrix& top, const Matrix& bottom);
Matrix select_columns(const Matrix& a, const std::vector<std::size_t>& cols);
Matrix select_rows(const Matrix& a, const std::vector<std::size_t>& rows);
bool all_finite(const Matrix& a);

}  // namespace m3bat
