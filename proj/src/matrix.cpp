#include "m3bat/matrix.hpp"

#include <cmath>
#include <string>

#include "m3bat/error.hpp"

namespace m3bat {

namespace {

[[noreturn]] void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes (" + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + ") vs (" + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols) + ")");
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) shape_fail("matmul", a, b);
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) shape_fail("matmul_at", a, b);
    Matrix out(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.row_ptr(k);
        const double* brow = b.row_ptr(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* orow = out.row_ptr(i);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) shape_fail("matmul_bt", a, b);
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.row_ptr(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            orow[j] = acc;
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
    return out;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
    if (top.empty()) return bottom;
    if (bottom.empty()) return top;
    if (top.cols != bottom.cols) shape_fail("vstack", top, bottom);
    Matrix out(top.rows + bottom.rows, top.cols);
    std::copy(top.data.begin(), top.data.end(), out.data.begin());
    std::copy(bottom.data.begin(), bottom.data.end(), out.data.begin() + top.data.size());
    return out;
}

Matrix select_columns(const Matrix& a, const std::vector<std::size_t>& cols) {
    for (std::size_t c : cols) {
        if (c >= a.cols)
            throw ShapeError("select_columns: index " + std::to_string(c) + " out of range");
    }
    Matrix out(a.rows, cols.size());
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (std::size_t j = 0; j < cols.size(); ++j) orow[j] = arow[cols[j]];
    }
    return out;
}

Matrix select_rows(const Matrix& a, const std::vector<std::size_t>& rows) {
    for (std::size_t r : rows) {
        if (r >= a.rows) throw ShapeError("select_rows: index " + std::to_string(r) + " out of range");
    }
    Matrix out(rows.size(), a.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* arow = a.row_ptr(rows[i]);
        std::copy(arow, arow + a.cols, out.row_ptr(i));
    }
    return out;
}

bool all_finite(const Matrix& a) {
    for (double v : a.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace m3bat
