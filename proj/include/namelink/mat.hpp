#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "namelink/error.hpp"

namespace namelink {

// Dense row-major matrix of doubles. Vectors are 1×n or n×1 matrices.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
    Mat(int r, int c, std::vector<double> data) : rows(r), cols(c), a(std::move(data)) {}

    double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

    double* row_ptr(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
    const double* row_ptr(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }

    std::size_t size() const { return a.size(); }
    bool empty() const { return a.empty(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double v) { std::fill(a.begin(), a.end(), v); }

    bool all_finite() const {
        for (double v : a)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline Mat row_vector(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Mat(1, n, std::move(v));
}

// C = A * B. Inner loop ordered for cache locality; this is the hot path of
// the whole training pipeline.
inline void matmul_into(const Mat& A, const Mat& B, Mat& C) {
    if (A.cols != B.rows) throw DimensionError("matmul: inner dimensions differ");
    C = Mat(A.rows, B.cols);
    const int n = A.rows, k = A.cols, m = B.cols;
    for (int i = 0; i < n; ++i) {
        const double* arow = A.row_ptr(i);
        double* crow = C.row_ptr(i);
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = B.row_ptr(p);
            for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// C = A * B^T.
inline void matmul_nt_into(const Mat& A, const Mat& B, Mat& C) {
    if (A.cols != B.cols) throw DimensionError("matmul_nt: inner dimensions differ");
    C = Mat(A.rows, B.rows);
    for (int i = 0; i < A.rows; ++i) {
        const double* arow = A.row_ptr(i);
        double* crow = C.row_ptr(i);
        for (int j = 0; j < B.rows; ++j) {
            const double* brow = B.row_ptr(j);
            double s = 0.0;
            for (int p = 0; p < A.cols; ++p) s += arow[p] * brow[p];
            crow[j] = s;
        }
    }
}

// C = A^T * B.
inline void matmul_tn_into(const Mat& A, const Mat& B, Mat& C) {
    if (A.rows != B.rows) throw DimensionError("matmul_tn: inner dimensions differ");
    C = Mat(A.cols, B.cols);
    for (int p = 0; p < A.rows; ++p) {
        const double* arow = A.row_ptr(p);
        const double* brow = B.row_ptr(p);
        for (int i = 0; i < A.cols; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = C.row_ptr(i);
            for (int j = 0; j < B.cols; ++j) crow[j] += av * brow[j];
        }
    }
}

inline void axpy(Mat& acc, const Mat& x, double c = 1.0) {
    if (!acc.same_shape(x)) throw DimensionError("axpy: shape mismatch");
    for (std::size_t i = 0; i < acc.a.size(); ++i) acc.a[i] += c * x.a[i];
}

inline double dot(const Mat& x, const Mat& y) {
    if (x.size() != y.size()) throw DimensionError("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < x.a.size(); ++i) s += x.a[i] * y.a[i];
    return s;
}

inline double l2_norm(const Mat& x) { return std::sqrt(dot(x, x)); }

}  // namespace namelink
