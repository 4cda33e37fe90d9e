#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace prunelab {

// Minimal dense row-major matrix. Weight matrices are stored [out][in] so a
// projection is a row-wise dot product against a contiguous row.
template <typename T>
struct Mat {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(size_t r, size_t c) : rows(r), cols(c), data(r * c, T(0)) {}

    T* row(size_t r) { return data.data() + r * cols; }
    const T* row(size_t r) const { return data.data() + r * cols; }
    T& at(size_t r, size_t c) { return data[r * cols + c]; }
    const T& at(size_t r, size_t c) const { return data[r * cols + c]; }
    size_t size() const { return data.size(); }
    void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

template <typename T>
using Vec = std::vector<T>;

// Dot product with four independent accumulator chains. Every matrix-vector
// path in the library goes through this one kernel, so any two code paths that
// see the same operands produce bit-identical sums.
template <typename T>
inline T dot(const T* a, const T* b, size_t n) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    T s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) {
        s += a[i] * b[i];
    }
    return s;
}

// y = W x, W stored [out][in]
template <typename T>
inline void matvec(const Mat<T>& w, const T* x, T* y) {
    for (size_t o = 0; o < w.rows; ++o) {
        y[o] = dot(w.row(o), x, w.cols);
    }
}

// dx += W^T dy
template <typename T>
inline void matvec_transpose_acc(const Mat<T>& w, const T* dy, T* dx) {
    for (size_t o = 0; o < w.rows; ++o) {
        const T g = dy[o];
        if (g == T(0)) {
            continue;
        }
        const T* wr = w.row(o);
        for (size_t i = 0; i < w.cols; ++i) {
            dx[i] += g * wr[i];
        }
    }
}

// dW += dy x^T
template <typename T>
inline void outer_acc(Mat<T>& dw, const T* dy, const T* x) {
    for (size_t o = 0; o < dw.rows; ++o) {
        const T g = dy[o];
        if (g == T(0)) {
            continue;
        }
        T* wr = dw.row(o);
        for (size_t i = 0; i < dw.cols; ++i) {
            wr[i] += g * x[i];
        }
    }
}

}  // namespace prunelab
