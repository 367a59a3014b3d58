#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "augicl/errors.hpp"

namespace augicl {

// Dense column-major matrix of doubles. Everything in this project is small
// (tokens are ~20 rows, prompts a few hundred columns), so the kernels below
// are plain loops; columns are contiguous because samples and tokens are
// columns throughout.
class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
        if (rows < 0 || cols < 0) throw parameter_error("Matrix: negative shape");
        data_.assign(static_cast<size_t>(rows) * static_cast<size_t>(cols), 0.0);
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix isotropic(int n, double scale) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = scale;
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(int r, int c) { return data_[idx(r, c)]; }
    double operator()(int r, int c) const { return data_[idx(r, c)]; }

    std::span<double> col(int c) {
        return {data_.data() + idx(0, c), static_cast<size_t>(rows_)};
    }
    std::span<const double> col(int c) const {
        return {data_.data() + idx(0, c), static_cast<size_t>(rows_)};
    }

    std::span<double> flat() { return {data_.data(), data_.size()}; }
    std::span<const double> flat() const { return {data_.data(), data_.size()}; }

    void set_col(int c, std::span<const double> v) {
        auto dst = col(c);
        std::copy(v.begin(), v.end(), dst.begin());
    }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    Matrix& operator+=(const Matrix& o) {
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Matrix& operator-=(const Matrix& o) {
        for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Matrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
    friend Matrix operator*(Matrix a, double s) { return a *= s; }
    friend Matrix operator*(double s, Matrix a) { return a *= s; }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    size_t idx(int r, int c) const {
        return static_cast<size_t>(c) * static_cast<size_t>(rows_) + static_cast<size_t>(r);
    }

    int rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw parameter_error("matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    for (int j = 0; j < b.cols(); ++j) {
        for (int k = 0; k < a.cols(); ++k) {
            const double bkj = b(k, j);
            if (bkj == 0.0) continue;
            for (int i = 0; i < a.rows(); ++i) out(i, j) += a(i, k) * bkj;
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (int j = 0; j < a.cols(); ++j)
        for (int i = 0; i < a.rows(); ++i) out(j, i) = a(i, j);
    return out;
}

// v^T M w without materializing intermediates.
inline double bilinear(std::span<const double> v, const Matrix& m, std::span<const double> w) {
    double acc = 0.0;
    for (int c = 0; c < m.cols(); ++c) {
        if (w[c] == 0.0) continue;
        double dot = 0.0;
        for (int r = 0; r < m.rows(); ++r) dot += v[r] * m(r, c);
        acc += dot * w[c];
    }
    return acc;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double frobenius_sq(const Matrix& a) {
    double acc = 0.0;
    for (double v : a.flat()) acc += v * v;
    return acc;
}

inline double max_abs(const Matrix& a) {
    double acc = 0.0;
    for (double v : a.flat()) acc = std::max(acc, std::abs(v));
    return acc;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw parameter_error("max_abs_diff: shape mismatch");
    double acc = 0.0;
    auto fa = a.flat(), fb = b.flat();
    for (size_t i = 0; i < fa.size(); ++i) acc = std::max(acc, std::abs(fa[i] - fb[i]));
    return acc;
}

inline bool all_finite(const Matrix& a) {
    for (double v : a.flat())
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace augicl
