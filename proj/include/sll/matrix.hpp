#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sll/rng.hpp"

namespace sll {

/// Dense row-major matrix of doubles; the universal numeric carrier for
/// weights, adapters, datasets and report tables.
class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols)
        : rows_(rows), cols_(cols),
          data_(checked_size(rows, cols), 0.0) {}

    static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const int r = static_cast<int>(rows.size());
        const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
        Matrix m(r, c);
        int i = 0;
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != c) {
                throw std::invalid_argument("Matrix::from_rows: ragged rows");
            }
            int j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    // Column vector from a flat list.
    static Matrix column(std::span<const double> v) {
        Matrix m(static_cast<int>(v.size()), 1);
        for (std::size_t i = 0; i < v.size(); ++i) m.data_[i] = v[i];
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int i, int j) { return data_[idx(i, j)]; }
    double operator()(int i, int j) const { return data_[idx(i, j)]; }

    std::span<double> row(int i) { return {data_.data() + idx(i, 0), static_cast<std::size_t>(cols_)}; }
    std::span<const double> row(int i) const { return {data_.data() + idx(i, 0), static_cast<std::size_t>(cols_)}; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool all_zero() const {
        for (double v : data_) {
            if (v != 0.0) return false;
        }
        return true;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    static std::size_t checked_size(int rows, int cols) {
        if (rows <= 0 || cols <= 0) {
            throw std::invalid_argument("Matrix: dimensions must be positive, got " +
                                        std::to_string(rows) + "x" + std::to_string(cols));
        }
        return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    }

    std::size_t idx(int i, int j) const {
        return static_cast<std::size_t>(i) * static_cast<std::size_t>(cols_) +
               static_cast<std::size_t>(j);
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// ---- vector helpers -------------------------------------------------------

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> v) {
    return std::sqrt(dot(v, v));
}

inline std::vector<double> normalized(std::span<const double> v) {
    const double n = norm2(v);
    if (n == 0.0) throw std::invalid_argument("normalized: zero vector");
    std::vector<double> out(v.begin(), v.end());
    for (double& x : out) x /= n;
    return out;
}

// ---- matrix operations ----------------------------------------------------

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ (" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
    }
    Matrix out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    }
    return out;
}

/// a + s*b, elementwise.
inline Matrix add_scaled(const Matrix& a, const Matrix& b, double s) {
    if (!a.same_shape(b)) throw std::invalid_argument("add_scaled: shape mismatch");
    Matrix out = a;
    auto od = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += s * bd[i];
    return out;
}

inline Matrix scaled(const Matrix& a, double s) {
    Matrix out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("hadamard: shape mismatch");
    Matrix out = a;
    auto od = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
    return out;
}

inline double frobenius(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data()) s += v * v;
    return std::sqrt(s);
}

inline Matrix gaussian_matrix(Rng& rng, int rows, int cols, double std_dev) {
    Matrix out(rows, cols);
    for (double& v : out.data()) v = std_dev * rng.next_gaussian();
    return out;
}

/// y = m x
inline std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
    if (static_cast<int>(x.size()) != m.cols()) {
        throw std::invalid_argument("matvec: length mismatch");
    }
    std::vector<double> y(static_cast<std::size_t>(m.rows()), 0.0);
    for (int i = 0; i < m.rows(); ++i) y[static_cast<std::size_t>(i)] = dot(m.row(i), x);
    return y;
}

/// y = m^T x
inline std::vector<double> matvec_t(const Matrix& m, std::span<const double> x) {
    if (static_cast<int>(x.size()) != m.rows()) {
        throw std::invalid_argument("matvec_t: length mismatch");
    }
    std::vector<double> y(static_cast<std::size_t>(m.cols()), 0.0);
    for (int i = 0; i < m.rows(); ++i) {
        const double xi = x[static_cast<std::size_t>(i)];
        if (xi == 0.0) continue;
        auto r = m.row(i);
        for (int j = 0; j < m.cols(); ++j) y[static_cast<std::size_t>(j)] += xi * r[j];
    }
    return y;
}

/// acc += s * y x^T  (outer-product accumulation, the shape of every layer gradient)
inline void add_outer(Matrix& acc, std::span<const double> y, std::span<const double> x, double s) {
    if (acc.rows() != static_cast<int>(y.size()) || acc.cols() != static_cast<int>(x.size())) {
        throw std::invalid_argument("add_outer: shape mismatch");
    }
    for (int i = 0; i < acc.rows(); ++i) {
        const double yi = s * y[static_cast<std::size_t>(i)];
        if (yi == 0.0) continue;
        auto r = acc.row(i);
        for (int j = 0; j < acc.cols(); ++j) r[j] += yi * x[static_cast<std::size_t>(j)];
    }
}

} // namespace sll
