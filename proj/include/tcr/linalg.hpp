#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace tcr {

using VecD = std::vector<double>;

// Dense row-major matrix, sized for the small feature spaces used here.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    VecD row_vec(std::size_t r) const {
        return VecD(data.begin() + static_cast<std::ptrdiff_t>(r * cols),
                    data.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
    }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double norm1(std::span<const double> a) {
    double s = 0.0;
    for (double x : a) s += std::fabs(x);
    return s;
}

inline VecD sub(std::span<const double> a, std::span<const double> b) {
    VecD out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline VecD add(std::span<const double> a, std::span<const double> b) {
    VecD out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline double mean(std::span<const double> a) {
    if (a.empty()) return 0.0;
    double s = 0.0;
    for (double x : a) s += x;
    return s / static_cast<double>(a.size());
}

inline double variance(std::span<const double> a) {
    if (a.size() < 2) return 0.0;
    const double m = mean(a);
    double s = 0.0;
    for (double x : a) s += (x - m) * (x - m);
    return s / static_cast<double>(a.size() - 1);
}

inline double stddev(std::span<const double> a) { return std::sqrt(variance(a)); }

// Standard error of the sample mean.
inline double standard_error(std::span<const double> a) {
    if (a.size() < 2) return 0.0;
    return stddev(a) / std::sqrt(static_cast<double>(a.size()));
}

// Solves A x = b in place by Gaussian elimination with partial pivoting.
// Throws std::runtime_error when a pivot falls below the tolerance.
inline VecD solve_linear_system(Matrix a, VecD b, double pivot_tol = 1e-10) {
    const std::size_t n = a.rows;
    if (a.cols != n || b.size() != n) throw std::invalid_argument("solve_linear_system: shape mismatch");
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::fabs(a(r, col)) > std::fabs(a(pivot, col))) pivot = r;
        }
        if (std::fabs(a(pivot, col)) < pivot_tol) {
            throw std::runtime_error("solve_linear_system: matrix is singular to working precision");
        }
        if (pivot != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(pivot, c));
            std::swap(b[col], b[pivot]);
        }
        const double inv = 1.0 / a(col, col);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a(r, col) * inv;
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
            b[r] -= f * b[col];
        }
    }
    VecD x(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a(i, c) * x[c];
        x[i] = s / a(i, i);
    }
    return x;
}

// Ordinary least squares via normal equations; design rows x features.
inline VecD least_squares(const Matrix& design, const VecD& target, double pivot_tol = 1e-8) {
    const std::size_t n = design.rows, p = design.cols;
    if (target.size() != n) throw std::invalid_argument("least_squares: shape mismatch");
    Matrix xtx(p, p);
    VecD xty(p, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = design.row(r);
        for (std::size_t i = 0; i < p; ++i) {
            xty[i] += row[i] * target[r];
            for (std::size_t j = i; j < p; ++j) xtx(i, j) += row[i] * row[j];
        }
    }
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < i; ++j) xtx(i, j) = xtx(j, i);
    // Scale-aware pivot tolerance.
    double diag_max = 0.0;
    for (std::size_t i = 0; i < p; ++i) diag_max = std::max(diag_max, xtx(i, i));
    return solve_linear_system(xtx, xty, pivot_tol * std::max(1.0, diag_max));
}

inline double sigmoid(double z) {
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double sigmoid_derivative(double z) {
    const double s = sigmoid(z);
    return s * (1.0 - s);
}

}  // namespace tcr
