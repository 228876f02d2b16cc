#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "fbmfem/errors.hpp"

namespace fbmfem {

/// Dense square matrix, row-major.
class DenseMatrix {
public:
    DenseMatrix() = default;
    explicit DenseMatrix(std::size_t n) : n_(n), data_(n * n, 0.0) {}

    std::size_t size() const noexcept { return n_; }
    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * n_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * n_ + j]; }

    std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * n_, n_}; }

    bool operator==(const DenseMatrix&) const = default;

private:
    std::size_t n_ = 0;
    std::vector<double> data_;
};

namespace detail {

/// Lower Cholesky factor L with A = L Lᵀ. Throws FactorizationError on a pivot
/// that is not positive relative to the matrix scale.
inline DenseMatrix cholesky(const DenseMatrix& a) {
    const std::size_t n = a.size();
    DenseMatrix l(n);
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(a(i, i)));
    const double floor = scale * 1e-14;
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > floor)) {
            throw FactorizationError("covariance matrix is not numerically positive definite at pivot " +
                                         std::to_string(j),
                                     j, d);
        }
        const double piv = std::sqrt(d);
        l(j, j) = piv;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            const double* li = &l(i, 0);
            const double* lj = &l(j, 0);
            for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
            l(i, j) = s / piv;
        }
    }
    return l;
}

/// y = L z for lower-triangular L.
inline void lower_multiply(const DenseMatrix& l, std::span<const double> z, std::span<double> y) {
    const std::size_t n = l.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = l.row(i);
        double s = 0.0;
        for (std::size_t k = 0; k <= i; ++k) s += row[k] * z[k];
        y[i] = s;
    }
}

/// In-place iterative radix-2 FFT (forward, e^{-2πi jk/m}); size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
    const std::size_t m = a.size();
    if (!std::has_single_bit(m)) throw std::invalid_argument("fft size must be a power of two");
    for (std::size_t i = 1, j = 0; i < m; ++i) {
        std::size_t bit = m >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= m; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        for (std::size_t start = 0; start < m; start += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
                const auto u = a[start + k];
                const auto v = a[start + k + len / 2] * w;
                a[start + k] = u + v;
                a[start + k + len / 2] = u - v;
            }
        }
    }
}

}  // namespace detail
}  // namespace fbmfem
