#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>

namespace fbmfem::detail {

/// Neumaier compensated accumulator. Sums are reproducible as long as the
/// caller feeds terms in a fixed order.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }

    CompensatedSum& operator+=(double x) noexcept {
        add(x);
        return *this;
    }

    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) noexcept {
    CompensatedSum s;
    for (double x : xs) s.add(x);
    return s.value();
}

/// Two-point Gauss-Legendre rule mapped to [a, b]; exact for cubics.
struct GaussRule2 {
    std::array<double, 2> nodes;
    double weight;  // both weights are equal
};

inline GaussRule2 gauss2(double a, double b) noexcept {
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    const double offset = half / std::sqrt(3.0);
    return {{mid - offset, mid + offset}, half};
}

/// Five-point Gauss-Legendre rule on [-1, 1]; used for error norms against smooth callables.
inline constexpr std::array<double, 5> kGauss5Nodes = {
    -0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640};
inline constexpr std::array<double, 5> kGauss5Weights = {
    0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
    0.2369268850561891};

template <class F>
double gauss5(F&& f, double a, double b) {
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    double s = 0.0;
    for (std::size_t q = 0; q < 5; ++q) s += kGauss5Weights[q] * f(mid + half * kGauss5Nodes[q]);
    return half * s;
}

/// Exact integral over [a, b] of the square of a linear function with end values u0, u1.
inline double integral_of_square_linear(double a, double b, double u0, double u1) noexcept {
    return (b - a) * (u0 * u0 + u0 * u1 + u1 * u1) / 3.0;
}

}  // namespace fbmfem::detail
