#pragma once

// Fractional Brownian motion on [0, 1] for Hurst index H ≤ 1/2: covariance,
// increment sampling on uniform grids, piecewise-constant noise, and closed-form
// evaluation of the Itô isometry for step and piecewise-linear integrands.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbmfem/detail/linalg.hpp"
#include "fbmfem/detail/numeric.hpp"
#include "fbmfem/detail/random.hpp"
#include "fbmfem/errors.hpp"

namespace fbmfem {

/// Hurst index restricted to the anti-persistent range (0, 1/2].
class HurstIndex {
public:
    explicit HurstIndex(double value) : value_(value) {
        if (!(value > 0.0 && value <= 0.5)) {
            throw DomainError("Hurst index must lie in (0, 1/2], got " + std::to_string(value));
        }
    }

    double value() const noexcept { return value_; }
    double two_h() const noexcept { return 2.0 * value_; }
    /// H = 1/2: standard Brownian motion, the singular kernel term drops out.
    bool is_white() const noexcept { return value_ == 0.5; }

    bool operator==(const HurstIndex&) const = default;

private:
    double value_;
};

/// Uniform partition of (0, 1] into n cells (x_i, x_{i+1}], x_i = i/n.
class UniformGrid {
public:
    explicit UniformGrid(std::size_t n) : n_(n) {
        if (n == 0) throw std::invalid_argument("grid needs at least one cell");
    }

    std::size_t n() const noexcept { return n_; }
    double h() const noexcept { return 1.0 / static_cast<double>(n_); }
    /// Node i computed as i/n, so node(n) == 1 exactly.
    double node(std::size_t i) const noexcept {
        return static_cast<double>(i) / static_cast<double>(n_);
    }
    double cell_left(std::size_t i) const noexcept { return node(i); }
    double cell_right(std::size_t i) const noexcept { return node(i + 1); }

    /// Index of the cell containing x, clamped to [0, n-1].
    std::size_t locate(double x) const noexcept {
        if (!(x > 0.0)) return 0;
        const auto i = static_cast<std::size_t>(std::floor(x * static_cast<double>(n_)));
        return std::min(i, n_ - 1);
    }

    /// True when every cell of *this is a union of cells of `finer`.
    bool is_refined_by(const UniformGrid& finer) const noexcept { return finer.n_ % n_ == 0; }

    bool operator==(const UniformGrid&) const = default;

private:
    std::size_t n_;
};

inline bool grids_nested(const UniformGrid& a, const UniformGrid& b) noexcept {
    return a.is_refined_by(b) || b.is_refined_by(a);
}

/// fBm increments ΔW_i = W(x_{i+1}) - W(x_i) on a uniform grid.
struct IncrementPath {
    UniformGrid grid;
    std::vector<double> increments;

    IncrementPath(UniformGrid g, std::vector<double> inc) : grid(g), increments(std::move(inc)) {
        if (increments.size() != grid.n()) {
            throw std::invalid_argument("increment count " + std::to_string(increments.size()) +
                                        " does not match grid size " + std::to_string(grid.n()));
        }
    }

    static IncrementPath zero(UniformGrid g) { return {g, std::vector<double>(g.n(), 0.0)}; }

    bool operator==(const IncrementPath&) const = default;
};

/// Piecewise-constant noise with cell value ΔW_i / h.
struct StepNoise {
    UniformGrid grid;
    std::vector<double> density;

    /// Exact L² norm squared of the step function: Σ h·density².
    double l2_norm_squared() const {
        detail::CompensatedSum s;
        const double h = grid.h();
        for (double d : density) s.add(h * d * d);
        return s.value();
    }
};

/// Step function Σ values[j]·χ_{(a_j, a_{j+1}]} with 0 = a_0 < ... < a_N = 1.
class StepFunction {
public:
    StepFunction(std::vector<double> breakpoints, std::vector<double> values)
        : breakpoints_(std::move(breakpoints)), values_(std::move(values)) {
        if (breakpoints_.size() < 2 || values_.size() + 1 != breakpoints_.size()) {
            throw std::invalid_argument("step function needs N+1 breakpoints for N values");
        }
        if (breakpoints_.front() != 0.0 || breakpoints_.back() != 1.0) {
            throw DomainError("step function breakpoints must start at 0 and end at 1");
        }
        for (std::size_t j = 0; j + 1 < breakpoints_.size(); ++j) {
            if (!(breakpoints_[j] < breakpoints_[j + 1])) {
                throw std::invalid_argument("step function breakpoints must be strictly increasing");
            }
        }
    }

    static StepFunction constant(double v) { return {{0.0, 1.0}, {v}}; }

    /// Step function with `values[i]` on cell i of `grid`.
    static StepFunction on_grid(const UniformGrid& grid, std::vector<double> values) {
        std::vector<double> b(grid.n() + 1);
        for (std::size_t i = 0; i <= grid.n(); ++i) b[i] = grid.node(i);
        return {std::move(b), std::move(values)};
    }

    const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }
    const std::vector<double>& values() const noexcept { return values_; }
    std::size_t pieces() const noexcept { return values_.size(); }

    /// Value on the half-open piece (a_j, a_{j+1}] containing x; x = 0 maps to the first piece.
    double operator()(double x) const {
        if (x < 0.0 || x > 1.0) throw DomainError("step function evaluated outside [0, 1]");
        const auto it = std::lower_bound(breakpoints_.begin() + 1, breakpoints_.end(), x);
        return values_[static_cast<std::size_t>(it - breakpoints_.begin()) - 1];
    }

private:
    std::vector<double> breakpoints_;
    std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Covariance

inline void check_unit_interval(double x, const char* what) {
    if (!(x >= 0.0 && x <= 1.0)) {
        throw DomainError(std::string(what) + " must lie in [0, 1], got " + std::to_string(x));
    }
}

/// E[W(x)W(y)] = (x^{2H} + y^{2H} - |x-y|^{2H}) / 2.
inline double fbm_covariance(double x, double y, HurstIndex hurst) {
    check_unit_interval(x, "x");
    check_unit_interval(y, "y");
    const double p = hurst.two_h();
    return 0.5 * (std::pow(x, p) + std::pow(y, p) - std::pow(std::abs(x - y), p));
}

/// Stationary autocovariance of increments at lag k on a grid of spacing h:
/// (h^{2H}/2)(|k+1|^{2H} + |k-1|^{2H} - 2|k|^{2H}).
inline double increment_autocovariance(std::size_t lag, double h, HurstIndex hurst) {
    const double p = hurst.two_h();
    if (lag == 0) return std::pow(h, p);
    if (hurst.is_white()) return 0.0;
    const double k = static_cast<double>(lag);
    return 0.5 * std::pow(h, p) * (std::pow(k + 1.0, p) + std::pow(k - 1.0, p) - 2.0 * std::pow(k, p));
}

/// Covariance matrix of the grid increments (Toeplitz, SPD).
inline DenseMatrix increment_covariance_matrix(const UniformGrid& grid, HurstIndex hurst) {
    const std::size_t n = grid.n();
    std::vector<double> gamma(n);
    for (std::size_t k = 0; k < n; ++k) gamma[k] = increment_autocovariance(k, grid.h(), hurst);
    DenseMatrix c(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) c(i, j) = gamma[i > j ? i - j : j - i];
    }
    return c;
}

/// Covariance of the increments W(b_{k+1}) - W(b_k) over an arbitrary partition,
/// assembled from fbm_covariance.
inline DenseMatrix partition_increment_covariance(std::span<const double> breakpoints,
                                                  HurstIndex hurst) {
    const std::size_t m = breakpoints.size() - 1;
    DenseMatrix c(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double a = breakpoints[i], b = breakpoints[i + 1];
            const double cc = breakpoints[j], d = breakpoints[j + 1];
            c(i, j) = fbm_covariance(b, d, hurst) - fbm_covariance(b, cc, hurst) -
                      fbm_covariance(a, d, hurst) + fbm_covariance(a, cc, hurst);
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Sampling

enum class SamplerMethod {
    cholesky,    ///< dense factorization of the n×n covariance
    circulant,   ///< circulant embedding of the Toeplitz covariance (FFT)
};

/// Draws increment paths for one (grid, H). Factorizes once; each draw is then
/// O(n²) (Cholesky) or O(n log n) (circulant). Immutable after construction.
class IncrementSampler {
public:
    IncrementSampler(UniformGrid grid, HurstIndex hurst, SamplerMethod method = SamplerMethod::cholesky)
        : grid_(grid), hurst_(hurst), method_(method) {
        if (hurst_.is_white()) return;
        if (method_ == SamplerMethod::cholesky) {
            factor_ = detail::cholesky(increment_covariance_matrix(grid_, hurst_));
        } else {
            build_circulant();
        }
    }

    const UniformGrid& grid() const noexcept { return grid_; }
    HurstIndex hurst() const noexcept { return hurst_; }
    SamplerMethod method() const noexcept { return method_; }

    IncrementPath draw(Rng& rng) const {
        const std::size_t n = grid_.n();
        std::vector<double> out(n);
        if (hurst_.is_white()) {
            fill_standard_normals(rng, out);
            const double s = std::sqrt(grid_.h());
            for (double& v : out) v *= s;
        } else if (method_ == SamplerMethod::cholesky) {
            std::vector<double> z(n);
            fill_standard_normals(rng, z);
            detail::lower_multiply(factor_, z, out);
        } else {
            const std::size_t m = sqrt_eigen_.size();
            std::vector<double> z(2 * m);
            fill_standard_normals(rng, z);
            std::vector<std::complex<double>> y(m);
            for (std::size_t k = 0; k < m; ++k) y[k] = sqrt_eigen_[k] * std::complex<double>(z[2 * k], z[2 * k + 1]);
            detail::fft_inplace(y);
            for (std::size_t i = 0; i < n; ++i) out[i] = y[i].real();
        }
        return {grid_, std::move(out)};
    }

private:
    void build_circulant() {
        // Embed lags 0..N (N = bit_ceil(n)) into a circulant of size 2N; for fractional
        // Gaussian noise this embedding is nonnegative definite.
        const std::size_t half = std::bit_ceil(grid_.n());
        const std::size_t m = 2 * half;
        std::vector<std::complex<double>> c(m);
        for (std::size_t j = 0; j <= half; ++j) c[j] = increment_autocovariance(j, grid_.h(), hurst_);
        for (std::size_t j = 1; j < half; ++j) c[m - j] = c[j];
        detail::fft_inplace(c);
        double lmax = 0.0;
        for (const auto& v : c) lmax = std::max(lmax, v.real());
        sqrt_eigen_.resize(m);
        for (std::size_t k = 0; k < m; ++k) {
            double lam = c[k].real();
            if (lam < 0.0) {
                if (lam < -1e-10 * lmax) {
                    throw FactorizationError("circulant embedding has a negative eigenvalue", k, lam);
                }
                lam = 0.0;
            }
            sqrt_eigen_[k] = std::sqrt(lam / static_cast<double>(m));
        }
    }

    UniformGrid grid_;
    HurstIndex hurst_;
    SamplerMethod method_;
    DenseMatrix factor_;
    std::vector<double> sqrt_eigen_;
};

/// One joint Gaussian draw of the increments. Same seed, grid and H give the same path.
inline IncrementPath sample_increments(const UniformGrid& grid, HurstIndex hurst, Rng& rng,
                                       SamplerMethod method = SamplerMethod::cholesky) {
    return IncrementSampler(grid, hurst, method).draw(rng);
}

/// Coarse path whose cell j carries the sum of the `factor` fine increments inside it.
inline IncrementPath aggregate_increments(const IncrementPath& fine, std::size_t factor) {
    if (factor == 0 || fine.grid.n() % factor != 0) {
        throw std::invalid_argument("aggregation factor " + std::to_string(factor) +
                                    " does not divide n = " + std::to_string(fine.grid.n()));
    }
    const std::size_t coarse_n = fine.grid.n() / factor;
    std::vector<double> out(coarse_n);
    for (std::size_t j = 0; j < coarse_n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < factor; ++k) s += fine.increments[j * factor + k];
        out[j] = s;
    }
    return {UniformGrid(coarse_n), std::move(out)};
}

/// Aggregates `fine` down to the grid with `coarse_n` cells.
inline IncrementPath restrict_path(const IncrementPath& fine, std::size_t coarse_n) {
    if (coarse_n == 0 || fine.grid.n() % coarse_n != 0) {
        throw GridMismatchError("cannot restrict a path on " + std::to_string(fine.grid.n()) +
                                " cells to " + std::to_string(coarse_n) + " cells");
    }
    return aggregate_increments(fine, fine.grid.n() / coarse_n);
}

inline StepNoise step_noise(const IncrementPath& path) {
    const double inv_h = static_cast<double>(path.grid.n());
    std::vector<double> d(path.increments.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = path.increments[i] * inv_h;
    return {path.grid, std::move(d)};
}

// ---------------------------------------------------------------------------
// Itô isometry

namespace detail {

/// Union of two sorted breakpoint lists (exact duplicates merged).
inline std::vector<double> merge_breakpoints(std::span<const double> a, std::span<const double> b) {
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// Values of `f` on each piece of the refinement `refined` of its breakpoints.
inline std::vector<double> values_on_refinement(const StepFunction& f, std::span<const double> refined) {
    std::vector<double> out(refined.size() - 1);
    const auto& bp = f.breakpoints();
    std::size_t j = 0;
    for (std::size_t k = 0; k + 1 < refined.size(); ++k) {
        while (bp[j + 1] < refined[k + 1]) ++j;
        out[k] = f.values()[j];
    }
    return out;
}

}  // namespace detail

/// Ψ(f, g) = E[I(f) I(g)] for step functions, evaluated in closed form.
///
/// On the common refinement with pieces (b_k, b_{k+1}], the singular double
/// integral over two disjoint pieces [a,b]×[c,d] (b ≤ c) is
///   ∬ |x-y|^{2H-2} = [(d-a)^{2H} - (d-b)^{2H} - (c-a)^{2H} + (c-b)^{2H}] / (2H(2H-1)),
/// so after multiplying by H(1-2H)/2 each pair contributes
///   -(f_k - f_l)(g_k - g_l) [...] / 4.
/// The boundary-weight integral over a piece is
///   H ∫ (x^{2H-1} + (1-x)^{2H-1}) = [b^{2H} - a^{2H} + (1-a)^{2H} - (1-b)^{2H}] / 2.
inline double ito_isometry(const StepFunction& f, const StepFunction& g, HurstIndex hurst) {
    const auto refined = detail::merge_breakpoints(f.breakpoints(), g.breakpoints());
    const auto fv = detail::values_on_refinement(f, refined);
    const auto gv = detail::values_on_refinement(g, refined);
    const std::size_t m = fv.size();
    const double p = hurst.two_h();

    std::vector<double> pw(refined.size()), pw_rev(refined.size());
    for (std::size_t k = 0; k < refined.size(); ++k) {
        pw[k] = std::pow(refined[k], p);
        pw_rev[k] = std::pow(1.0 - refined[k], p);
    }

    detail::CompensatedSum total;
    for (std::size_t k = 0; k < m; ++k) {
        total.add(fv[k] * gv[k] * 0.5 * (pw[k + 1] - pw[k] + pw_rev[k] - pw_rev[k + 1]));
    }
    if (!hurst.is_white()) {
        for (std::size_t k = 0; k < m; ++k) {
            for (std::size_t l = k + 1; l < m; ++l) {
                const double weight = (fv[k] - fv[l]) * (gv[k] - gv[l]);
                if (weight == 0.0) continue;
                const double a = refined[k], b = refined[k + 1];
                const double c = refined[l], d = refined[l + 1];
                const double bracket = std::pow(d - a, p) - std::pow(d - b, p) - std::pow(c - a, p) +
                                       std::pow(c - b, p);
                // both orderings (k,l) and (l,k): factor 2 × (-1/4)
                total.add(-0.5 * weight * bracket);
            }
        }
    }
    return total.value();
}

/// Ψ(f, g) via Σ f_k g_l Cov(ΔW_k, ΔW_l) on the common refinement.
inline double isometry_by_covariance(const StepFunction& f, const StepFunction& g, HurstIndex hurst) {
    const auto refined = detail::merge_breakpoints(f.breakpoints(), g.breakpoints());
    const auto fv = detail::values_on_refinement(f, refined);
    const auto gv = detail::values_on_refinement(g, refined);
    const DenseMatrix c = partition_increment_covariance(refined, hurst);
    detail::CompensatedSum s;
    for (std::size_t k = 0; k < fv.size(); ++k) {
        for (std::size_t l = 0; l < gv.size(); ++l) s.add(fv[k] * gv[l] * c(k, l));
    }
    return s.value();
}

/// Σ_{i≠j} ∬_{D_i×D_j} |x-y|^{2H-2} dx dy in closed form:
/// Σ_{i≠j} A_{i,j}(H) h^{2H} / (2H(1-2H)), A_{i,j} = 2|i-j|^{2H} - |i-j+1|^{2H} - |i-j-1|^{2H}.
/// Undefined at H = 1/2.
inline double kernel_cell_sum(const UniformGrid& grid, HurstIndex hurst) {
    if (hurst.is_white()) throw DomainError("kernel cell sum is undefined at H = 1/2");
    const double p = hurst.two_h();
    const std::size_t n = grid.n();
    detail::CompensatedSum a_sum;
    for (std::size_t k = 1; k < n; ++k) {
        const double kk = static_cast<double>(k);
        const double a = 2.0 * std::pow(kk, p) - std::pow(kk + 1.0, p) - std::pow(kk - 1.0, p);
        a_sum.add(2.0 * static_cast<double>(n - k) * a);
    }
    const double h = grid.h();
    return a_sum.value() * std::pow(h, p) / (p * (1.0 - p));
}

/// Explicit-constant upper bound h^{2H-1} / (H(1-2H)) for kernel_cell_sum.
inline double kernel_cell_sum_bound(const UniformGrid& grid, HurstIndex hurst) {
    const double hv = hurst.value();
    return std::pow(grid.h(), 2.0 * hv - 1.0) / (hv * (1.0 - 2.0 * hv));
}

// ---------------------------------------------------------------------------
// Wiener integrals of piecewise-linear integrands

/// Function linear on each piece (b_k, b_{k+1}], running from left[k] at b_k⁺ to
/// right[k] at b_{k+1}; jumps are allowed at breakpoints.
struct PiecewiseLinearIntegrand {
    std::vector<double> breakpoints;
    std::vector<double> left;
    std::vector<double> right;
};

/// E[(∫φ dW)²] in closed form.
///
/// Integration by parts on each piece writes ∫φ dW as a combination of point values
/// W(b_m) and piece integrals ∫W, whose second moments follow from the covariance by
/// exact power-law antiderivatives. Valid for every H in (0, 1/2].
inline double wiener_variance(const PiecewiseLinearIntegrand& phi, HurstIndex hurst) {
    const auto& b = phi.breakpoints;
    const std::size_t pieces = b.size() - 1;
    if (phi.left.size() != pieces || phi.right.size() != pieces) {
        throw std::invalid_argument("piecewise-linear integrand has inconsistent sizes");
    }
    const double p = hurst.two_h();

    std::vector<double> point(b.size(), 0.0);  // coefficient of W(b_m)
    std::vector<double> dens(pieces);           // coefficient of ∫_{piece} W
    for (std::size_t k = 0; k < pieces; ++k) {
        point[k + 1] += phi.right[k];
        point[k] -= phi.left[k];
        dens[k] = -(phi.right[k] - phi.left[k]) / (b[k + 1] - b[k]);
    }

    std::vector<double> pw(b.size()), pw1(b.size());
    for (std::size_t m = 0; m < b.size(); ++m) {
        pw[m] = std::pow(b[m], p);
        pw1[m] = std::pow(b[m], p + 1.0);
    }
    const auto odd_pow1 = [p](double u) {  // sign(u)|u|^{2H+1}/(2H+1)
        const double v = std::pow(std::abs(u), p + 1.0) / (p + 1.0);
        return u < 0.0 ? -v : v;
    };
    const auto even_pow2 = [p](double u) {  // |u|^{2H+2}/((2H+1)(2H+2))
        return std::pow(std::abs(u), p + 2.0) / ((p + 1.0) * (p + 2.0));
    };
    // ∫_{piece k} R(t, y) dy
    const auto point_piece = [&](std::size_t m, std::size_t k) {
        const double t = b[m], lo = b[k], hi = b[k + 1];
        return 0.5 * (pw[m] * (hi - lo) + (pw1[k + 1] - pw1[k]) / (p + 1.0) -
                      (odd_pow1(hi - t) - odd_pow1(lo - t)));
    };
    // ∬_{piece k × piece l} R(y, z)
    const auto piece_piece = [&](std::size_t k, std::size_t l) {
        const double a = b[k], bb = b[k + 1], c = b[l], d = b[l + 1];
        const double abs_part = even_pow2(bb - c) - even_pow2(a - c) - even_pow2(bb - d) + even_pow2(a - d);
        return 0.5 * ((d - c) * (pw1[k + 1] - pw1[k]) / (p + 1.0) +
                      (bb - a) * (pw1[l + 1] - pw1[l]) / (p + 1.0) - abs_part);
    };
    const auto cov = [&](std::size_t m, std::size_t q) {
        return 0.5 * (pw[m] + pw[q] - std::pow(std::abs(b[m] - b[q]), p));
    };

    detail::CompensatedSum total;
    for (std::size_t m = 0; m < b.size(); ++m) {
        if (point[m] == 0.0) continue;
        total.add(point[m] * point[m] * cov(m, m));
        for (std::size_t q = m + 1; q < b.size(); ++q) {
            if (point[q] != 0.0) total.add(2.0 * point[m] * point[q] * cov(m, q));
        }
        for (std::size_t k = 0; k < pieces; ++k) {
            if (dens[k] != 0.0) total.add(2.0 * point[m] * dens[k] * point_piece(m, k));
        }
    }
    for (std::size_t k = 0; k < pieces; ++k) {
        if (dens[k] == 0.0) continue;
        total.add(dens[k] * dens[k] * piece_piece(k, k));
        for (std::size_t l = k + 1; l < pieces; ++l) {
            if (dens[l] != 0.0) total.add(2.0 * dens[k] * dens[l] * piece_piece(k, l));
        }
    }
    return total.value();
}

}  // namespace fbmfem
