#pragma once

// Mild-solution route: Green's function G(x,y) = min(x,y) - xy of -d²/dx² with
// Dirichlet boundary, the integral operator K, the stochastic convolution KẆⁿ and a
// damped Picard solver for the Hammerstein equation u + K f(u) = K g + K Ẇⁿ.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "fbmfem/detail/numeric.hpp"
#include "fbmfem/errors.hpp"
#include "fbmfem/grid_function.hpp"
#include "fbmfem/noise.hpp"
#include "fbmfem/problem.hpp"

namespace fbmfem {

inline double greens_eval(double x, double y) {
    check_unit_interval(x, "x");
    check_unit_interval(y, "y");
    return std::min(x, y) - x * y;
}

namespace detail {

// ∫_a^b G(x, z) dz for a ≤ b, using z(1-x) left of x and x(1-z) right of it.
inline double greens_interval_integral(double x, double a, double b) noexcept {
    if (b <= x) return (1.0 - x) * 0.5 * (b * b - a * a);
    if (a >= x) return x * ((b - a) - 0.5 * (b * b - a * a));
    return (1.0 - x) * 0.5 * (x * x - a * a) + x * ((b - x) - 0.5 * (b * b - x * x));
}

/// Nodal values on `eval` of Kφ, where φ is given cell by cell on `source` via
/// phi(i, y). Uses Kφ(x) = (1-x) ∫_0^x yφ + x ∫_x^1 (1-y)φ with prefix sums of
/// per-cell 2-point Gauss moments, so the cost is O(n + m). Exact whenever φ is
/// linear on each source cell.
template <class CellEval>
GridFunction apply_green(const UniformGrid& source, CellEval&& phi, const UniformGrid& eval) {
    const std::size_t n = source.n();
    std::vector<double> pa(n + 1), pb(n + 1);
    CompensatedSum sa, sb;
    const auto moments = [&](std::size_t i, double lo, double hi, double& ma, double& mb) {
        const auto rule = gauss2(lo, hi);
        ma = 0.0;
        mb = 0.0;
        for (double y : rule.nodes) {
            const double v = phi(i, y);
            ma += y * v;
            mb += (1.0 - y) * v;
        }
        ma *= rule.weight;
        mb *= rule.weight;
    };
    for (std::size_t i = 0; i < n; ++i) {
        double ma = 0.0, mb = 0.0;
        moments(i, source.cell_left(i), source.cell_right(i), ma, mb);
        sa.add(ma);
        sb.add(mb);
        pa[i + 1] = sa.value();
        pb[i + 1] = sb.value();
    }
    const double b_total = pb[n];

    const std::size_t m = eval.n();
    std::vector<double> out(m + 1, 0.0);
    for (std::size_t j = 1; j < m; ++j) {
        const double x = eval.node(j);
        const std::size_t i = source.locate(x);
        double ma = 0.0, mb = 0.0;
        if (x > source.cell_left(i)) moments(i, source.cell_left(i), x, ma, mb);
        out[j] = (1.0 - x) * (pa[i] + ma) + x * (b_total - (pb[i] + mb));
    }
    return GridFunction::nodal(eval, std::move(out));
}

}  // namespace detail

/// ∫_{D_i} G(x, z) dz in closed form (the cell is split at z = x when x is inside it).
inline double greens_cell_integral(double x, std::size_t i, const UniformGrid& grid) {
    check_unit_interval(x, "x");
    if (i >= grid.n()) throw std::out_of_range("cell index out of range");
    return detail::greens_interval_integral(x, grid.cell_left(i), grid.cell_right(i));
}

/// (Kφ)(x_j) on the nodes of `eval`, integrating G(x_j, ·) against the piecewise
/// representation of φ exactly. The result vanishes at both boundary nodes.
inline GridFunction apply_K(const GridFunction& phi, const UniformGrid& eval) {
    return detail::apply_green(
        phi.grid(), [&phi](std::size_t i, double y) { return phi.on_cell(i, y); }, eval);
}

inline GridFunction apply_K(const GridFunction& phi) { return apply_K(phi, phi.grid()); }

/// Kg for a callable g, sampled at two Gauss points per cell of `quadrature`.
template <class F>
    requires std::invocable<F&, double>
GridFunction apply_K(F&& g, const UniformGrid& quadrature, const UniformGrid& eval) {
    return detail::apply_green(quadrature, [&g](std::size_t, double y) { return g(y); }, eval);
}

/// (KẆⁿ)(x) = Σ_i (ΔW_i/h) ∫_{D_i} G(x, z) dz on the nodes of `eval`.
inline GridFunction stochastic_convolution(const IncrementPath& path, const UniformGrid& eval) {
    const StepNoise noise = step_noise(path);
    return detail::apply_green(
        path.grid, [&noise](std::size_t i, double) { return noise.density[i]; }, eval);
}

inline GridFunction stochastic_convolution(const IncrementPath& path) {
    return stochastic_convolution(path, path.grid);
}

/// The integrand d_x(y) = G(x,y) - Ĝ(x,y), Ĝ(x,·) being the cell average of G(x,·).
inline PiecewiseLinearIntegrand convolution_error_integrand(double x, const UniformGrid& grid) {
    check_unit_interval(x, "x");
    PiecewiseLinearIntegrand d;
    d.breakpoints.push_back(0.0);
    for (std::size_t i = 0; i < grid.n(); ++i) {
        const double a = grid.cell_left(i), b = grid.cell_right(i);
        const double avg = greens_cell_integral(x, i, grid) * static_cast<double>(grid.n());
        const auto add_piece = [&](double lo, double hi) {
            d.breakpoints.push_back(hi);
            d.left.push_back(std::min(x, lo) - x * lo - avg);
            d.right.push_back(std::min(x, hi) - x * hi - avg);
        };
        if (x > a && x < b) {
            add_piece(a, x);
            add_piece(x, b);
        } else {
            add_piece(a, b);
        }
    }
    return d;
}

/// E|Eⁿ(x)|², Eⁿ = KẆ - KẆⁿ, computed deterministically from the isometry
/// applied to d_x. No sampling and no quadrature: d_x is piecewise linear, and
/// its Wiener-integral variance has a closed form.
inline double en_second_moment(double x, const UniformGrid& grid, HurstIndex hurst) {
    return wiener_variance(convolution_error_integrand(x, grid), hurst);
}

// ---------------------------------------------------------------------------
// Hammerstein solver

struct HammersteinOptions {
    double tol = 1e-10;
    int max_iterations = 500;
    /// Picard damping θ; defaults to min(1, 2/(2+L)).
    std::optional<double> damping;
    /// Solution nodes per noise cell. At 1 the Nyström discretization coincides
    /// with the Galerkin one, so the oracle is represented on a finer node set.
    std::size_t refine = 4;
};

struct HammersteinSolution {
    GridFunction u;
    double residual = 0.0;
    int iterations = 0;
    /// ‖u_{k+1} - u_k‖ / ‖u_k - u_{k-1}‖ per iteration, for contraction diagnostics.
    std::vector<double> step_ratios;
};

/// K f(u) on u's own grid, f(·, u(·)) sampled at two Gauss points per cell.
inline GridFunction apply_K_reaction(const ReactionTerm& f, const GridFunction& u) {
    return detail::apply_green(
        u.grid(), [&](std::size_t i, double y) { return f(y, u.on_cell(i, y)); }, u.grid());
}

/// Fixed point of u = b - K f(u), b = K g + K Ẇⁿ, by damped Picard iteration
/// u_{k+1} = (1-θ) u_k + θ (b - K f(u_k)). Stops when ‖u + Kf(u) - b‖ ≤ tol in L².
inline HammersteinSolution solve_hammerstein(const ProblemSpec& spec, const IncrementPath& path,
                                             const HammersteinOptions& opts = {}) {
    if (opts.refine == 0) throw std::invalid_argument("refine must be positive");
    const UniformGrid grid(path.grid.n() * opts.refine);
    const double theta = opts.damping.value_or(spec.reaction.default_damping());
    if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("damping must lie in (0, 1]");

    const GridFunction kg = apply_K(spec.forcing, grid, grid);
    const GridFunction kw = stochastic_convolution(path, grid);
    std::vector<double> b(grid.n() + 1);
    for (std::size_t j = 0; j <= grid.n(); ++j) b[j] = kg.values()[j] + kw.values()[j];

    GridFunction u = GridFunction::zero_nodal(grid);
    std::vector<double> r(grid.n() + 1);
    std::vector<double> step(grid.n() + 1);
    HammersteinSolution out{u, 0.0, 0, {}};
    double prev_step = 0.0;
    for (int it = 0;; ++it) {
        const GridFunction kf = apply_K_reaction(spec.reaction, u);
        for (std::size_t j = 0; j <= grid.n(); ++j) r[j] = u.values()[j] + kf.values()[j] - b[j];
        const double res = detail::nodal_l2_norm(grid, r);
        if (res <= opts.tol) {
            out.u = std::move(u);
            out.residual = res;
            out.iterations = it;
            return out;
        }
        if (it >= opts.max_iterations) {
            throw NonConvergenceError("Hammerstein Picard iteration did not converge", res, it);
        }
        // u - θ r = (1-θ)u + θ(b - Kf(u))
        for (std::size_t j = 0; j <= grid.n(); ++j) {
            step[j] = -theta * r[j];
            u.values()[j] += step[j];
        }
        const double step_norm = detail::nodal_l2_norm(grid, step);
        if (prev_step > 0.0) out.step_ratios.push_back(step_norm / prev_step);
        prev_step = step_norm;
    }
}

}  // namespace fbmfem
