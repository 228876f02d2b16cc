#pragma once

// Continuous piecewise-linear Galerkin finite elements for
//   (u', v') + (f(u), v) = (g + Ẇⁿ, v)  for all v in V_h,
// with exact integration of the step noise against the hat functions.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>
#include <utility>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbmfem/detail/numeric.hpp"
#include "fbmfem/errors.hpp"
#include "fbmfem/grid_function.hpp"
#include "fbmfem/noise.hpp"
#include "fbmfem/problem.hpp"

namespace fbmfem {

struct TridiagonalMatrix {
    std::vector<double> sub;    // size m-1, sub[i] = A(i+1, i)
    std::vector<double> main;   // size m
    std::vector<double> super;  // size m-1, super[i] = A(i, i+1)

    std::size_t size() const noexcept { return main.size(); }

    std::vector<double> multiply(std::span<const double> v) const {
        const std::size_t m = size();
        std::vector<double> out(m);
        for (std::size_t i = 0; i < m; ++i) {
            double s = main[i] * v[i];
            if (i > 0) s += sub[i - 1] * v[i - 1];
            if (i + 1 < m) s += super[i] * v[i + 1];
            out[i] = s;
        }
        return out;
    }
};

/// Thomas algorithm. No pivoting; fine for the SPD systems assembled here.
inline std::vector<double> solve_tridiagonal(const TridiagonalMatrix& a, std::span<const double> rhs) {
    const std::size_t m = a.size();
    if (rhs.size() != m) throw std::invalid_argument("tridiagonal solve: size mismatch");
    std::vector<double> c(m), d(m), x(m);
    double denom = a.main[0];
    if (denom == 0.0) throw SingularMatrixError("zero pivot in tridiagonal solve");
    c[0] = m > 1 ? a.super[0] / denom : 0.0;
    d[0] = rhs[0] / denom;
    for (std::size_t i = 1; i < m; ++i) {
        denom = a.main[i] - a.sub[i - 1] * c[i - 1];
        if (denom == 0.0) throw SingularMatrixError("zero pivot in tridiagonal solve");
        c[i] = i + 1 < m ? a.super[i] / denom : 0.0;
        d[i] = (rhs[i] - a.sub[i - 1] * d[i - 1]) / denom;
    }
    x[m - 1] = d[m - 1];
    for (std::size_t i = m - 1; i-- > 0;) x[i] = d[i] - c[i] * x[i + 1];
    return x;
}

/// (n-1)×(n-1) stiffness matrix: 2/h on the diagonal, -1/h off it.
inline TridiagonalMatrix assemble_stiffness(const UniformGrid& grid) {
    if (grid.n() < 2) throw std::invalid_argument("stiffness needs n ≥ 2 (at least one interior node)");
    const std::size_t m = grid.n() - 1;
    const double inv_h = static_cast<double>(grid.n());
    return {std::vector<double>(m - 1, -inv_h), std::vector<double>(m, 2.0 * inv_h),
            std::vector<double>(m - 1, -inv_h)};
}

/// Solution in V_h: interior nodal values, boundary values pinned to zero.
struct FemSolution {
    UniformGrid grid;
    std::vector<double> interior;
    double residual = 0.0;
    int iterations = 0;

    std::vector<double> nodal() const {
        std::vector<double> v(grid.n() + 1, 0.0);
        std::copy(interior.begin(), interior.end(), v.begin() + 1);
        return v;
    }
    GridFunction function() const { return GridFunction::nodal(grid, nodal()); }
};

namespace detail {

/// Value of the hat function at interior node j restricted to cell c (c = j-1 or j).
inline double hat_on_cell(const UniformGrid& grid, std::size_t j, std::size_t c, double y) noexcept {
    const double t = (y - grid.cell_left(c)) * static_cast<double>(grid.n());
    return c + 1 == j ? t : 1.0 - t;
}

/// (ρ, φ_j) for all interior j, ρ given per cell via rho(c, y), 2-point Gauss per cell.
template <class CellEval>
std::vector<double> gauss_load(const UniformGrid& grid, CellEval&& rho) {
    const std::size_t n = grid.n();
    std::vector<double> load(n - 1, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        const auto rule = gauss2(grid.cell_left(c), grid.cell_right(c));
        double left_hat = 0.0, right_hat = 0.0;  // contributions to nodes c and c+1
        for (double y : rule.nodes) {
            const double v = rho(c, y);
            const double t = (y - grid.cell_left(c)) * static_cast<double>(n);
            left_hat += v * (1.0 - t);
            right_hat += v * t;
        }
        if (c >= 1) load[c - 1] += rule.weight * left_hat;
        if (c + 1 <= n - 1) load[c] += rule.weight * right_hat;
    }
    return load;
}

}  // namespace detail

/// Exact (Ẇⁿ, φ_j) for every interior node j of `grid`. The noise grid must nest
/// with the mesh in either direction.
inline std::vector<double> noise_load(const StepNoise& noise, const UniformGrid& grid) {
    if (!grids_nested(noise.grid, grid)) {
        throw GridMismatchError("noise grid (" + std::to_string(noise.grid.n()) +
                                " cells) does not nest with the mesh (" + std::to_string(grid.n()) +
                                " cells)");
    }
    const std::size_t n = grid.n();
    std::vector<double> load(n - 1, 0.0);
    const auto add_cell = [&](std::size_t c, double left_part, double right_part) {
        if (c >= 1) load[c - 1] += left_part;
        if (c + 1 <= n - 1) load[c] += right_part;
    };
    if (noise.grid.is_refined_by(grid)) {
        // each mesh cell sits in one noise cell; a hat integrates to h/2 over each cell
        const std::size_t ratio = n / noise.grid.n();
        const double half_h = 0.5 * grid.h();
        for (std::size_t c = 0; c < n; ++c) {
            const double v = noise.density[c / ratio] * half_h;
            add_cell(c, v, v);
        }
    } else {
        const std::size_t ratio = noise.grid.n() / n;
        const double sub_h = noise.grid.h();
        for (std::size_t c = 0; c < n; ++c) {
            double left_part = 0.0, right_part = 0.0;
            for (std::size_t s = 0; s < ratio; ++s) {
                const double t = (static_cast<double>(s) + 0.5) / static_cast<double>(ratio);
                const double v = noise.density[c * ratio + s] * sub_h;
                left_part += v * (1.0 - t);
                right_part += v * t;
            }
            add_cell(c, left_part, right_part);
        }
    }
    return load;
}

/// Load vector (g, φ_j) + (Ẇⁿ, φ_j): g by 2-point Gauss per cell, the noise exactly.
template <class G>
    requires std::invocable<G&, double>
std::vector<double> assemble_load(G&& g, const StepNoise& noise, const UniformGrid& grid) {
    if (grid.n() < 2) throw std::invalid_argument("load needs n ≥ 2");
    auto load = detail::gauss_load(grid, [&g](std::size_t, double y) { return g(y); });
    const auto w = noise_load(noise, grid);
    for (std::size_t j = 0; j < load.size(); ++j) load[j] += w[j];
    return load;
}

inline std::vector<double> assemble_load(const GridFunction& g, const StepNoise& noise,
                                         const UniformGrid& grid) {
    if (grid.n() < 2) throw std::invalid_argument("load needs n ≥ 2");
    if (!grids_nested(g.grid(), grid)) throw GridMismatchError("forcing grid does not nest with the mesh");
    if (!g.grid().is_refined_by(grid)) {
        throw GridMismatchError("forcing must be given on the mesh or a coarser grid");
    }
    const std::size_t ratio = grid.n() / g.grid().n();
    auto load = detail::gauss_load(grid, [&](std::size_t c, double y) { return g.on_cell(c / ratio, y); });
    const auto w = noise_load(noise, grid);
    for (std::size_t j = 0; j < load.size(); ++j) load[j] += w[j];
    return load;
}

/// (f(·, u_h), φ_j) for all interior j, 2-point Gauss per cell.
inline std::vector<double> reaction_load(const ReactionTerm& f, const UniformGrid& grid,
                                         std::span<const double> nodal) {
    return detail::gauss_load(grid, [&](std::size_t c, double y) {
        const double t = (y - grid.cell_left(c)) * static_cast<double>(grid.n());
        return f(y, nodal[c] + t * (nodal[c + 1] - nodal[c]));
    });
}

inline double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

/// Direct solve of the linear (f ≡ 0) Galerkin system. `residual` is ‖Au - b‖_∞.
inline FemSolution solve_linear_fem(const TridiagonalMatrix& stiffness, std::span<const double> load) {
    auto u = solve_tridiagonal(stiffness, load);
    const auto au = stiffness.multiply(u);
    double res = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) res = std::max(res, std::abs(au[i] - load[i]));
    return {UniformGrid(stiffness.size() + 1), std::move(u), res, 1};
}

/// automatic: Picard for Lipschitz reactions, Newton for the others when a
/// derivative is available, Picard otherwise.
/// Cap applied to f' in the Newton Jacobian.
inline constexpr double kMaxSlope = 1e12;

enum class NonlinearMethod { automatic, picard, newton };

struct FemOptions {
    double tol = 1e-10;
    int max_iterations = 500;
    /// Picard damping θ; defaults to min(1, 2/(2+L)).
    std::optional<double> damping;
    /// Mesh cell count; 0 means the noise grid. Must nest with the noise grid.
    std::size_t mesh_n = 0;
    NonlinearMethod method = NonlinearMethod::automatic;
};

namespace detail {

/// L² size of a residual functional: sqrt(Σ r_j² / h), i.e. the L² norm of its
/// lumped-mass Riesz representative.
inline double functional_l2_norm(const UniformGrid& grid, std::span<const double> r) {
    CompensatedSum s;
    for (double v : r) s.add(v * v);
    return std::sqrt(s.value() * static_cast<double>(grid.n()));
}

}  // namespace detail

/// Solves A u + N(u) = b with N(u)_j = (f(·, u_h), φ_j). Picard:
/// u_{k+1} = u_k + θ A⁻¹(b - A u_k - N(u_k)). Newton (needs f'): the step length
/// minimizes the convex energy whose gradient is A u + N(u) - b along the Newton
/// direction; f' is clamped to [-L, kMaxSlope], so it may be infinite somewhere.
/// Converged when the residual functional's L² size ≤ tol.
inline FemSolution solve_nonlinear_fem(const ProblemSpec& spec, const IncrementPath& path,
                                       const FemOptions& opts = {}) {
    const UniformGrid grid(opts.mesh_n == 0 ? path.grid.n() : opts.mesh_n);
    if (grid.n() < 2) throw std::invalid_argument("FEM mesh needs n ≥ 2");
    const auto stiffness = assemble_stiffness(grid);
    const auto load = assemble_load(spec.forcing, step_noise(path), grid);
    const double theta = opts.damping.value_or(spec.reaction.default_damping());
    if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("damping must lie in (0, 1]");
    NonlinearMethod method = opts.method;
    if (method == NonlinearMethod::automatic) {
        method = !spec.reaction.is_lipschitz() && spec.reaction.has_derivative() ? NonlinearMethod::newton
                                                                                  : NonlinearMethod::picard;
    }
    if (method == NonlinearMethod::newton && !spec.reaction.has_derivative()) {
        throw std::invalid_argument("Newton iteration needs the reaction derivative");
    }

    const std::size_t m = grid.n() - 1;
    std::vector<double> nodal(grid.n() + 1, 0.0);
    const auto residual_of = [&](std::span<const double> nod, std::vector<double>& r) {
        const auto au = stiffness.multiply(nod.subspan(1, m));
        const auto nu = reaction_load(spec.reaction, grid, nod);
        r.resize(m);
        for (std::size_t j = 0; j < m; ++j) r[j] = load[j] - au[j] - nu[j];
        return detail::functional_l2_norm(grid, r);
    };

    std::vector<double> r;
    double res = residual_of(nodal, r);
    for (int it = 0;; ++it) {
        if (res <= opts.tol) {
            return {grid, std::vector<double>(nodal.begin() + 1, nodal.end() - 1), res, it};
        }
        if (it >= opts.max_iterations) {
            throw NonConvergenceError("nonlinear FEM iteration did not converge", res, it);
        }
        if (method == NonlinearMethod::picard) {
            const auto delta = solve_tridiagonal(stiffness, r);
            for (std::size_t j = 0; j < m; ++j) nodal[j + 1] += theta * delta[j];
            res = residual_of(nodal, r);
        } else {
            TridiagonalMatrix jac = stiffness;
            const double lower = -spec.reaction.monotone_constant();
            for (std::size_t c = 0; c < grid.n(); ++c) {
                const auto rule = detail::gauss2(grid.cell_left(c), grid.cell_right(c));
                double ll = 0.0, lr = 0.0, rr = 0.0;
                for (double y : rule.nodes) {
                    const double t = (y - grid.cell_left(c)) * static_cast<double>(grid.n());
                    double d = spec.reaction.derivative(y, nodal[c] + t * (nodal[c + 1] - nodal[c]));
                    d = std::isnan(d) ? kMaxSlope : std::clamp(d, lower, kMaxSlope);
                    ll += d * (1.0 - t) * (1.0 - t);
                    lr += d * (1.0 - t) * t;
                    rr += d * t * t;
                }
                if (c >= 1) jac.main[c - 1] += rule.weight * ll;
                if (c + 1 <= m) jac.main[c] += rule.weight * rr;
                if (c >= 1 && c + 1 <= m) {
                    jac.super[c - 1] += rule.weight * lr;
                    jac.sub[c - 1] += rule.weight * lr;
                }
            }
            const auto delta = solve_tridiagonal(jac, r);
            // slope of the energy along delta at step t: -r(u + t·delta)·delta,
            // nondecreasing in t because the energy is convex
            std::vector<double> trial(nodal);
            std::vector<double> trial_r;
            const auto slope_at = [&](double t) {
                for (std::size_t j = 0; j < m; ++j) trial[j + 1] = nodal[j + 1] + t * delta[j];
                const double norm = residual_of(trial, trial_r);
                double s = 0.0;
                for (std::size_t j = 0; j < m; ++j) s -= trial_r[j] * delta[j];
                return std::pair{s, norm};
            };
            const double s0 = -std::inner_product(r.begin(), r.end(), delta.begin(), 0.0);
            auto [s1, res1] = slope_at(1.0);
            double step = 1.0;
            if (s1 > 0.0 && s0 < 0.0) {
                // minimum lies inside (0, 1): Illinois regula falsi on the slope
                double lo = 0.0, hi = 1.0, slo = s0, shi = s1;
                int side = 0;
                for (int ls = 0; ls < 60; ++ls) {
                    step = (lo * shi - hi * slo) / (shi - slo);
                    std::tie(s1, res1) = slope_at(step);
                    if (std::abs(s1) <= 1e-3 * std::abs(s0)) break;
                    if (s1 < 0.0) {
                        lo = step;
                        slo = s1;
                        if (side == -1) shi *= 0.5;
                        side = -1;
                    } else {
                        hi = step;
                        shi = s1;
                        if (side == 1) slo *= 0.5;
                        side = 1;
                    }
                }
            }
            nodal.swap(trial);
            r.swap(trial_r);
            res = res1;
        }
    }
}

/// Ritz projection onto V_h. Since φ_j' is piecewise constant,
/// (w', φ_j') = (2w(x_j) - w(x_{j-1}) - w(x_{j+1})) / h exactly.
template <class W>
FemSolution ritz_projection(W&& w, const UniformGrid& grid) {
    const auto stiffness = assemble_stiffness(grid);
    const std::size_t m = grid.n() - 1;
    const double inv_h = static_cast<double>(grid.n());
    std::vector<double> rhs(m);
    for (std::size_t j = 1; j <= m; ++j) {
        rhs[j - 1] = (2.0 * w(grid.node(j)) - w(grid.node(j - 1)) - w(grid.node(j + 1))) * inv_h;
    }
    return solve_linear_fem(stiffness, rhs);
}

// ---------------------------------------------------------------------------
// Error norms

namespace detail {

template <class PieceFn>
void for_each_common_piece(const GridFunction& a, const GridFunction& b, PieceFn&& fn) {
    std::vector<double> na(a.grid().n() + 1), nb(b.grid().n() + 1);
    for (std::size_t i = 0; i < na.size(); ++i) na[i] = a.grid().node(i);
    for (std::size_t i = 0; i < nb.size(); ++i) nb[i] = b.grid().node(i);
    const auto pts = merge_breakpoints(na, nb);
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
        const double lo = pts[k], hi = pts[k + 1];
        const double mid = 0.5 * (lo + hi);
        const std::size_t ca = a.grid().locate(mid), cb = b.grid().locate(mid);
        fn(lo, hi, a.on_cell(ca, lo) - b.on_cell(cb, lo), a.on_cell(ca, hi) - b.on_cell(cb, hi), ca, cb);
    }
}

inline double cell_slope(const GridFunction& f, std::size_t c) {
    if (!f.is_nodal()) throw std::invalid_argument("H¹ seminorm needs piecewise-linear functions");
    return (f.values()[c + 1] - f.values()[c]) * static_cast<double>(f.grid().n());
}

}  // namespace detail

/// Exact ‖a - b‖ in L²(0,1) on the common refinement of the two grids.
inline double discrete_l2_error(const GridFunction& a, const GridFunction& b) {
    detail::CompensatedSum s;
    detail::for_each_common_piece(a, b, [&](double lo, double hi, double d0, double d1, std::size_t, std::size_t) {
        s.add(detail::integral_of_square_linear(lo, hi, d0, d1));
    });
    return std::sqrt(std::max(0.0, s.value()));
}

/// Exact ‖(a - b)'‖ in L²(0,1) for piecewise-linear a, b.
inline double discrete_h1_error(const GridFunction& a, const GridFunction& b) {
    detail::CompensatedSum s;
    detail::for_each_common_piece(a, b, [&](double lo, double hi, double, double, std::size_t ca, std::size_t cb) {
        const double d = detail::cell_slope(a, ca) - detail::cell_slope(b, cb);
        s.add((hi - lo) * d * d);
    });
    return std::sqrt(s.value());
}

/// ‖u‖₁² = ‖u‖² + ‖u'‖² for a piecewise-linear u.
inline double h1_norm_squared(const GridFunction& u) {
    const GridFunction zero = GridFunction::zero_nodal(UniformGrid(1));
    const double l2 = discrete_l2_error(u, zero);
    const double semi = discrete_h1_error(u, zero);
    return l2 * l2 + semi * semi;
}

/// ‖u - w‖ for a callable w, 5-point Gauss per cell.
template <class W>
double l2_error(const GridFunction& u, W&& w) {
    detail::CompensatedSum s;
    for (std::size_t c = 0; c < u.grid().n(); ++c) {
        s.add(detail::gauss5(
            [&](double y) {
                const double d = u.on_cell(c, y) - w(y);
                return d * d;
            },
            u.grid().cell_left(c), u.grid().cell_right(c)));
    }
    return std::sqrt(s.value());
}

}  // namespace fbmfem
