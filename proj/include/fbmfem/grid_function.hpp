#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbmfem/detail/numeric.hpp"
#include "fbmfem/noise.hpp"

namespace fbmfem {

enum class EvaluationRule {
    piecewise_linear,    ///< n+1 nodal values, linear on each cell
    piecewise_constant,  ///< n cell values
};

/// Real function on [0, 1] represented on a uniform grid.
class GridFunction {
public:
    GridFunction(UniformGrid grid, std::vector<double> values, EvaluationRule rule)
        : grid_(grid), values_(std::move(values)), rule_(rule) {
        const std::size_t expected = rule == EvaluationRule::piecewise_linear ? grid.n() + 1 : grid.n();
        if (values_.size() != expected) {
            throw std::invalid_argument("grid function expects " + std::to_string(expected) +
                                        " values, got " + std::to_string(values_.size()));
        }
    }

    static GridFunction nodal(UniformGrid grid, std::vector<double> values) {
        return {grid, std::move(values), EvaluationRule::piecewise_linear};
    }
    static GridFunction cellwise(UniformGrid grid, std::vector<double> values) {
        return {grid, std::move(values), EvaluationRule::piecewise_constant};
    }
    static GridFunction zero_nodal(UniformGrid grid) {
        return nodal(grid, std::vector<double>(grid.n() + 1, 0.0));
    }
    /// Nodal interpolant of a callable.
    template <class F>
    static GridFunction interpolate(UniformGrid grid, F&& f) {
        std::vector<double> v(grid.n() + 1);
        for (std::size_t i = 0; i <= grid.n(); ++i) v[i] = f(grid.node(i));
        return nodal(grid, std::move(v));
    }

    const UniformGrid& grid() const noexcept { return grid_; }
    const std::vector<double>& values() const noexcept { return values_; }
    std::vector<double>& values() noexcept { return values_; }
    EvaluationRule rule() const noexcept { return rule_; }
    bool is_nodal() const noexcept { return rule_ == EvaluationRule::piecewise_linear; }

    /// Value at y using the restriction to cell i (y should lie in its closure).
    double on_cell(std::size_t i, double y) const noexcept {
        if (rule_ == EvaluationRule::piecewise_constant) return values_[i];
        const double a = grid_.cell_left(i);
        const double t = (y - a) * static_cast<double>(grid_.n());
        return values_[i] + t * (values_[i + 1] - values_[i]);
    }

    double operator()(double x) const {
        check_unit_interval(x, "x");
        return on_cell(grid_.locate(x), x);
    }

    /// Interior nodal values (drops the two boundary nodes).
    std::vector<double> interior() const {
        if (!is_nodal()) throw std::logic_error("interior values need a nodal function");
        return {values_.begin() + 1, values_.end() - 1};
    }

private:
    UniformGrid grid_;
    std::vector<double> values_;
    EvaluationRule rule_;
};

namespace detail {

/// Exact L² norm of the piecewise-linear interpolant of nodal values on `grid`.
inline double nodal_l2_norm(const UniformGrid& grid, std::span<const double> v) {
    CompensatedSum s;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        s.add(integral_of_square_linear(grid.node(i), grid.node(i + 1), v[i], v[i + 1]));
    }
    return std::sqrt(s.value());
}

}  // namespace detail
}  // namespace fbmfem
