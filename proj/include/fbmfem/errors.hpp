#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fbmfem {

/// Argument outside the mathematical domain of an operation (x ∉ [0,1], H > 1/2, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Two discretizations that must share (or nest) a mesh do not.
class GridMismatchError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A dense SPD factorization met a non-positive pivot. Indicates a conditioning bug,
/// not bad user input.
class FactorizationError : public std::runtime_error {
public:
    FactorizationError(const std::string& what, std::size_t pivot_index, double pivot)
        : std::runtime_error(what), pivot_index_(pivot_index), pivot_(pivot) {}

    std::size_t pivot_index() const noexcept { return pivot_index_; }
    double pivot() const noexcept { return pivot_; }

private:
    std::size_t pivot_index_;
    double pivot_;
};

class SingularMatrixError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Iterative solver hit its iteration cap. Carries the last residual it saw.
class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(const std::string& what, double last_residual, int iterations)
        : std::runtime_error(what + " (residual " + std::to_string(last_residual) + " after " +
                             std::to_string(iterations) + " iterations)"),
          last_residual_(last_residual),
          iterations_(iterations) {}

    double last_residual() const noexcept { return last_residual_; }
    int iterations() const noexcept { return iterations_; }

private:
    double last_residual_;
    int iterations_;
};

}  // namespace fbmfem
