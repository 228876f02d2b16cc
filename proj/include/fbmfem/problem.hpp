#pragma once

// Coefficients of  -u'' + f(x, u) = g + Ẇ  on (0, 1),  u(0) = u(1) = 0.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>

#include "fbmfem/detail/random.hpp"
#include "fbmfem/errors.hpp"
#include "fbmfem/noise.hpp"

namespace fbmfem {

/// Poincaré constant of (0, 1) used in the admissibility threshold L < γ.
inline constexpr double kPoincareGamma = 2.0;

/// |f(x,r) - f(x,s)| ≤ L|r - s|.
struct Lipschitz {
    double L;
};

/// Monotone-type (f(x,r)-f(x,s))(r-s) ≥ -L(r-s)², bounded by `bound`, with linear
/// growth |f(x,r)-f(x,s)| ≤ β(1 + |r-s|).
struct MonotoneBounded {
    double L;
    double bound;
    double beta;
};

using ReactionClass = std::variant<Lipschitz, MonotoneBounded>;

/// Reaction f(x, r) with its admissibility class. Construction rejects L ≥ 2 and
/// spot-checks the class invariants on random (x, r, s) triples.
class ReactionTerm {
public:
    using Evaluator = std::function<double(double x, double r)>;

    ReactionTerm(std::string name, Evaluator f, ReactionClass cls, Evaluator derivative = {})
        : name_(std::move(name)), f_(std::move(f)), df_(std::move(derivative)), cls_(cls) {
        if (!f_) throw std::invalid_argument("reaction term needs an evaluator");
        if (!(monotone_constant() < kPoincareGamma) || monotone_constant() < 0.0) {
            throw DomainError("reaction '" + name_ + "': constant L = " +
                              std::to_string(monotone_constant()) + " violates 0 ≤ L < 2");
        }
        spot_check();
    }

    static ReactionTerm zero() {
        return {"zero", [](double, double) { return 0.0; }, Lipschitz{0.0},
                [](double, double) { return 0.0; }};
    }
    /// f(x, r) = λ r
    static ReactionTerm linear(double lambda) {
        return {"linear:" + format_lambda(lambda), [lambda](double, double r) { return lambda * r; },
                Lipschitz{std::abs(lambda)}, [lambda](double, double) { return lambda; }};
    }
    /// f(x, r) = sin r
    static ReactionTerm sine() {
        return {"sin", [](double, double r) { return std::sin(r); }, Lipschitz{1.0},
                [](double, double r) { return std::cos(r); }};
    }
    /// f(x, r) = sign(r) min(√|r|, 1): bounded, nondecreasing, not Lipschitz at 0.
    static ReactionTerm sqrt_clip() {
        return {"sqrt-clip",
                [](double, double r) {
                    const double v = std::min(std::sqrt(std::abs(r)), 1.0);
                    return r < 0.0 ? -v : v;
                },
                MonotoneBounded{0.0, 1.0, 2.0},
                // infinite at r = 0; solvers clamp it
                [](double, double r) {
                    const double a = std::abs(r);
                    return a >= 1.0 ? 0.0 : 0.5 / std::sqrt(a);
                }};
    }

    double operator()(double x, double r) const { return f_(x, r); }
    bool has_derivative() const noexcept { return static_cast<bool>(df_); }
    double derivative(double x, double r) const { return df_(x, r); }

    const std::string& name() const noexcept { return name_; }
    const ReactionClass& classification() const noexcept { return cls_; }
    bool is_lipschitz() const noexcept { return std::holds_alternative<Lipschitz>(cls_); }

    /// L in the monotone-type condition.
    double monotone_constant() const noexcept {
        return std::visit([](const auto& c) { return c.L; }, cls_);
    }

    /// Picard damping min(1, 2/(2+L)).
    double default_damping() const noexcept { return std::min(1.0, 2.0 / (2.0 + monotone_constant())); }

private:
    static std::string format_lambda(double v) {
        std::string s = std::to_string(v);
        s.erase(s.find_last_not_of('0') + 1);
        if (!s.empty() && s.back() == '.') s.pop_back();
        return s;
    }

    void spot_check() const {
        Rng rng(0x5eedULL);
        const double L = monotone_constant();
        const double beta = std::visit(
            [](const auto& c) {
                using T = std::decay_t<decltype(c)>;
                if constexpr (std::is_same_v<T, Lipschitz>) {
                    return std::max(c.L, 1e-300);
                } else {
                    return c.beta;
                }
            },
            cls_);
        for (int t = 0; t < 256; ++t) {
            const double x = uniform_open01(rng);
            const double r = 8.0 * (uniform_open01(rng) - 0.5);
            const double s = 8.0 * (uniform_open01(rng) - 0.5);
            const double fr = f_(x, r), fs = f_(x, s);
            const double tol = 1e-12 * (1.0 + std::abs(fr) + std::abs(fs));
            if (std::abs(f_(x, 0.0)) > 1e-14) {
                throw DomainError("reaction '" + name_ + "' must satisfy f(x, 0) = 0");
            }
            if ((fr - fs) * (r - s) < -L * (r - s) * (r - s) - tol) {
                throw DomainError("reaction '" + name_ + "' violates the monotone-type condition");
            }
            if (std::abs(fr - fs) > beta * (1.0 + std::abs(r - s)) + tol) {
                throw DomainError("reaction '" + name_ + "' violates the linear growth condition");
            }
            if (is_lipschitz() && std::abs(fr - fs) > L * std::abs(r - s) + tol) {
                throw DomainError("reaction '" + name_ + "' violates its Lipschitz bound");
            }
        }
    }

    std::string name_;
    Evaluator f_;
    Evaluator df_;
    ReactionClass cls_;
};

/// Deterministic forcing g(x).
struct Forcing {
    std::string name;
    std::function<double(double)> g;

    double operator()(double x) const { return g(x); }

    static Forcing zero() { return {"zero", [](double) { return 0.0; }}; }
    static Forcing one() { return {"one", [](double) { return 1.0; }}; }
    static Forcing sinpi() { return {"sinpi", [](double x) { return std::sin(std::numbers::pi * x); }}; }
};

struct ProblemSpec {
    HurstIndex hurst;
    Forcing forcing = Forcing::zero();
    ReactionTerm reaction = ReactionTerm::zero();
};

inline constexpr const char* kReactionNames = "zero, linear:<lambda>, sin, sqrt-clip";
inline constexpr const char* kForcingNames = "zero, one, sinpi";

/// Named reaction case: zero, linear:λ, sin or sqrt-clip.
inline ReactionTerm reaction_from_name(const std::string& name) {
    if (name == "zero") return ReactionTerm::zero();
    if (name == "sin") return ReactionTerm::sine();
    if (name == "sqrt-clip") return ReactionTerm::sqrt_clip();
    if (name.rfind("linear:", 0) == 0) {
        const char* first = name.data() + 7;
        const char* last = name.data() + name.size();
        double lambda = 0.0;
        const auto [ptr, ec] = std::from_chars(first, last, lambda);
        if (ec == std::errc() && ptr == last && first != last) return ReactionTerm::linear(lambda);
    }
    throw std::invalid_argument("unknown reaction '" + name + "'; valid names: " + kReactionNames);
}

inline Forcing forcing_from_name(const std::string& name) {
    if (name == "zero") return Forcing::zero();
    if (name == "one") return Forcing::one();
    if (name == "sinpi") return Forcing::sinpi();
    throw std::invalid_argument("unknown forcing '" + name + "'; valid names: " + kForcingNames);
}

}  // namespace fbmfem
