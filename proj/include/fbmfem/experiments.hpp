#pragma once

// Monte Carlo studies on coupled paths, rate regression and the verification
// checks. Every sample draws from its own stream (master seed, sample index), and
// per-sample results are reduced in index order, so output does not depend on the
// thread count.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fbmfem/detail/linalg.hpp"
#include "fbmfem/detail/numeric.hpp"
#include "fbmfem/detail/random.hpp"
#include "fbmfem/errors.hpp"
#include "fbmfem/fem.hpp"
#include "fbmfem/greens.hpp"
#include "fbmfem/noise.hpp"
#include "fbmfem/problem.hpp"

namespace fbmfem {

// ---------------------------------------------------------------------------
// Rate regression

struct RateFit {
    double slope = 0.0;
    double std_error = 0.0;
    /// RMS of the regression residuals in log₂ units.
    double residual = 0.0;
};

/// Least-squares slope of log₂(error) against log₂(h).
inline RateFit estimate_rate(std::span<const double> hs, std::span<const double> errors) {
    if (hs.size() != errors.size()) throw std::invalid_argument("estimate_rate: size mismatch");
    if (hs.size() < 2) throw std::invalid_argument("estimate_rate needs at least two levels");
    const std::size_t k = hs.size();
    std::vector<double> x(k), y(k);
    for (std::size_t i = 0; i < k; ++i) {
        if (!(hs[i] > 0.0) || !(errors[i] > 0.0)) {
            throw std::invalid_argument("estimate_rate needs positive h and errors");
        }
        x[i] = std::log2(hs[i]);
        y[i] = std::log2(errors[i]);
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(k);
    my /= static_cast<double>(k);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) throw std::invalid_argument("estimate_rate: all h are equal");
    RateFit fit;
    fit.slope = sxy / sxx;
    double ssr = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double r = y[i] - my - fit.slope * (x[i] - mx);
        ssr += r * r;
    }
    fit.std_error = k > 2 ? std::sqrt(ssr / static_cast<double>(k - 2) / sxx) : 0.0;
    fit.residual = std::sqrt(ssr / static_cast<double>(k));
    return fit;
}

// ---------------------------------------------------------------------------
// Parallel sample loop

namespace detail {

inline unsigned resolve_threads(unsigned threads) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    return threads;
}

/// Calls fn(i) for i in [0, count) on up to `threads` workers. Exceptions are
/// captured per index and returned; fn must write only to its own slot.
template <class Fn>
std::vector<std::exception_ptr> parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned t = std::min<std::size_t>(resolve_threads(threads), std::max<std::size_t>(count, 1));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < t; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    return errors;
}

struct MeanAndError {
    double mean = 0.0;
    double std_error = 0.0;
};

inline MeanAndError mean_and_error(std::span<const double> xs) {
    CompensatedSum s;
    for (double x : xs) s.add(x);
    const double n = static_cast<double>(xs.size());
    const double mean = s.value() / n;
    CompensatedSum v;
    for (double x : xs) v.add((x - mean) * (x - mean));
    const double var = xs.size() > 1 ? v.value() / (n - 1.0) : 0.0;
    return {mean, std::sqrt(var / n)};
}

/// Throws unless each coarse increment is the sum of the fine ones it covers.
inline void check_coupling(const IncrementPath& fine, const IncrementPath& coarse) {
    const std::size_t ratio = fine.grid.n() / coarse.grid.n();
    double w_fine = 0.0, w_coarse = 0.0;
    for (std::size_t j = 0; j < coarse.grid.n(); ++j) {
        for (std::size_t k = 0; k < ratio; ++k) w_fine += fine.increments[j * ratio + k];
        w_coarse += coarse.increments[j];
        if (std::abs(w_fine - w_coarse) > 1e-12 * (1.0 + std::abs(w_fine))) {
            throw std::logic_error("coarse path is not the aggregate of the reference path");
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Studies

enum class SolverKind { fem, greens, both };

inline const char* solver_name(SolverKind s) {
    switch (s) {
        case SolverKind::fem: return "fem";
        case SolverKind::greens: return "greens";
        case SolverKind::both: return "both";
    }
    return "?";
}

struct StudyConfig {
    HurstIndex hurst{0.25};
    std::string f_case = "sin";
    std::string g_case = "one";
    /// Ladder n0·2^ℓ for ℓ = 0 .. levels-1.
    std::size_t n0 = 16;
    std::size_t levels = 4;
    /// Reference grid n0·2^(levels-1+extra).
    std::size_t extra = 2;
    std::size_t samples = 200;
    std::uint64_t seed = 20240601;
    /// fem or greens: error against the same scheme on the reference grid.
    /// both: the difference between the two solvers at each level.
    SolverKind solver = SolverKind::fem;
    SamplerMethod sampler = SamplerMethod::cholesky;
    /// Failed samples tolerated before the study aborts.
    std::size_t max_failed_samples = 0;

    std::vector<std::size_t> ladder() const {
        std::vector<std::size_t> ns(levels);
        for (std::size_t l = 0; l < levels; ++l) ns[l] = n0 << l;
        return ns;
    }
    std::size_t reference_n() const { return n0 << (levels - 1 + extra); }

    void validate() const {
        if (n0 < 2) throw std::invalid_argument("ladder must start at n0 ≥ 2");
        if (levels < 2) throw std::invalid_argument("a rate needs at least two levels");
        if (extra < 1) throw std::invalid_argument("reference level must be finer than the ladder (extra ≥ 1)");
        if (samples < 2) throw std::invalid_argument("need at least two samples");
        if (levels - 1 + extra >= 40) throw std::invalid_argument("ladder too deep");
        (void)reaction_from_name(f_case);
        (void)forcing_from_name(g_case);
    }

    ProblemSpec problem() const { return {hurst, forcing_from_name(g_case), reaction_from_name(f_case)}; }
};

struct LevelResult {
    std::size_t n = 0;
    double h = 0.0;
    double value = 0.0;
    double std_error = 0.0;
};

struct ConvergenceReport {
    StudyConfig config;
    /// What `value` holds at each level.
    std::string quantity;
    std::vector<LevelResult> levels;
    RateFit fit;
    /// Number of levels whose value does not drop below the previous one.
    std::size_t inversions = 0;
    /// "ok", "flagged" (one inversion at the finest level), "failed", or "n/a" for
    /// quantities that are not expected to decrease.
    std::string decay;
    std::size_t failed_samples = 0;
    double wall_time = 0.0;
};

/// A sample failed inside a study.
class SampleFailure : public std::runtime_error {
public:
    SampleFailure(std::size_t sample, const std::string& what)
        : std::runtime_error("sample " + std::to_string(sample) + ": " + what), sample_(sample) {}
    std::size_t sample() const noexcept { return sample_; }

private:
    std::size_t sample_;
};

/// Per-level sample statistics for `per_sample(top_path, out)`, which fills one
/// value per ladder level. The top path lives on `top_n` cells.
template <class PerSample>
std::vector<LevelResult> monte_carlo_levels(const StudyConfig& cfg, std::size_t top_n, unsigned threads,
                                            PerSample&& per_sample, std::size_t* failed = nullptr) {
    const auto ns = cfg.ladder();
    const IncrementSampler sampler(UniformGrid(top_n), cfg.hurst, cfg.sampler);
    std::vector<std::vector<double>> values(cfg.samples);
    const auto errors = detail::parallel_for(cfg.samples, threads, [&](std::size_t m) {
        Rng rng = make_stream(cfg.seed, m);
        const IncrementPath top = sampler.draw(rng);
        std::vector<double> out(ns.size(), 0.0);
        per_sample(top, out);
        values[m] = std::move(out);
    });

    std::size_t fails = 0;
    for (std::size_t m = 0; m < cfg.samples; ++m) {
        if (!errors[m]) continue;
        ++fails;
        if (fails > cfg.max_failed_samples) {
            try {
                std::rethrow_exception(errors[m]);
            } catch (const std::exception& e) {
                throw SampleFailure(m, e.what());
            }
        }
    }
    if (cfg.samples - fails < 2) throw std::runtime_error("fewer than two samples succeeded");
    if (failed) *failed = fails;

    std::vector<LevelResult> out(ns.size());
    std::vector<double> column;
    for (std::size_t l = 0; l < ns.size(); ++l) {
        column.clear();
        for (std::size_t m = 0; m < cfg.samples; ++m) {
            if (!errors[m]) column.push_back(values[m][l]);
        }
        const auto me = detail::mean_and_error(column);
        out[l] = {ns[l], 1.0 / static_cast<double>(ns[l]), me.mean, me.std_error};
    }
    return out;
}

namespace detail {

inline GridFunction solve_with(SolverKind kind, const ProblemSpec& spec, const IncrementPath& path) {
    if (kind == SolverKind::greens) return solve_hammerstein(spec, path).u;
    return solve_nonlinear_fem(spec, path).function();
}

/// Mean squares → RMS, with the delta-method standard error.
inline void to_rms(std::vector<LevelResult>& levels) {
    for (auto& l : levels) {
        const double rms = std::sqrt(l.value);
        l.std_error = rms > 0.0 ? l.std_error / (2.0 * rms) : 0.0;
        l.value = rms;
    }
}

inline void finish_report(ConvergenceReport& r) {
    std::vector<double> hs, vs;
    for (const auto& l : r.levels) {
        hs.push_back(l.h);
        vs.push_back(l.value);
    }
    r.fit = estimate_rate(hs, vs);
    r.inversions = 0;
    bool finest_only = true;
    for (std::size_t l = 1; l < r.levels.size(); ++l) {
        if (!(r.levels[l].value < r.levels[l - 1].value)) {
            ++r.inversions;
            if (l + 1 != r.levels.size()) finest_only = false;
        }
    }
    r.decay = r.inversions == 0 ? "ok" : (r.inversions == 1 && finest_only ? "flagged" : "failed");
}

}  // namespace detail

/// Strong-error study: RMS of ‖u_ref - u_level‖ on coupled paths, where u_ref is the
/// same scheme on the reference grid. With solver = both, the RMS of
/// ‖u_fem - u_greens‖ per level instead (no reference solve).
inline ConvergenceReport run_convergence_study(const StudyConfig& cfg, unsigned threads = 0) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const ProblemSpec spec = cfg.problem();
    const auto ns = cfg.ladder();
    ConvergenceReport report;
    report.config = cfg;

    if (cfg.solver == SolverKind::both) {
        report.quantity = "rms_fem_greens_difference";
        report.levels = monte_carlo_levels(
            cfg, ns.back(), threads,
            [&](const IncrementPath& top, std::vector<double>& out) {
                for (std::size_t l = 0; l < ns.size(); ++l) {
                    const auto path = aggregate_increments(top, ns.back() / ns[l]);
                    detail::check_coupling(top, path);
                    const double d = discrete_l2_error(detail::solve_with(SolverKind::fem, spec, path),
                                                       detail::solve_with(SolverKind::greens, spec, path));
                    out[l] = d * d;
                }
            },
            &report.failed_samples);
    } else {
        report.quantity = "rms_l2_error";
        const std::size_t ref_n = cfg.reference_n();
        report.levels = monte_carlo_levels(
            cfg, ref_n, threads,
            [&](const IncrementPath& top, std::vector<double>& out) {
                const GridFunction ref = detail::solve_with(cfg.solver, spec, top);
                for (std::size_t l = 0; l < ns.size(); ++l) {
                    const auto path = aggregate_increments(top, ref_n / ns[l]);
                    detail::check_coupling(top, path);
                    const double e = discrete_l2_error(ref, detail::solve_with(cfg.solver, spec, path));
                    out[l] = e * e;
                }
            },
            &report.failed_samples);
    }
    detail::to_rms(report.levels);
    detail::finish_report(report);
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

/// Mean of ‖u_h‖₁² (full H¹ norm) of the FEM solution per level.
inline ConvergenceReport run_h1_norm_study(const StudyConfig& cfg, unsigned threads = 0) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const ProblemSpec spec = cfg.problem();
    const auto ns = cfg.ladder();
    ConvergenceReport report;
    report.config = cfg;
    report.quantity = "mean_h1_norm_squared";
    report.levels = monte_carlo_levels(
        cfg, ns.back(), threads,
        [&](const IncrementPath& top, std::vector<double>& out) {
            for (std::size_t l = 0; l < ns.size(); ++l) {
                const auto path = aggregate_increments(top, ns.back() / ns[l]);
                out[l] = h1_norm_squared(solve_nonlinear_fem(spec, path).function());
            }
        },
        &report.failed_samples);
    detail::finish_report(report);
    report.decay = "n/a";  // a growing quantity
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

/// Mean of ‖(R_h uⁿ - u_h)'‖² per level n. uⁿ, the exact solution for the level's
/// step noise, is proxied by the FEM solution for that same noise on a mesh twice
/// as fine; R_h is the Ritz projection onto the level mesh.
inline ConvergenceReport run_superconvergence_study(const StudyConfig& cfg, unsigned threads = 0) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const ProblemSpec spec = cfg.problem();
    const auto ns = cfg.ladder();
    ConvergenceReport report;
    report.config = cfg;
    report.quantity = "mean_ritz_gap_h1_squared";
    report.levels = monte_carlo_levels(
        cfg, ns.back(), threads,
        [&](const IncrementPath& top, std::vector<double>& out) {
            for (std::size_t l = 0; l < ns.size(); ++l) {
                const auto path = aggregate_increments(top, ns.back() / ns[l]);
                FemOptions fine;
                fine.mesh_n = 2 * ns[l];
                const GridFunction proxy = solve_nonlinear_fem(spec, path, fine).function();
                const GridFunction rh = ritz_projection(proxy, path.grid).function();
                const GridFunction uh = solve_nonlinear_fem(spec, path).function();
                const double d = discrete_h1_error(rh, uh);
                out[l] = d * d;
            }
        },
        &report.failed_samples);
    detail::finish_report(report);
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

// ---------------------------------------------------------------------------
// Verification checks

enum class VerdictStatus { pass, fail, skipped };

inline const char* status_name(VerdictStatus s) {
    switch (s) {
        case VerdictStatus::pass: return "PASS";
        case VerdictStatus::fail: return "FAIL";
        case VerdictStatus::skipped: return "SKIPPED";
    }
    return "?";
}

struct Verdict {
    std::string check;
    double target = 0.0;
    double estimate = 0.0;
    /// z-score for Monte Carlo checks, fitted rate for sweeps, relative error otherwise.
    double statistic = 0.0;
    VerdictStatus status = VerdictStatus::fail;
};

/// MC mean of ‖Ẇⁿ‖² against h^{2H-2}; passes when |z| ≤ 4.
inline Verdict verify_noise_norm(std::size_t n, HurstIndex hurst, std::size_t samples, std::uint64_t seed,
                                 unsigned threads = 1) {
    if (samples < 2) throw std::invalid_argument("need at least two samples");
    const UniformGrid grid(n);
    const IncrementSampler sampler(grid, hurst);
    std::vector<double> norms(samples);
    const auto errors = detail::parallel_for(samples, threads, [&](std::size_t m) {
        Rng rng = make_stream(seed, m);
        norms[m] = step_noise(sampler.draw(rng)).l2_norm_squared();
    });
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    const auto me = detail::mean_and_error(norms);
    Verdict v;
    v.check = "noise_norm(n=" + std::to_string(n) + ")";
    v.target = std::pow(grid.h(), hurst.two_h() - 2.0);
    v.estimate = me.mean;
    v.statistic = (me.mean - v.target) / me.std_error;
    v.status = std::abs(v.statistic) <= 4.0 ? VerdictStatus::pass : VerdictStatus::fail;
    return v;
}

/// MC second moment of I(f) = Σ f_k ΔW_k over f's own partition against Ψ(f, f).
inline Verdict verify_isometry(const std::string& name, const StepFunction& f, HurstIndex hurst,
                               std::size_t samples, std::uint64_t seed, unsigned threads = 1) {
    if (samples < 2) throw std::invalid_argument("need at least two samples");
    const auto factor = detail::cholesky(partition_increment_covariance(f.breakpoints(), hurst));
    const std::size_t k = f.pieces();
    std::vector<double> squares(samples);
    const auto errors = detail::parallel_for(samples, threads, [&](std::size_t m) {
        Rng rng = make_stream(seed, m);
        std::vector<double> z(k), dw(k);
        fill_standard_normals(rng, z);
        detail::lower_multiply(factor, z, dw);
        double integral = 0.0;
        for (std::size_t i = 0; i < k; ++i) integral += f.values()[i] * dw[i];
        squares[m] = integral * integral;
    });
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    const auto me = detail::mean_and_error(squares);
    Verdict v;
    v.check = "isometry(" + name + ")";
    v.target = ito_isometry(f, f, hurst);
    v.estimate = me.mean;
    v.statistic = (me.mean - v.target) / me.std_error;
    v.status = std::abs(v.statistic) <= 4.0 ? VerdictStatus::pass : VerdictStatus::fail;
    return v;
}

/// Fitted decay rate of max over `probes` of E|Eⁿ(x)|² along `ladder`; passes
/// when it is at least 2H+1 - 0.15.
inline Verdict verify_en_decay(HurstIndex hurst, std::span<const std::size_t> ladder,
                               std::span<const double> probes) {
    std::vector<double> hs, worst;
    for (std::size_t n : ladder) {
        const UniformGrid grid(n);
        double m = 0.0;
        for (double x : probes) m = std::max(m, en_second_moment(x, grid, hurst));
        hs.push_back(grid.h());
        worst.push_back(m);
    }
    const auto fit = estimate_rate(hs, worst);
    Verdict v;
    v.check = "en_decay";
    v.target = hurst.two_h() + 1.0;
    v.estimate = worst.back();
    v.statistic = fit.slope;
    v.status = fit.slope >= v.target - 0.15 ? VerdictStatus::pass : VerdictStatus::fail;
    return v;
}

using KernelSumFunction = std::function<double(const UniformGrid&, HurstIndex)>;

/// The cell-pair kernel sum against the increment covariances: the covariance of
/// ΔW_i and ΔW_j (i ≠ j) is H(2H-1) times the kernel integral over D_i × D_j. Also
/// checks the bound h^{2H-1}/(H(1-2H)). Skipped for H = 1/2, where the kernel
/// constant vanishes.
inline Verdict verify_kernel_sum(std::size_t n, HurstIndex hurst, const KernelSumFunction& kernel = kernel_cell_sum) {
    Verdict v;
    v.check = "kernel_sum(n=" + std::to_string(n) + ")";
    if (hurst.is_white()) {
        v.status = VerdictStatus::skipped;
        return v;
    }
    const UniformGrid grid(n);
    const DenseMatrix cov = increment_covariance_matrix(grid, hurst);
    detail::CompensatedSum off;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) off.add(cov(i, j));
        }
    }
    const double H = hurst.value();
    v.target = off.value() / (H * (2.0 * H - 1.0));
    v.estimate = kernel(grid, hurst);
    v.statistic = v.target != 0.0 ? std::abs(v.estimate - v.target) / std::abs(v.target) : std::abs(v.estimate);
    const bool bounded = v.estimate <= kernel_cell_sum_bound(grid, hurst) * (1.0 + 1e-12);
    v.status = v.statistic <= 1e-6 && bounded ? VerdictStatus::pass : VerdictStatus::fail;
    return v;
}

/// Rate at which the FEM and Green's solutions approach each other on coupled
/// paths; passes when it is at least min(H+1/2, 1) - 0.2.
inline Verdict verify_solver_agreement(StudyConfig cfg, unsigned threads = 0) {
    cfg.solver = SolverKind::both;
    const auto report = run_convergence_study(cfg, threads);
    Verdict v;
    v.check = "solver_agreement(" + cfg.f_case + ")";
    v.target = std::min(cfg.hurst.value() + 0.5, 1.0);
    v.estimate = report.levels.back().value;
    v.statistic = report.fit.slope;
    v.status = report.fit.slope >= v.target - 0.2 ? VerdictStatus::pass : VerdictStatus::fail;
    return v;
}

struct VerificationOptions {
    HurstIndex hurst{0.25};
    std::uint64_t seed = 20240601;
    std::size_t noise_samples = 10000;
    std::size_t isometry_samples = 100000;
    KernelSumFunction kernel = kernel_cell_sum;
    unsigned threads = 0;
};

/// Noise-norm identity, isometry on three step functions, Eⁿ decay and the
/// kernel sum, all at the given H.
inline std::vector<Verdict> run_verification_suite(const VerificationOptions& opts) {
    const HurstIndex H = opts.hurst;
    std::vector<Verdict> out;
    out.push_back(verify_noise_norm(64, H, opts.noise_samples, opts.seed, opts.threads));
    out.push_back(verify_isometry("one", StepFunction::constant(1.0), H, opts.isometry_samples, opts.seed + 1,
                                  opts.threads));
    out.push_back(verify_isometry("left_half", StepFunction({0.0, 0.5, 1.0}, {1.0, 0.0}), H,
                                  opts.isometry_samples, opts.seed + 2, opts.threads));
    out.push_back(verify_isometry("plus_minus", StepFunction({0.0, 0.5, 1.0}, {1.0, -1.0}), H,
                                  opts.isometry_samples, opts.seed + 3, opts.threads));
    const std::vector<std::size_t> ladder{16, 32, 64, 128, 256};
    std::vector<double> probes;
    for (int k = 1; k <= 9; ++k) probes.push_back(0.1 * k);
    out.push_back(verify_en_decay(H, ladder, probes));
    for (std::size_t n : {4u, 16u, 64u}) out.push_back(verify_kernel_sum(n, H, opts.kernel));
    return out;
}

}  // namespace fbmfem
