#pragma once

// Command-line front end: sample-noise, solve, converge and verify. Options are
// declared once on the top-level app and shared by all subcommands; a flat
// key=value file given by --config supplies defaults that flags override.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fbmfem/experiments.hpp"

namespace fbmfem::cli {

using nlohmann::json;

enum ExitCode : int { ok = 0, usage_error = 1, numerical_failure = 2, verification_failure = 3 };

struct CliConfig {
    std::string command;
    double hurst = 0.25;
    std::size_t n = 64;
    /// "n0:levels"; empty means the study default 16:4.
    std::string ladder;
    std::size_t extra = 2;
    std::size_t samples = 200;
    std::uint64_t seed = 20240601;
    std::string f = "sin";
    std::string g = "one";
    std::string solver = "fem";
    std::string sampler = "cholesky";
    std::string out;
    std::string format = "csv";
    bool zero_noise = false;
    bool self_check = false;
    unsigned threads = 0;

    bool operator==(const CliConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Formatting

/// Locale-independent rendering with 17 significant digits.
inline std::string format_double(double v) {
    char buf[40];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    if (ec != std::errc()) throw std::runtime_error("number formatting failed");
    return {buf, ptr};
}

/// Writes `content` to `path` through a temporary file and a rename, so the
/// destination never holds a partial file. An empty path writes to `fallback`.
inline void write_output(const std::string& path, const std::string& content, std::ostream& fallback) {
    if (path.empty()) {
        fallback << content;
        return;
    }
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
        os << content;
        os.flush();
        if (!os) {
            os.close();
            std::error_code ignore;
            fs::remove(tmp, ignore);
            throw std::runtime_error("write to '" + tmp.string() + "' failed");
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        std::error_code ignore;
        fs::remove(tmp, ignore);
        throw std::runtime_error("cannot move output into '" + path + "': " + ec.message());
    }
}

// ---------------------------------------------------------------------------
// Config echo

inline std::pair<std::size_t, std::size_t> parse_ladder(const std::string& spec) {
    const auto colon = spec.find(':');
    std::size_t n0 = 0, levels = 0;
    const auto parse = [](std::string_view s, std::size_t& v) {
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        return ec == std::errc() && p == s.data() + s.size() && !s.empty();
    };
    if (colon == std::string::npos || !parse(std::string_view(spec).substr(0, colon), n0) ||
        !parse(std::string_view(spec).substr(colon + 1), levels)) {
        throw std::invalid_argument("ladder must look like n0:levels, got '" + spec + "'");
    }
    return {n0, levels};
}

inline SolverKind parse_solver(const std::string& s) {
    if (s == "fem") return SolverKind::fem;
    if (s == "greens") return SolverKind::greens;
    if (s == "both") return SolverKind::both;
    throw std::invalid_argument("unknown solver '" + s + "'; valid names: fem, greens, both");
}

inline SamplerMethod parse_sampler(const std::string& s) {
    if (s == "cholesky") return SamplerMethod::cholesky;
    if (s == "circulant") return SamplerMethod::circulant;
    throw std::invalid_argument("unknown sampler '" + s + "'; valid names: cholesky, circulant");
}

inline StudyConfig to_study(const CliConfig& c) {
    StudyConfig s;
    s.hurst = HurstIndex(c.hurst);
    s.f_case = c.f;
    s.g_case = c.g;
    if (!c.ladder.empty()) std::tie(s.n0, s.levels) = parse_ladder(c.ladder);
    s.extra = c.extra;
    s.samples = c.samples;
    s.seed = c.seed;
    s.solver = parse_solver(c.solver);
    s.sampler = parse_sampler(c.sampler);
    return s;
}

inline CliConfig from_study(const StudyConfig& s) {
    CliConfig c;
    c.command = "converge";
    c.hurst = s.hurst.value();
    c.ladder = std::to_string(s.n0) + ":" + std::to_string(s.levels);
    c.extra = s.extra;
    c.samples = s.samples;
    c.seed = s.seed;
    c.f = s.f_case;
    c.g = s.g_case;
    c.solver = solver_name(s.solver);
    c.sampler = s.sampler == SamplerMethod::cholesky ? "cholesky" : "circulant";
    c.format = "json";
    return c;
}

/// Every field that can influence numeric output. The thread count and the output
/// path are left out so reports compare equal across schedules and locations.
inline json config_echo(const CliConfig& c) {
    return json{{"command", c.command}, {"hurst", c.hurst},   {"n", c.n},
                {"ladder", c.ladder},   {"extra", c.extra},   {"samples", c.samples},
                {"seed", c.seed},       {"f", c.f},           {"g", c.g},
                {"solver", c.solver},   {"sampler", c.sampler}, {"format", c.format},
                {"zero_noise", c.zero_noise}, {"self_check", c.self_check}};
}

inline CliConfig config_from_echo(const json& j) {
    CliConfig c;
    j.at("command").get_to(c.command);
    j.at("hurst").get_to(c.hurst);
    j.at("n").get_to(c.n);
    j.at("ladder").get_to(c.ladder);
    j.at("extra").get_to(c.extra);
    j.at("samples").get_to(c.samples);
    j.at("seed").get_to(c.seed);
    j.at("f").get_to(c.f);
    j.at("g").get_to(c.g);
    j.at("solver").get_to(c.solver);
    j.at("sampler").get_to(c.sampler);
    j.at("format").get_to(c.format);
    j.at("zero_noise").get_to(c.zero_noise);
    j.at("self_check").get_to(c.self_check);
    return c;
}

// ---------------------------------------------------------------------------
// Reports

inline json report_to_json(const ConvergenceReport& r, const CliConfig& echo, bool include_wall_time = true) {
    json levels = json::array();
    for (const auto& l : r.levels) {
        levels.push_back({{"n", l.n}, {"h", l.h}, {"rms_error", l.value}, {"stderr", l.std_error}});
    }
    json j{{"config", config_echo(echo)},
           {"quantity", r.quantity},
           {"levels", levels},
           {"fitted_rate", r.fit.slope},
           {"rate_stderr", r.fit.std_error},
           {"fit_residual", r.fit.residual},
           {"reference_n", r.config.solver == SolverKind::both ? r.levels.back().n : r.config.reference_n()},
           {"inversions", r.inversions},
           {"decay", r.decay},
           {"failed_samples", r.failed_samples}};
    if (include_wall_time) j["wall_time"] = r.wall_time;
    return j;
}

inline json report_to_json(const ConvergenceReport& r, bool include_wall_time = true) {
    return report_to_json(r, from_study(r.config), include_wall_time);
}

inline std::string report_to_csv(const ConvergenceReport& r) {
    std::string s = "n,h,rms_error,stderr\n";
    for (const auto& l : r.levels) {
        s += std::to_string(l.n) + "," + format_double(l.h) + "," + format_double(l.value) + "," +
             format_double(l.std_error) + "\n";
    }
    s += "fitted_rate,," + format_double(r.fit.slope) + "," + format_double(r.fit.std_error) + "\n";
    return s;
}

inline std::string verdicts_to_csv(const std::vector<Verdict>& vs) {
    std::string s = "check,target,estimate,z_or_rate,verdict\n";
    for (const auto& v : vs) {
        s += v.check + "," + format_double(v.target) + "," + format_double(v.estimate) + "," +
             format_double(v.statistic) + "," + status_name(v.status) + "\n";
    }
    return s;
}

inline json verdicts_to_json(const std::vector<Verdict>& vs, const CliConfig& echo) {
    json rows = json::array();
    for (const auto& v : vs) {
        rows.push_back({{"check", v.check},
                        {"target", v.target},
                        {"estimate", v.estimate},
                        {"z_or_rate", v.statistic},
                        {"verdict", status_name(v.status)}});
    }
    return {{"config", config_echo(echo)}, {"checks", rows}};
}

// ---------------------------------------------------------------------------
// Subcommands

namespace detail {

/// Lag-1 correlation of H = cfg.hurst increments pooled over `samples` paths
/// against its exact value; z-test at |z| ≤ 4.
inline Verdict lag1_check(const CliConfig& cfg) {
    if (cfg.n < 2) throw std::invalid_argument("self-check needs n ≥ 2");
    const UniformGrid grid(cfg.n);
    const HurstIndex H(cfg.hurst);
    const IncrementSampler sampler(grid, H, parse_sampler(cfg.sampler));
    double sxy = 0.0, sxx = 0.0;
    std::size_t pairs = 0;
    for (std::size_t m = 0; m < cfg.samples; ++m) {
        Rng rng = make_stream(cfg.seed, m);
        const auto p = sampler.draw(rng);
        for (std::size_t i = 0; i + 1 < cfg.n; ++i) {
            sxy += p.increments[i] * p.increments[i + 1];
            sxx += p.increments[i] * p.increments[i];
            ++pairs;
        }
    }
    Verdict v;
    v.check = "lag1_correlation";
    v.target = increment_autocovariance(1, grid.h(), H) / increment_autocovariance(0, grid.h(), H);
    v.estimate = sxy / sxx;
    // large-sample standard error of a lag-1 correlation; pairs within a path are
    // only weakly dependent for H ≤ 1/2
    v.statistic = (v.estimate - v.target) * std::sqrt(static_cast<double>(pairs)) / (1.0 - v.target * v.target);
    v.status = std::abs(v.statistic) <= 4.0 ? VerdictStatus::pass : VerdictStatus::fail;
    return v;
}

inline int cmd_sample_noise(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
    const UniformGrid grid(cfg.n);
    const HurstIndex H(cfg.hurst);
    Rng rng = make_stream(cfg.seed, 0);
    const auto path = sample_increments(grid, H, rng, parse_sampler(cfg.sampler));
    const auto noise = step_noise(path);
    std::string body;
    if (cfg.format == "json") {
        json rows = json::array();
        for (std::size_t i = 0; i < grid.n(); ++i) {
            rows.push_back({{"cell_index", i},
                            {"x_left", grid.cell_left(i)},
                            {"x_right", grid.cell_right(i)},
                            {"increment", path.increments[i]},
                            {"density", noise.density[i]}});
        }
        body = json{{"config", config_echo(cfg)}, {"cells", rows}}.dump(2) + "\n";
    } else {
        body = "cell_index,x_left,x_right,increment,density\n";
        for (std::size_t i = 0; i < grid.n(); ++i) {
            body += std::to_string(i) + "," + format_double(grid.cell_left(i)) + "," +
                    format_double(grid.cell_right(i)) + "," + format_double(path.increments[i]) + "," +
                    format_double(noise.density[i]) + "\n";
        }
    }
    write_output(cfg.out, body, out);
    if (cfg.self_check) {
        const auto v = lag1_check(cfg);
        err << "self-check " << v.check << ": estimate " << format_double(v.estimate) << " target "
            << format_double(v.target) << " z " << format_double(v.statistic) << " " << status_name(v.status)
            << "\n";
        if (v.status != VerdictStatus::pass) return verification_failure;
    }
    return ok;
}

inline int cmd_solve(const CliConfig& cfg, std::ostream& out) {
    if (cfg.n < 2) throw std::invalid_argument("solve needs n ≥ 2");
    const UniformGrid grid(cfg.n);
    const ProblemSpec spec{HurstIndex(cfg.hurst), forcing_from_name(cfg.g), reaction_from_name(cfg.f)};
    const SolverKind kind = parse_solver(cfg.solver);
    IncrementPath path = IncrementPath::zero(grid);
    if (!cfg.zero_noise) {
        Rng rng = make_stream(cfg.seed, 0);
        path = sample_increments(grid, spec.hurst, rng, parse_sampler(cfg.sampler));
    }

    std::vector<double> x(grid.n() + 1);
    for (std::size_t j = 0; j <= grid.n(); ++j) x[j] = grid.node(j);
    std::optional<FemSolution> fem;
    std::optional<HammersteinSolution> greens;
    if (kind != SolverKind::greens) fem = solve_nonlinear_fem(spec, path);
    if (kind != SolverKind::fem) greens = solve_hammerstein(spec, path);
    // Green's solution lives on a refinement; report it at the mesh nodes
    std::vector<double> ug;
    if (greens) {
        for (double xj : x) ug.push_back(greens->u(xj));
        ug.front() = 0.0;
        ug.back() = 0.0;
    }
    const std::vector<double> uf = fem ? fem->nodal() : std::vector<double>{};

    std::string body;
    if (cfg.format == "json") {
        json j{{"config", config_echo(cfg)}, {"x", x}};
        if (fem) {
            j["u_fem"] = uf;
            j["residual_fem"] = fem->residual;
            j["iterations_fem"] = fem->iterations;
        }
        if (greens) {
            j["u_greens"] = ug;
            j["residual_greens"] = greens->residual;
            j["iterations_greens"] = greens->iterations;
        }
        body = j.dump(2) + "\n";
    } else {
        if (fem) {
            body += "# residual_fem=" + format_double(fem->residual) +
                    " iterations_fem=" + std::to_string(fem->iterations) + "\n";
        }
        if (greens) {
            body += "# residual_greens=" + format_double(greens->residual) +
                    " iterations_greens=" + std::to_string(greens->iterations) + "\n";
        }
        body += "x";
        if (fem) body += ",u_fem";
        if (greens) body += ",u_greens";
        body += "\n";
        for (std::size_t j = 0; j <= grid.n(); ++j) {
            body += format_double(x[j]);
            if (fem) body += "," + format_double(uf[j]);
            if (greens) body += "," + format_double(ug[j]);
            body += "\n";
        }
    }
    write_output(cfg.out, body, out);
    return ok;
}

inline int cmd_converge(const CliConfig& cfg, std::ostream& out) {
    const StudyConfig study = to_study(cfg);
    const auto report = run_convergence_study(study, cfg.threads);
    const std::string body =
        cfg.format == "json" ? report_to_json(report, cfg).dump(2) + "\n" : report_to_csv(report);
    write_output(cfg.out, body, out);
    return ok;
}

inline int cmd_verify(const CliConfig& cfg, std::ostream& out, const KernelSumFunction& kernel) {
    VerificationOptions opts;
    opts.hurst = HurstIndex(cfg.hurst);
    opts.seed = cfg.seed;
    opts.threads = cfg.threads;
    opts.kernel = kernel;
    const auto verdicts = run_verification_suite(opts);
    const std::string body =
        cfg.format == "json" ? verdicts_to_json(verdicts, cfg).dump(2) + "\n" : verdicts_to_csv(verdicts);
    write_output(cfg.out, body, out);
    for (const auto& v : verdicts) {
        if (v.status == VerdictStatus::fail) return verification_failure;
    }
    return ok;
}

}  // namespace detail

/// Parses argv and runs the chosen subcommand. `kernel` replaces the kernel-sum
/// routine checked by `verify` (a hook for sensitivity tests).
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
               const KernelSumFunction& kernel = kernel_cell_sum) {
    CliConfig cfg;
    CLI::App app{"Finite elements for a 1D elliptic equation driven by fractional noise"};
    app.fallthrough();
    app.require_subcommand(1, 1);
    app.set_config("--config", "", "Flat key=value file; flags given on the command line win");
    app.add_option("--hurst", cfg.hurst, "Hurst index in (0, 1/2]");
    app.add_option("--n", cfg.n, "Cell count");
    app.add_option("--ladder", cfg.ladder, "Study ladder n0:levels (default 16:4)");
    app.add_option("--extra", cfg.extra, "Reference grid is 2^extra times the finest level");
    app.add_option("--samples", cfg.samples, "Monte Carlo sample count");
    app.add_option("--seed", cfg.seed, "Master seed");
    app.add_option("--f", cfg.f, std::string("Reaction: ") + kReactionNames);
    app.add_option("--g", cfg.g, std::string("Forcing: ") + kForcingNames);
    app.add_option("--solver", cfg.solver, "fem, greens or both")->check(CLI::IsMember({"fem", "greens", "both"}));
    app.add_option("--sampler", cfg.sampler, "cholesky or circulant")
        ->check(CLI::IsMember({"cholesky", "circulant"}));
    app.add_option("--out", cfg.out, "Output path (default: standard output)");
    app.add_option("--format", cfg.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    app.add_option("--threads", cfg.threads, "Worker threads (0: all cores)");
    app.add_flag("--zero-noise", cfg.zero_noise, "Solve with the noise switched off");
    app.add_flag("--self-check", cfg.self_check, "sample-noise: lag-1 correlation test over --samples paths");
    auto* sample = app.add_subcommand("sample-noise", "Draw one increment path");
    auto* solve = app.add_subcommand("solve", "Solve for one noise path");
    auto* converge = app.add_subcommand("converge", "Monte Carlo strong convergence study");
    auto* verify = app.add_subcommand("verify", "Run the verification suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return usage_error;
    }
    cfg.command = app.get_subcommands().front()->get_name();

    // argument-level validation before any computation
    try {
        (void)HurstIndex(cfg.hurst);
        (void)reaction_from_name(cfg.f);
        (void)forcing_from_name(cfg.g);
        if (cfg.n < 1) throw std::invalid_argument("--n must be positive");
        if (*converge) to_study(cfg).validate();
        if (cfg.self_check && cfg.samples < 1) throw std::invalid_argument("--samples must be positive");
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return usage_error;
    }

    try {
        if (*sample) return detail::cmd_sample_noise(cfg, out, err);
        if (*solve) return detail::cmd_solve(cfg, out);
        if (*converge) return detail::cmd_converge(cfg, out);
        if (*verify) return detail::cmd_verify(cfg, out, kernel);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return usage_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return numerical_failure;
    }
    return usage_error;
}

}  // namespace fbmfem::cli
