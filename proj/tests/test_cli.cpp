#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "fbmfem/cli.hpp"

namespace fbmfem {
namespace {

namespace fs = std::filesystem;
using cli::json;

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run_cli(std::vector<std::string> args, const KernelSumFunction& kernel = kernel_cell_sum) {
    args.insert(args.begin(), "fbmfem");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err, kernel);
    return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

std::vector<std::string> split(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() / ("fbmfem_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
    static inline int counter_ = 0;
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

TEST(SampleNoise, TableAndDeterminism) {
    const auto a = run_cli({"sample-noise", "--n", "4", "--seed", "7", "--hurst", "0.25"});
    ASSERT_EQ(a.code, 0) << a.err;
    const auto ls = lines(a.out);
    ASSERT_EQ(ls.size(), 5u);
    EXPECT_EQ(ls[0], "cell_index,x_left,x_right,increment,density");
    for (std::size_t i = 1; i < ls.size(); ++i) {
        const auto cols = split(ls[i]);
        ASSERT_EQ(cols.size(), 5u);
        EXPECT_EQ(std::stoul(cols[0]), i - 1);
        EXPECT_NEAR(std::stod(cols[4]), 4.0 * std::stod(cols[3]), 1e-14);
    }
    EXPECT_EQ(run_cli({"sample-noise", "--n", "4", "--seed", "7", "--hurst", "0.25"}).out, a.out);
    EXPECT_NE(run_cli({"sample-noise", "--n", "4", "--seed", "8", "--hurst", "0.25"}).out, a.out);
}

TEST(SampleNoise, SelfCheck) {
    const auto r = run_cli({"sample-noise", "--n", "64", "--hurst", "0.5", "--samples", "200", "--self-check"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("PASS"), std::string::npos);
    const auto anti = run_cli({"sample-noise", "--n", "64", "--hurst", "0.2", "--samples", "200", "--self-check"});
    EXPECT_EQ(anti.code, 0) << anti.err;
}

TEST(SampleNoise, EndpointVariance) {
    // W(1) = sum of increments has variance 1 for every H
    constexpr int kRuns = 10000;
    std::vector<double> sq;
    for (int s = 0; s < kRuns; ++s) {
        const auto r = run_cli({"sample-noise", "--n", "4", "--hurst", "0.3", "--seed", std::to_string(s)});
        ASSERT_EQ(r.code, 0);
        double w = 0.0;
        const auto ls = lines(r.out);
        for (std::size_t i = 1; i < ls.size(); ++i) w += std::stod(split(ls[i])[3]);
        sq.push_back(w * w);
    }
    double m = 0.0, v = 0.0;
    for (double x : sq) m += x;
    m /= kRuns;
    for (double x : sq) v += (x - m) * (x - m);
    const double se = std::sqrt(v / (kRuns - 1) / kRuns);
    EXPECT_LT(std::abs(m - 1.0), 4.0 * se) << m;
}

TEST(SampleNoise, JsonFormat) {
    const auto r = run_cli({"sample-noise", "--n", "3", "--format", "json"});
    ASSERT_EQ(r.code, 0);
    const auto j = json::parse(r.out);
    EXPECT_EQ(j.at("cells").size(), 3u);
    EXPECT_EQ(j.at("config").at("command"), "sample-noise");
}

TEST(Solve, PoissonWithoutNoise) {
    const auto r = run_cli({"solve", "--n", "8", "--f", "zero", "--g", "one", "--zero-noise", "--solver", "both"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto ls = lines(r.out);
    ASSERT_GE(ls.size(), 3u);
    EXPECT_EQ(ls[0].rfind("# residual_fem=", 0), 0u);
    EXPECT_EQ(ls[1].rfind("# residual_greens=", 0), 0u);
    EXPECT_EQ(ls[2], "x,u_fem,u_greens");
    ASSERT_EQ(ls.size(), 3u + 9u);
    for (std::size_t k = 3; k < ls.size(); ++k) {
        const auto c = split(ls[k]);
        ASSERT_EQ(c.size(), 3u);
        const double x = std::stod(c[0]);
        EXPECT_NEAR(std::stod(c[1]), x * (1 - x) / 2, 1e-12);
        EXPECT_NEAR(std::stod(c[2]), x * (1 - x) / 2, 1e-10);
    }
    EXPECT_EQ(split(ls[3])[1], "0");
    EXPECT_EQ(split(ls.back())[1], "0");
    EXPECT_EQ(split(ls.back())[2], "0");
}

TEST(Solve, SingleSolverColumns) {
    const auto fem = run_cli({"solve", "--n", "16", "--f", "sin"});
    ASSERT_EQ(fem.code, 0);
    EXPECT_EQ(lines(fem.out)[1], "x,u_fem");
    const auto gr = run_cli({"solve", "--n", "16", "--f", "sin", "--solver", "greens", "--format", "json"});
    ASSERT_EQ(gr.code, 0);
    const auto j = json::parse(gr.out);
    EXPECT_TRUE(j.contains("u_greens"));
    EXPECT_FALSE(j.contains("u_fem"));
    EXPECT_EQ(j.at("u_greens").front(), 0.0);
    EXPECT_EQ(j.at("u_greens").back(), 0.0);
}

TEST(Converge, JsonReport) {
    const auto r = run_cli({"converge", "--ladder", "8:3", "--samples", "6", "--format", "json", "--threads", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    for (const char* key : {"config", "levels", "fitted_rate", "rate_stderr", "wall_time"}) {
        EXPECT_TRUE(j.contains(key)) << key;
    }
    ASSERT_EQ(j.at("levels").size(), 3u);
    for (const auto& l : j.at("levels")) {
        for (const char* key : {"n", "h", "rms_error", "stderr"}) EXPECT_TRUE(l.contains(key)) << key;
    }
    EXPECT_EQ(j.at("reference_n"), 128);
}

TEST(Converge, ConfigEchoRoundTrips) {
    const auto r = run_cli({"converge", "--ladder", "8:3", "--samples", "4", "--format", "json", "--f", "linear:0.5",
                            "--g", "sinpi", "--hurst", "0.35", "--seed", "99", "--solver", "greens"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto echo = json::parse(r.out).at("config");
    const auto cfg = cli::config_from_echo(echo);
    EXPECT_EQ(cli::config_echo(cfg), echo);
    EXPECT_EQ(cfg.f, "linear:0.5");
    EXPECT_EQ(cfg.hurst, 0.35);
    EXPECT_EQ(cfg.seed, 99u);
    EXPECT_EQ(cfg.ladder, "8:3");
}

TEST(Converge, SeedDeterminesOutput) {
    const auto strip = [](const std::string& s) {
        auto j = json::parse(s);
        j.erase("wall_time");
        return j.dump();
    };
    const std::vector<std::string> base{"converge", "--ladder", "8:3", "--samples", "6", "--format", "json"};
    auto a = base, b = base;
    a.insert(a.end(), {"--threads", "1"});
    b.insert(b.end(), {"--threads", "4"});
    EXPECT_EQ(strip(run_cli(a).out), strip(run_cli(b).out));
    auto c = base;
    c.insert(c.end(), {"--seed", "5"});
    EXPECT_NE(strip(run_cli(base).out), strip(run_cli(c).out));
}

TEST(Converge, CsvFooter) {
    const auto r = run_cli({"converge", "--ladder", "8:2", "--samples", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto ls = lines(r.out);
    ASSERT_EQ(ls.size(), 4u);
    EXPECT_EQ(ls[0], "n,h,rms_error,stderr");
    EXPECT_EQ(ls[1].rfind("8,0.125,", 0), 0u);
    EXPECT_EQ(ls[3].rfind("fitted_rate,,", 0), 0u);
}

TEST(Verify, DefaultSuitePasses) {
    const auto r = run_cli({"verify", "--hurst", "0.25", "--threads", "1"});
    EXPECT_EQ(r.code, 0) << r.out;
    const auto ls = lines(r.out);
    EXPECT_EQ(ls[0], "check,target,estimate,z_or_rate,verdict");
    for (std::size_t i = 1; i < ls.size(); ++i) EXPECT_EQ(split(ls[i]).back(), "PASS") << ls[i];
}

TEST(Verify, OffByFactorKernelFails) {
    const auto skewed = [](const UniformGrid& g, HurstIndex h) { return 1.01 * kernel_cell_sum(g, h); };
    const auto r = run_cli({"verify", "--hurst", "0.25", "--threads", "1"}, skewed);
    EXPECT_EQ(r.code, 3);
    int failed = 0;
    for (const auto& l : lines(r.out)) {
        if (l.rfind("kernel_sum", 0) == 0) {
            EXPECT_EQ(split(l).back(), "FAIL");
            ++failed;
        }
    }
    EXPECT_EQ(failed, 3);
}

TEST(Verify, WhiteNoiseSkipsKernelSum) {
    const auto r = run_cli({"verify", "--hurst", "0.5", "--threads", "1", "--format", "json"});
    EXPECT_EQ(r.code, 0);
    int skipped = 0;
    const auto j = json::parse(r.out);
    for (const auto& row : j.at("checks")) {
        if (row.at("verdict") == "SKIPPED") ++skipped;
    }
    EXPECT_EQ(skipped, 3);
}

TEST(Usage, Errors) {
    const auto unknown_f = run_cli({"solve", "--f", "cubic"});
    EXPECT_EQ(unknown_f.code, 1);
    EXPECT_NE(unknown_f.err.find("sqrt-clip"), std::string::npos);
    EXPECT_EQ(run_cli({"solve", "--hurst", "0.75"}).code, 1);
    EXPECT_EQ(run_cli({"solve", "--hurst", "abc"}).code, 1);
    EXPECT_EQ(run_cli({"solve", "--n", "1"}).code, 1);
    EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
    EXPECT_EQ(run_cli({}).code, 1);
    EXPECT_EQ(run_cli({"solve", "--solver", "spectral"}).code, 1);
    EXPECT_EQ(run_cli({"converge", "--ladder", "16"}).code, 1);
    EXPECT_EQ(run_cli({"converge", "--ladder", "16:1"}).code, 1);
    EXPECT_EQ(run_cli({"converge", "--samples", "1"}).code, 1);
    EXPECT_EQ(run_cli({"solve", "--f", "linear:2.5"}).code, 1);
}

TEST(Output, AtomicWrite) {
    TempDir dir;
    const auto target = dir / "noise.csv";
    const auto r = run_cli({"sample-noise", "--n", "4", "--out", target.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(r.out.empty());
    EXPECT_EQ(lines(slurp(target)).size(), 5u);
    for (const auto& e : fs::directory_iterator(dir.path())) EXPECT_EQ(e.path(), target);

    // a failing command leaves an existing file alone and no temporary behind
    const auto missing = dir / "no-such-dir" / "x.csv";
    EXPECT_EQ(run_cli({"sample-noise", "--n", "4", "--out", missing.string()}).code, 2);
    EXPECT_FALSE(fs::exists(missing));
    fs::create_directory(dir / "blocked");
    const auto blocked = run_cli({"sample-noise", "--n", "4", "--out", (dir / "blocked").string()});
    EXPECT_EQ(blocked.code, 2);
    EXPECT_NE(blocked.err.find("blocked"), std::string::npos);
    EXPECT_TRUE(fs::is_directory(dir / "blocked"));
    EXPECT_FALSE(fs::exists(dir / "blocked.tmp"));
}

TEST(Config, FileSuppliesDefaultsAndFlagsWin) {
    TempDir dir;
    const auto cfg = dir / "study.cfg";
    std::ofstream(cfg) << "hurst=0.4\nn=6\nseed=31\nformat=json\n";
    const auto r = run_cli({"sample-noise", "--config", cfg.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    EXPECT_EQ(j.at("config").at("hurst"), 0.4);
    EXPECT_EQ(j.at("cells").size(), 6u);
    const auto over = run_cli({"sample-noise", "--config", cfg.string(), "--n", "3"});
    EXPECT_EQ(json::parse(over.out).at("cells").size(), 3u);
}

int exit_status(const std::string& args) {
    const std::string cmd = std::string(FBMFEM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

TEST(Binary, ExitCodes) {
    EXPECT_EQ(exit_status("solve --n 8 --zero-noise"), 0);
    EXPECT_EQ(exit_status("solve --f nope"), 1);
    EXPECT_EQ(exit_status("--help"), 0);
    EXPECT_EQ(exit_status("sample-noise --n 4 --out /nonexistent-dir/x.csv"), 2);
}

}  // namespace
}  // namespace fbmfem
