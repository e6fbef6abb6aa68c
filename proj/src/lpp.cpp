#include "treetasep/lpp.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <fmt/format.h>

#include "treetasep/rng.hpp"

namespace treetasep {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_cell(const LppEnvironment& env, std::size_t i, std::size_t j) {
    if (i < 1 || j < 1 || i > env.rows || j > env.cols)
        throw std::out_of_range(fmt::format("lpp: cell ({}, {}) outside {}x{}", i, j, env.rows, env.cols));
}

}  // namespace

LppEnvironment make_env(std::size_t rows, std::size_t cols, std::vector<double> weights) {
    if (weights.size() != rows * cols) throw std::invalid_argument("lpp: weight count does not match dimensions");
    for (double x : weights)
        if (!(x >= 0) || !std::isfinite(x)) throw std::invalid_argument("lpp: weights must be finite and >= 0");
    LppEnvironment env;
    env.rows = rows;
    env.cols = cols;
    env.w = std::move(weights);
    return env;
}

LppEnvironment iid_env(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> w(rows * cols);
    for (double& x : w) x = rng.exponential();
    LppEnvironment env = make_env(rows, cols, w);
    env.base = std::move(w);
    return env;
}

LppEnvironment build_env(std::uint64_t n, std::uint64_t m, double lambda, const GenerationProfile& profile,
                         std::uint64_t seed) {
    if (!(lambda > 0)) throw std::invalid_argument("lpp: lambda must be positive");
    if (n == 0) throw std::invalid_argument("lpp: n must be positive");
    LppEnvironment env;
    env.rows = n + m;
    env.cols = n;
    env.lambda = lambda;
    env.w.resize(env.rows * env.cols);
    env.base.resize(env.rows * env.cols);
    std::vector<double> inv_rmin(env.rows, 0.0);
    for (std::size_t l = 0; l + 1 < env.rows; ++l) inv_rmin[l] = 1.0 / profile.r_min(l);
    Rng rng(seed);
    for (std::size_t i = 1; i <= env.rows; ++i)
        for (std::size_t j = 1; j <= env.cols; ++j) {
            double omega = rng.exponential();
            env.base[(i - 1) * env.cols + (j - 1)] = omega;
            double& x = env(i, j);
            if (j < i)
                x = inv_rmin[i - j - 1] * omega;
            else if (j == i)
                x = omega / lambda;
            else
                x = 0.0;
        }
    return env;
}

PassageTable passage_table(const LppEnvironment& env, std::optional<PathRegion> region) {
    PassageTable t;
    t.rows = env.rows;
    t.cols = env.cols;
    t.g.assign(env.rows * env.cols, kNaN);
    auto in = [&](std::size_t i, std::size_t j) { return !region || region->contains(i, j); };
    for (std::size_t i = 1; i <= env.rows; ++i)
        for (std::size_t j = 1; j <= env.cols; ++j) {
            if (!in(i, j)) continue;
            // Excluded predecessors are skipped by index, never by sentinel.
            bool up = i > 1 && in(i - 1, j);
            bool left = j > 1 && in(i, j - 1);
            double best;
            if (up && left)
                best = std::max(t(i - 1, j), t(i, j - 1));
            else if (up)
                best = t(i - 1, j);
            else if (left)
                best = t(i, j - 1);
            else if (i == 1 && j == 1)
                best = 0.0;
            else
                continue;  // unreachable inside the region
            t.g[(i - 1) * t.cols + (j - 1)] = best + env(i, j);
        }
    return t;
}

double passage_time(const LppEnvironment& env, std::size_t i, std::size_t j) {
    check_cell(env, i, j);
    // Rolling row over the first i rows.
    std::vector<double> row(j, 0.0);
    for (std::size_t a = 1; a <= i; ++a)
        for (std::size_t b = 1; b <= j; ++b) {
            double best = 0;
            if (a > 1 && b > 1)
                best = std::max(row[b - 1], row[b - 2]);
            else if (a > 1)
                best = row[b - 1];
            else if (b > 1)
                best = row[b - 2];
            row[b - 1] = best + env(a, b);
        }
    return row[j - 1];
}

double passage_time_restricted(const LppEnvironment& env, std::size_t i, std::size_t j, PathRegion region) {
    check_cell(env, i, j);
    if (!region.contains(i, j))
        throw std::invalid_argument(fmt::format("lpp: target ({}, {}) outside A_{}", i, j, region.m));
    LppEnvironment sub;
    sub.rows = i;
    sub.cols = j;
    sub.w.resize(i * j);
    for (std::size_t a = 1; a <= i; ++a)
        for (std::size_t b = 1; b <= j; ++b) sub(a, b) = env(a, b);
    double g = passage_table(sub, region)(i, j);
    if (std::isnan(g)) throw std::invalid_argument(fmt::format("lpp: ({}, {}) not reachable inside A_{}", i, j, region.m));
    return g;
}

std::vector<std::pair<std::size_t, std::size_t>> optimal_path(const LppEnvironment& env, std::size_t i, std::size_t j,
                                                              std::optional<PathRegion> region) {
    check_cell(env, i, j);
    PassageTable t = passage_table(env, region);
    if (std::isnan(t(i, j))) throw std::invalid_argument("lpp: target not reachable");
    std::vector<std::pair<std::size_t, std::size_t>> path{{i, j}};
    while (i > 1 || j > 1) {
        bool up = i > 1 && !std::isnan(t(i - 1, j));
        bool left = j > 1 && !std::isnan(t(i, j - 1));
        if (up && (!left || t(i - 1, j) >= t(i, j - 1)))
            --i;
        else
            --j;
        path.emplace_back(i, j);
    }
    std::reverse(path.begin(), path.end());
    return path;
}

TailCheckResult tail_check(const GenerationProfile& profile, std::uint64_t n, std::uint64_t M, double alpha,
                           std::uint64_t samples, double lambda, std::uint64_t seed) {
    if (!(alpha > 0)) throw std::invalid_argument("tail_check: alpha must be positive");
    if (n == 0 || samples == 0) throw std::invalid_argument("tail_check: n and samples must be positive");
    TailCheckResult r;
    r.M = M;
    r.samples = samples;
    r.threshold = 4 * (1 + alpha) * double(n + M) / profile.min_rx(0, M);
    double sum = 0;
    for (std::uint64_t s = 0; s < samples; ++s) {
        LppEnvironment env = build_env(n, M, lambda, profile, derive_seed(seed, s));
        double g = passage_table(env, PathRegion{M})(n + M, n);
        sum += g;
        if (g > r.threshold) ++r.exceed;
    }
    r.exceedance = double(r.exceed) / double(samples);
    r.mean_G = sum / double(samples);
    return r;
}

void write_env_csv(std::ostream& os, const LppEnvironment& env) {
    os << "# " << env.rows << ' ' << env.cols << '\n';
    for (std::size_t i = 1; i <= env.rows; ++i) {
        for (std::size_t j = 1; j <= env.cols; ++j) os << (j > 1 ? "," : "") << fmt::format("{:.17g}", env(i, j));
        os << '\n';
    }
}

LppEnvironment read_env_csv(std::istream& is) {
    std::string line;
    std::size_t rows = 0, cols = 0;
    std::vector<double> w;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ls(line.substr(1));
            ls >> rows >> cols;
            continue;
        }
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) w.push_back(std::stod(cell));
    }
    return make_env(rows, cols, std::move(w));
}

void write_table_csv(std::ostream& os, const PassageTable& table) {
    os << "# " << table.rows << ' ' << table.cols << '\n';
    for (std::size_t i = 1; i <= table.rows; ++i) {
        for (std::size_t j = 1; j <= table.cols; ++j) {
            double g = table(i, j);
            os << (j > 1 ? "," : "") << (std::isnan(g) ? std::string("nan") : fmt::format("{:.17g}", g));
        }
        os << '\n';
    }
}

}  // namespace treetasep
