#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include "treetasep/rate_field.hpp"

namespace treetasep {

// Weights on {1..rows} x {1..cols}, 1-based like the lattice it models.
// Row index i is the site-time direction, column j the particle.
struct LppEnvironment {
    std::size_t rows = 0, cols = 0;
    std::vector<double> w;     // row-major, (i-1)*cols + (j-1)
    std::vector<double> base;  // Exp(1) draws behind w; empty for hand-made environments
    std::optional<double> lambda;

    double operator()(std::size_t i, std::size_t j) const { return w[(i - 1) * cols + (j - 1)]; }
    double& operator()(std::size_t i, std::size_t j) { return w[(i - 1) * cols + (j - 1)]; }
};

// Validates non-negative finite weights.
LppEnvironment make_env(std::size_t rows, std::size_t cols, std::vector<double> weights);
// i.i.d. Exponential(1) weights.
LppEnvironment iid_env(std::size_t rows, std::size_t cols, std::uint64_t seed);

// n particles (columns) and n + m rows. Cell (i, j) holds
//   w = omega / r^min_{i-j-1}  if j < i,
//   w = omega / lambda         if j = i,
//   w = 0                      if j > i,
// with omega i.i.d. Exponential(1), drawn row-major for every cell.
LppEnvironment build_env(std::uint64_t n, std::uint64_t m, double lambda, const GenerationProfile& profile,
                         std::uint64_t seed);

// A_m = {(i, j) : j >= i - m}.
struct PathRegion {
    std::uint64_t m = 0;
    bool contains(std::size_t i, std::size_t j) const { return i <= j + m; }
};

// Passage times for every cell; NaN where no admissible path exists.
struct PassageTable {
    std::size_t rows = 0, cols = 0;
    std::vector<double> g;
    double operator()(std::size_t i, std::size_t j) const { return g[(i - 1) * cols + (j - 1)]; }
};

PassageTable passage_table(const LppEnvironment& env, std::optional<PathRegion> region = std::nullopt);

// Throws std::out_of_range outside the environment.
double passage_time(const LppEnvironment& env, std::size_t i, std::size_t j);
// Throws std::invalid_argument when (i, j) lies outside A_m.
double passage_time_restricted(const LppEnvironment& env, std::size_t i, std::size_t j, PathRegion region);

// One maximizing path from (1,1) to (i,j), as 1-based cells.
std::vector<std::pair<std::size_t, std::size_t>> optimal_path(const LppEnvironment& env, std::size_t i, std::size_t j,
                                                              std::optional<PathRegion> region = std::nullopt);

struct TailCheckResult {
    double threshold = 0;     // 4 (1 + alpha) (n + M) / min_{|x| <= M} r_x
    std::uint64_t samples = 0;
    std::uint64_t exceed = 0;  // samples with G > threshold
    double exceedance = 0;
    double mean_G = 0;
    std::uint64_t M = 0;
};

// Monte Carlo for G_{n+M, n}(A_M) in build_env(n, M, lambda) against the
// linear-in-(n + M) upper bound.
TailCheckResult tail_check(const GenerationProfile& profile, std::uint64_t n, std::uint64_t M, double alpha,
                           std::uint64_t samples, double lambda, std::uint64_t seed);

// CSV matrices with a "# rows cols" comment header; row i on line i.
void write_env_csv(std::ostream& os, const LppEnvironment& env);
LppEnvironment read_env_csv(std::istream& is);
void write_table_csv(std::ostream& os, const PassageTable& table);

}  // namespace treetasep
