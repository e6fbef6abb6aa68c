#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "treetasep/engine.hpp"
#include "treetasep/gw_tree.hpp"
#include "treetasep/rate_field.hpp"

namespace treetasep {

// Generations <= depth of a tree, reservoir lambda at the root, and exits at
// rate r_x from every x in generation `depth`. Sites are listed generation by
// generation in id order, so the sites of depth n are a prefix of depth n+1.
struct Truncation {
    std::uint32_t depth = 0;
    double lambda = 0;
    std::vector<VertexId> vertices;
    std::vector<int> parent;          // site index of the parent, -1 for the root
    std::vector<double> in_rate;      // rate of the edge into the site, 0 for the root
    std::vector<double> exit_rate;    // r_x at the deepest generation, else 0
    std::vector<std::uint32_t> generation;

    std::size_t sites() const { return vertices.size(); }
};

Truncation make_truncation(const Tree& tree, const RateFamily& family, std::uint32_t depth, double lambda);

// Calls f(target_state, rate) for every transition out of `state` (bit k = site k).
template <class F>
void for_each_transition(const Truncation& tr, std::uint32_t state, F&& f) {
    if (!(state & 1u) && tr.lambda > 0) f(state | 1u, tr.lambda);
    for (std::size_t k = 1; k < tr.sites(); ++k) {
        std::uint32_t from = 1u << tr.parent[k], to = 1u << k;
        if ((state & from) && !(state & to)) f((state & ~from) | to, tr.in_rate[k]);
    }
    for (std::size_t k = 0; k < tr.sites(); ++k)
        if (tr.exit_rate[k] > 0 && (state & (1u << k))) f(state & ~(1u << k), tr.exit_rate[k]);
}

struct StationaryDist {
    std::size_t sites = 0;
    std::vector<double> p;   // by state bitmask
    double residual = 0;     // max |(Q^T p)_s|
    std::string method;      // dense-lu up to 2^10 states, else bicgstab
    double marginal(std::size_t site) const;
};

inline constexpr std::size_t kMaxExactSites = 20;

// Throws std::length_error beyond kMaxExactSites sites (use simulation instead).
StationaryDist exact_stationary(const Truncation& tr);

// Union of principal filters {eta : eta >= g}; f = indicator of the union.
struct UpSet {
    std::vector<std::uint32_t> generators;
    bool contains(std::uint32_t state) const {
        for (auto g : generators)
            if ((state & g) == g) return true;
        return false;
    }
};

// Random increasing indicators on the first `sites` coordinates: unions of
// one to three principal filters with sparse random generators.
std::vector<UpSet> sample_upsets(std::size_t sites, std::size_t count, std::uint64_t seed);

double expectation(const StationaryDist& pi, const UpSet& f);
// Under the Bernoulli-rho product measure on `sites` coordinates.
double bernoulli_expectation(std::size_t sites, double rho, const UpSet& f);

struct MonotoneCertificate {
    bool holds = true;
    std::size_t checked = 0;
    double worst_gap = -1e300;  // max of E_lower[f] - E_upper[f]
    std::optional<UpSet> witness;
};

// E_{pi_n}[f] <= E_{pi_n1}[f] + tol, with pi_n extended by empty sites.
MonotoneCertificate monotone_check(const StationaryDist& pi_n, const StationaryDist& pi_n1,
                                   const std::vector<UpSet>& fns, double tol = 1e-10);
// E_pi[f] <= E_{nu_rho}[f] + tol.
MonotoneCertificate bernoulli_domination(const StationaryDist& pi, double rho, const std::vector<UpSet>& fns,
                                         double tol = 1e-10);

// Integral of L f against the Bernoulli-rho product measure for f = prod_{x in A} eta(x):
// (1 - rho) rho^|A| (sum_{x in A, y not in A} [r_yx - r_xy] + [o in A] lambda / rho).
double flow_generator_identity(const Tree& tree, const RateFamily& family, const std::vector<VertexId>& A,
                               double rho, double lambda);

// Mean occupancy per generation 0..depth.
std::vector<double> density_profile(const StationaryDist& pi, const Truncation& tr);
// Time average over [t0, t1] of a log on `tree`.
std::vector<double> density_profile(const EventLog& log, const Tree& tree, std::uint32_t depth, double t0, double t1);
// Snapshot of a state.
std::vector<double> density_profile(const SystemState& state, const Tree& tree, std::uint32_t depth);

struct RootCurrent {
    double empirical = 0;     // J_o(T) / T
    double root_empty = 0;    // estimate of P(eta(o) = 0)
    double bound = 0;         // lambda * root_empty
    double floor = 0;         // q(o) rho (1 - rho)
};
// root_empty defaults to the time average of an empty root over [0, T].
RootCurrent root_current_rate(const EventLog& log, double T, double lambda, double q_o, double rho,
                              std::optional<double> root_empty = std::nullopt);

void write_density_csv(std::ostream& os, const std::vector<double>& density);
void write_marginals_csv(std::ostream& os, const StationaryDist& pi, const Truncation& tr);

}  // namespace treetasep
