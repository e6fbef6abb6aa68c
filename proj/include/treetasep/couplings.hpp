#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

#include "treetasep/engine.hpp"
#include "treetasep/lpp.hpp"
#include "treetasep/rate_field.hpp"

namespace treetasep {

class CouplingViolation : public std::runtime_error {
public:
    CouplingViolation(const std::string& what, std::uint64_t event_index, double time)
        : std::runtime_error(what), event_index(event_index), time(time) {}
    std::uint64_t event_index;
    double time;
};

// One entry per coupled event: whether the ordering held right after it.
struct Certificate {
    std::vector<std::uint8_t> holds;
    std::uint64_t violations() const;
};
void write_certificate_csv(std::ostream& os, const Certificate& cert);

struct CanonicalOptions {
    std::vector<VertexId> initial1, initial2;  // must satisfy initial1 <= initial2
    bool throw_on_violation = true;
    std::uint64_t event_cap = 10'000'000;
};

struct CanonicalPair {
    EventLog first, second;
    SystemState state1, state2;
    Certificate certificate;
};

// Shared per-edge clocks, a shared rate-lambda1 root clock and an extra
// rate-(lambda2 - lambda1) root clock that feeds the second process only.
CanonicalPair canonical_pair(const Tree& tree, const RateFamily& family, double lambda1, double lambda2,
                             std::uint64_t seed, double T, const CanonicalOptions& opts = {});

struct IrwOptions {
    std::vector<VertexId> initial;
    std::optional<std::uint64_t> max_particles;
    bool throw_on_violation = true;
    std::uint64_t event_cap = 10'000'000;
};

struct IrwPair {
    EventLog tasep, walks;  // walks may hold several walkers per vertex
    Certificate certificate;
};

// Walker i at generation l jumps at every mark of a rate max_{Z_l} r_x stream
// owned by (i, l) to a uniform child. TASEP particle i at x in generation l
// reads the same stream: it keeps a mark with probability r_x / max r_x,
// picks child y with probability r_xy / r_x and jumps if y is empty.
// The stream of (i, l) starts when the walker reaches l, which is never after
// the particle does, so the particle cannot leave l before the walker.
// Walker rates are profile.rx_max(l); a vertex with r_x above it is an error.
IrwPair irw_pair(const Tree& tree, const RateFamily& family, const GenerationProfile& profile, double lambda,
                 std::uint64_t seed, double T, const IrwOptions& opts = {});

struct SlowedPair {
    EventLog real;
    // slowed[i][k]: time of move k of particle i (k = 0 entry, k >= 1 the jump
    // into generation k) in the slowed system; +inf if after T.
    std::vector<std::vector<double>> slowed;
    Certificate certificate;  // one row per slowed move, in time order
};

// Real TASEP with n particles against the slowed system in which particle i
// leaves generation l at the first mark of a rate r^min_l stream after particle
// i-1 has left generation l+1. The real particle reads the same stream while
// any child is empty and tops it up with an independent rate r_x - r^min_l
// stream, so its law is unchanged.
SlowedPair slowed_pair(const Tree& tree, const RateFamily& family, const GenerationProfile& profile, double lambda,
                       std::uint64_t n, double T, std::uint64_t seed, bool throw_on_violation = true);

// Slowed TASEP driven by build_env(n, m, lambda, profile, seed): particle j makes
// moves k = 0..min(M, n + m - j); move k waits for its own move k-1 and, when
// k + 1 <= M, for move k + 1 of particle j-1 (move 0 of j-1 when M = 0), then
// takes the weight at cell (j + k, j). Entries outside that set are NaN.
PassageTable slowed_passage_times(std::uint64_t n, std::uint64_t m, std::uint64_t M, double lambda,
                                  const GenerationProfile& profile, std::uint64_t seed);
PassageTable slowed_passage_times(const LppEnvironment& env, std::uint64_t M);

struct ExpSumTail {
    double lower = 0;
    double upper1 = 1;
    double upper2 = 1;          // exp(l + (l+1) log(t/l) + sum log c_i); +inf for l = 0
    double upper2_typeset = 1;  // exp(l (1 + log(t/l)) + sum log c_i), kept for comparison
    double S = 0, c = 0;
};

// Bounds on P(sum_i omega_i / c_i <= t) for i = 0..l, omega_i i.i.d. Exp(1).
// Throws std::invalid_argument unless delta in (0,1), all c_i > 0 and t >= 0.
ExpSumTail exp_sum_tail(const std::vector<double>& c, double t, double delta);

}  // namespace treetasep
