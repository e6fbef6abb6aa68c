#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "treetasep/gw_tree.hpp"
#include "treetasep/rate_field.hpp"

namespace treetasep {

// c_o: 1/log d_min if d_min > 1, else (5 + log2 m~)/(log(1+p1) - log(2 p1)).
// Throws std::invalid_argument when d_min = 1 and p1 is outside (0,1) or m~ is absent.
double compute_c_o(const TreeStats& stats, double p1);

// D_n = inf{m >= 1 : r^max_l <= n^{-(2 + c_low c_o)} (log n)^{-3} for all l >= m}.
// Returns nullopt for the empty infimum (constant rates). Generations are
// returned as doubles because polynomial rates push D_n far beyond 2^64.
// Throws Unclassifiable when a tabulated profile cannot decide.
std::optional<double> compute_D_n(const GenerationProfile& profile, double n, double c_low, double c_o);
double D_n_threshold(double n, double c_low, double c_o);

struct BoundInputs {
    double n = 0;
    std::optional<double> D_n;  // nullopt = unbounded
    unsigned d_min = 1;
    double c_o = 0;
    double epsilon = 1;
    double delta = 0.1;
    std::optional<DecayClass> decay_class;
};

struct DisentanglementBound {
    double n = 0;
    std::optional<double> D_n;
    double M_n = 0;
    double delta = 0;
    double c_o = 0;
    double epsilon = 0;
    double c_low = 0;
    int case_used = 0;
};

// Throws std::invalid_argument when the decay class is missing or when a
// log-order class meets an unbounded D_n.
DisentanglementBound compute_M_n(const BoundInputs& in);

// Everything the bound formulas need about one (tree law, rates) pair.
class BoundsModel {
public:
    // Symbolic families only.
    BoundsModel(const RateFamily& family, const OffspringLaw& law, double delta = 0.1);
    // Custom tables: aggregates are tabulated on `tree` up to `horizon`.
    BoundsModel(const RateFamily& family, const Tree& tree, std::uint32_t horizon, double delta = 0.1);

    const GenerationProfile& profile() const { return profile_; }
    const RateFamily& family() const { return family_; }
    double delta() const { return delta_; }
    double epsilon() const { return epsilon_; }
    double c_low() const { return c_low_; }
    double kappa() const { return kappa_; }
    double c_o() const { return c_o_; }
    unsigned d_min() const { return stats_.d_min; }
    const TreeStats& stats() const { return stats_; }
    BoundsModel with_delta(double delta) const;

    std::optional<double> D_n(double n) const;
    // M_0 = M_1 = 0 (a single particle is disentangled at the root).
    DisentanglementBound M_n(double n) const;

private:
    RateFamily family_;
    GenerationProfile profile_;
    TreeStats stats_;
    double p1_ = 0;
    double delta_ = 0.1, epsilon_ = 1, c_low_ = 0, kappa_ = 0, c_o_ = 0;
};

// How l_n is chosen from n.
struct EllRule {
    enum class Kind { EqualsMn, AffineMn, PowerN } kind = Kind::EqualsMn;
    double a = 1, b = 0;  // AffineMn: a*M_n + b; PowerN: n^a
    std::uint64_t operator()(const BoundsModel& model, double n) const;
    std::string describe() const;
};

struct TimeWindowOptions {
    // nullopt: evaluate (min_{M<|x|<=l} r_x) R^min_{M,l} at this n; +inf selects the theta_n branch.
    std::optional<double> theta;
    std::optional<double> theta_n;  // default 1/log n
};

struct TimeWindow {
    double n = 0;
    std::uint64_t ell_n = 0;
    double M_n = 0;
    double delta = 0;
    double t_low = 0, t1_low = 0, t2_low = 0, t_up = 0;
    double theta = 0, theta_n = 0;
};

// Throws std::invalid_argument for n < 1 or l_n < M_n.
TimeWindow compute_time_window(const BoundsModel& model, double n, std::uint64_t ell_n, const TimeWindowOptions& opts = {});

// Smallest n0 <= n_max such that t_low < t_up for every n in [n0, n_max]; nullopt if none.
std::optional<std::uint64_t> time_window_threshold(const BoundsModel& model, const EllRule& rule, std::uint64_t n_max);

// n_t = sup{n >= 0 : (n + M_n) / min_{|x| <= M_n} r_x <= t}.
std::uint64_t compute_n_t(const BoundsModel& model, double t);
double n_t_constraint(const BoundsModel& model, std::uint64_t n);

struct GenerationWindow {
    double t = 0;
    std::uint64_t n_t = 0;
    double L_low = 0;
    std::uint64_t L_up = 0, L1_up = 0, L2_up = 0;
};

GenerationWindow compute_generation_window(const BoundsModel& model, double t);

// Windows for exponentially decaying rates with R^max_l >= exp(c_up l).
struct RefinedGenerationWindow {
    std::uint64_t L_up = 0;
    double L_low = 0;
};
RefinedGenerationWindow refined_generation_window(double c_up, double t, double delta);

struct PolyWindowReport {
    unsigned d = 0;
    double p = 0;
    double n = 0;
    std::uint64_t ell_n = 0;
    double M_n = 0;
    double a = 0, b = 0;
    bool sharp = false;  // b = 0: t_up / t_low -> 1
    double leading_term = 0;
    TimeWindow direct;
    double direct_ratio = 0;
};

// Polynomial rates on the d-regular tree. a = M_n / l_n^p and b = n M_n^p / l_n^{p+1}
// are evaluated at n (and b also at 10 n to read its trend). The direct window
// uses the theta = inf branch with theta_n = theta(n)^{-1/2}.
// Throws std::invalid_argument if a >= 1.
PolyWindowReport regular_poly_window(unsigned d, double p, const EllRule& rule, double n = 1e6, double delta = 0.1);

// Right-hand side and threshold of the availability-time tail bound at the root:
// P(psi_o > (1+c)(l+1) kappa^{-1} e^{c_low (l+1)}) <= exp(-(c - log(1+c)) l).
struct RenewalBound {
    double threshold = 0;
    double probability = 0;
};
RenewalBound renewal_tail_bound(double c, std::uint32_t ell, double kappa, double c_low);

}  // namespace treetasep
