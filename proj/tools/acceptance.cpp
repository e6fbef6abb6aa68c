// Runs the twelve acceptance criteria and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria (capped at 255).

#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "treetasep/bounds.hpp"
#include "treetasep/cli.hpp"
#include "treetasep/couplings.hpp"
#include "treetasep/engine.hpp"
#include "treetasep/equilibrium.hpp"
#include "treetasep/lpp.hpp"
#include "treetasep/rng.hpp"

using namespace treetasep;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool ok = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double limit_s;  // runtime limit; +inf when none is stated
    std::function<Verdict()> check;
};

const OffspringLaw kBinary = OffspringLaw::dirac(2);  // 3-regular tree

GenerationProfile exp3_profile() { return GenerationProfile::analytic(RateFamily::exponential(3), kBinary); }

// ---- 1

Verdict lpp_equivalence() {
    std::uint64_t cells = 0, mismatches = 0;
    for (std::uint64_t n = 1; n <= 6; ++n)
        for (std::uint64_t m = 0; m <= 6; ++m)
            for (std::uint64_t s = 0; s < 50; ++s) {
                std::uint64_t seed = derive_seed(1000 + 10 * n + m, s);
                auto slowed = slowed_passage_times(n, m, m, 1.0, exp3_profile(), seed);
                auto env = build_env(n, m, 1.0, exp3_profile(), seed);
                auto dp = passage_table(env, PathRegion{m});
                for (std::size_t i = 1; i <= env.rows; ++i)
                    for (std::size_t j = 1; j <= std::min<std::size_t>(i, env.cols); ++j) {
                        if (i - j > m) continue;
                        ++cells;
                        if (!(slowed(i, j) == dp(i, j))) ++mismatches;
                    }
            }
    return {mismatches == 0 && cells > 0, fmt::format("{} cells compared, {} mismatches", cells, mismatches)};
}

// ---- 2

double brute_force(const LppEnvironment& env, std::size_t i, std::size_t j) {
    double best = -INFINITY;
    std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t a, std::size_t b, double acc) {
        acc += env(a, b);
        if (a == i && b == j) {
            best = std::max(best, acc);
            return;
        }
        if (a < i) walk(a + 1, b, acc);
        if (b < j) walk(a, b + 1, acc);
    };
    walk(1, 1, 0.0);
    return best;
}

Verdict dp_vs_enumeration() {
    std::uint64_t cells = 0, mismatches = 0;
    for (std::size_t size : {4u, 5u})
        for (std::uint64_t s = 0; s < 200; ++s) {
            auto env = iid_env(size, size, derive_seed(2000 + size, s));
            for (std::size_t i = 1; i <= size; ++i)
                for (std::size_t j = 1; j <= size; ++j) {
                    ++cells;
                    if (passage_time(env, i, j) != brute_force(env, i, j)) ++mismatches;
                }
        }
    return {mismatches == 0, fmt::format("{} cells on 400 environments, {} mismatches", cells, mismatches)};
}

// ---- 3

Verdict flow_identity() {
    Tree tree(kBinary, 0);
    tree.materialize_to_depth(4);
    auto fam = RateFamily::exponential(3);
    std::vector<VertexId> verts;
    for (std::uint32_t g = 0; g <= 4; ++g)
        for (VertexId v : tree.generation_vertices(g)) verts.push_back(v);
    const std::size_t N = verts.size();
    std::uint64_t sets = 0;
    double worst = 0;
    for (double rho : {0.2, 0.5, 0.8}) {
        const double lambda = rho * 1.0;  // q(o) = r_o = 1
        std::vector<VertexId> A;
        std::function<void(std::size_t)> rec = [&](std::size_t from) {
            worst = std::max(worst, std::abs(flow_generator_identity(tree, fam, A, rho, lambda)));
            ++sets;
            if (A.size() == 4) return;
            for (std::size_t k = from; k < N; ++k) {
                A.push_back(verts[k]);
                rec(k + 1);
                A.pop_back();
            }
        };
        rec(0);
    }
    return {worst <= 1e-12, fmt::format("{} vertex sets (|A| <= 4, depth <= 4, 3 densities), max |pairing| = {:.3g}",
                                        sets, worst)};
}

// ---- 4

Verdict stationary_monotone() {
    Tree tree(kBinary, 0);
    double worst_residual = 0, worst_sum = 0, worst_gap = -1e300;
    std::uint64_t fns_checked = 0;
    bool ok = true;
    for (const auto& fam : {RateFamily::exponential(3), RateFamily::constant()}) {
        std::vector<StationaryDist> pi;
        for (std::uint32_t n = 0; n <= 3; ++n) {
            pi.push_back(exact_stationary(make_truncation(tree, fam, n, 0.5)));
            double total = 0;
            for (double x : pi.back().p) total += x;
            worst_residual = std::max(worst_residual, pi.back().residual);
            worst_sum = std::max(worst_sum, std::abs(total - 1));
        }
        for (std::uint32_t n = 0; n <= 2; ++n) {
            auto fns = sample_upsets(pi[n].sites, 200, derive_seed(4000 + n, fam.symbolic() ? fam.d() : 0));
            auto cert = monotone_check(pi[n], pi[n + 1], fns, 1e-10);
            ok = ok && cert.holds;
            fns_checked += cert.checked;
            worst_gap = std::max(worst_gap, cert.worst_gap);
        }
    }
    ok = ok && worst_residual <= 1e-10 && worst_sum <= 1e-12;
    return {ok, fmt::format("residual <= {:.2g}, |sum p - 1| <= {:.2g}, {} increasing functions, max gap {:.3g}",
                            worst_residual, worst_sum, fns_checked, worst_gap)};
}

// ---- 5

Verdict bernoulli_domination_check() {
    Tree tree(kBinary, 0);
    const double rho = 0.5, q_o = 2.0;  // constant rates: r_o = 2 with no inflow
    auto pi = exact_stationary(make_truncation(tree, RateFamily::constant(), 2, rho * q_o));
    auto fns = sample_upsets(pi.sites, 200, 5000);
    for (std::uint32_t k = 0; k < pi.sites; ++k) fns.push_back(UpSet{{1u << k}});
    auto cert = bernoulli_domination(pi, rho, fns, 1e-10);
    return {cert.holds && pi.residual <= 1e-10,
            fmt::format("{} increasing functions on {} sites, max E_pi - E_nu = {:.3g}", cert.checked, pi.sites,
                        cert.worst_gap)};
}

// ---- 6

Verdict coupling_certificates() {
    auto fam = RateFamily::exponential(3);
    auto profile = exp3_profile();
    std::uint64_t canon_events = 0, canon_bad = 0, irw_events = 0, irw_bad = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        Tree tree(kBinary, 0);
        CanonicalOptions co;
        co.throw_on_violation = false;
        auto c = canonical_pair(tree, fam, 0.5, 1.0, derive_seed(6000, s), 20.0, co);
        canon_events += c.certificate.holds.size();
        canon_bad += c.certificate.violations();
        IrwOptions io;
        io.throw_on_violation = false;
        auto w = irw_pair(tree, fam, profile, 1.0, derive_seed(6001, s), 20.0, io);
        irw_events += w.certificate.holds.size();
        irw_bad += w.certificate.violations();
    }
    return {canon_bad == 0 && irw_bad == 0 && canon_events > 0 && irw_events > 0,
            fmt::format("canonical: {} events, {} violations; random walk: {} events, {} violations", canon_events,
                        canon_bad, irw_events, irw_bad)};
}

// ---- 7, 8: only the first n particles are simulated (see README).

Verdict disentanglement() {
    const std::uint64_t n = 16, runs = 1000;
    BoundsModel model(RateFamily::exponential(3), kBinary, 0.1);
    const double M = model.M_n(double(n)).M_n;
    const auto stop_at = static_cast<std::uint32_t>(std::floor(M)) + 1;
    std::vector<std::optional<std::uint32_t>> gen(runs);
    parallel_for(runs, [&](std::uint64_t k) {
        SimConfig sc;
        sc.law = kBinary;
        sc.family = RateFamily::exponential(3);
        sc.lambda = 1.0;
        sc.max_particles = n;
        sc.stop = StopRule::past(n, stop_at);
        sc.seed = derive_seed(7000, k);
        gen[k] = disentanglement_generation(run(sc).log, n);
    });
    std::uint64_t within = 0, worst = 0;
    for (auto& g : gen) {
        if (g && *g <= M) ++within;
        if (g) worst = std::max<std::uint64_t>(worst, *g);
    }
    double frac = double(within) / double(runs);
    return {frac >= 0.99, fmt::format("M_16 = {:.4g}; disentangled within M_16 in {}/{} runs ({:.4f}), deepest {}", M,
                                      within, runs, frac, worst)};
}

Verdict time_window() {
    const std::uint64_t n = 64, runs = 200;
    const double delta = 0.25;
    BoundsModel model(RateFamily::exponential(3), kBinary, delta);
    const std::uint64_t ell = EllRule{}(model, double(n));
    TimeWindow w = compute_time_window(model, double(n), ell);
    struct R {
        std::uint64_t low = 0, up = 0;
    };
    std::vector<R> res(runs);
    parallel_for(runs, [&](std::uint64_t k) {
        SimConfig sc;
        sc.law = kBinary;
        sc.family = RateFamily::exponential(3);
        sc.lambda = 1.0;
        sc.max_particles = n;
        sc.stop = StopRule::time(w.t_up);
        sc.seed = derive_seed(8000, k);
        LogIndex idx(run(sc).log);
        res[k] = {idx.current_generation(std::uint32_t(ell), w.t_low), idx.current_generation(std::uint32_t(ell), w.t_up)};
    });
    std::uint64_t low_ok = 0, up_ok = 0;
    for (auto& r : res) {
        low_ok += r.low == 0;
        up_ok += double(r.up) >= (1 - delta) * double(n);
    }
    double fl = double(low_ok) / runs, fu = double(up_ok) / runs;
    return {fl >= 0.95 && fu >= 0.95,
            fmt::format("l_n = {} (M_64 = {:.4g}), t_low = {:.4g}, t_up = {:.4g}; J(t_low) = 0 in {:.3f}, "
                        "J(t_up) >= 48 in {:.3f}",
                        ell, w.M_n, w.t_low, w.t_up, fl, fu)};
}

// ---- 9, 10: ensembles of independent runs.

Verdict subflow_blockage() {
    const std::uint64_t runs = 200;
    auto fam = RateFamily::slowed(3, DecayFunction{DecayFunction::Kind::Exponential, 4.0});
    std::vector<double> j100(runs), j400(runs), root(runs);
    parallel_for(runs, [&](std::uint64_t k) {
        SimConfig sc;
        sc.law = kBinary;
        sc.family = fam;
        sc.lambda = 1.0;
        sc.stop = StopRule::time(400.0);
        sc.seed = derive_seed(9000, k);
        auto r = run(sc);
        j100[k] = double(current(r.log, Tree::root(), 100.0));
        j400[k] = double(current(r.log, Tree::root(), 400.0));
        root[k] = r.state.occupied(Tree::root()) ? 1.0 : 0.0;
    });
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / double(v.size());
    };
    double rate100 = mean(j100) / 100, rate400 = mean(j400) / 400, dens = mean(root);
    return {rate400 <= 0.5 * rate100 && dens >= 0.95,
            fmt::format("{} runs: J_o/T = {:.4f} at T = 100, {:.4f} at T = 400 (ratio {:.3f}); root density at T = 400 "
                        "= {:.3f}",
                        runs, rate100, rate400, rate400 / rate100, dens)};
}

Verdict superflow_floor() {
    const std::uint64_t runs = 8;
    const double rho = 0.5, q_o = 2.0, T = 1000.0;
    const double floor = q_o * rho * (1 - rho);
    std::vector<double> rate(runs);
    parallel_for(runs, [&](std::uint64_t k) {
        SimConfig sc;
        sc.law = kBinary;
        sc.family = RateFamily::constant();
        sc.lambda = rho * q_o;
        sc.stop = StopRule::time(T);
        sc.seed = derive_seed(10000, k);
        sc.event_cap = 100'000'000;
        auto r = run(sc);
        rate[k] = root_current_rate(r.log, T, sc.lambda, q_o, rho).empirical;
    });
    double lo = *std::min_element(rate.begin(), rate.end());
    double sum = 0;
    for (double x : rate) sum += x;
    return {lo >= 0.9 * floor, fmt::format("J_o(T)/T over {} runs: min {:.4f}, mean {:.4f}; need >= {:.4f}", runs, lo,
                                           sum / double(runs), 0.9 * floor)};
}

// ---- 11

Verdict exp_sum_tails() {
    Rng params(11000);
    const int samples = 1'000'000;
    int violations = 0, checks = 0;
    double worst_z = -1e300;
    for (int set = 0; set < 20; ++set) {
        std::size_t ell = std::size_t(params.uniform() * 9);  // 0..8
        std::vector<double> c(ell + 1);
        for (double& x : c) x = std::exp(std::log(0.1) + params.uniform() * std::log(100.0));  // log-uniform [0.1, 10]
        double delta = 0.05 + 0.9 * params.uniform();
        double S = 0;
        for (double x : c) S += 1 / x;
        const double ts[3] = {0.5 * S, S, 2 * S};
        int hits[3] = {0, 0, 0};
        Rng rng(derive_seed(11001, std::uint64_t(set)));
        for (int k = 0; k < samples; ++k) {
            double sum = 0;
            for (double x : c) sum += rng.exponential() / x;
            for (int q = 0; q < 3; ++q) hits[q] += sum <= ts[q];
        }
        for (int q = 0; q < 3; ++q) {
            auto r = exp_sum_tail(c, ts[q], delta);
            double p = double(hits[q]) / samples;
            double se = std::sqrt(std::max(p * (1 - p), 1.0 / samples) / samples);
            double upper = std::min(r.upper1, r.upper2);
            double z = std::max((r.lower - p) / se, (p - upper) / se);
            worst_z = std::max(worst_z, z);
            ++checks;
            if (z > 3) ++violations;
        }
    }
    return {violations == 0,
            fmt::format("{} (set, t) pairs, 10^6 samples each; {} beyond 3 s.e., worst excess {:.2f} s.e.", checks,
                        violations, worst_z)};
}

// ---- 12

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Verdict determinism() {
    auto base = fs::temp_directory_path() / "treetasep_acceptance_determinism";
    fs::remove_all(base);
    std::uint64_t files = 0;
    std::vector<std::string> differing;
    for (auto sub : {Subcommand::Simulate, Subcommand::Disentangle, Subcommand::CurrentWindow,
                     Subcommand::GenerationWindow, Subcommand::Lpp, Subcommand::Couple, Subcommand::Equilibrium,
                     Subcommand::ClassifyRates, Subcommand::Bounds}) {
        ExperimentConfig cfg;
        cfg.subcommand = sub;
        cfg.rate_kind = RateKind::ExponentialHomogeneous;
        cfg.n = 8;
        cfg.replicas = 4;
        cfg.seed = 12;
        cfg.formats = {"csv", "json", "svg"};
        cfg.out = (base / (to_string(sub) + "_a")).string();
        auto a = run_experiment(cfg);
        cfg.out = (base / (to_string(sub) + "_b")).string();
        auto b = run_experiment(cfg);
        if (a.files != b.files || a.files.empty()) differing.push_back(to_string(sub) + " (file list)");
        for (const auto& f : a.files) {
            ++files;
            if (slurp(base / (to_string(sub) + "_a") / f) != slurp(base / (to_string(sub) + "_b") / f))
                differing.push_back(to_string(sub) + "/" + f);
        }
    }
    fs::remove_all(base);
    std::string detail = fmt::format("9 subcommands, {} files compared", files);
    for (auto& d : differing) detail += "; differs: " + d;
    return {differing.empty(), detail};
}

}  // namespace

int main() {
    const double inf = INFINITY;
    std::vector<Criterion> criteria = {
        {1, "LPP oracle equivalence", 10, lpp_equivalence},
        {2, "DP vs enumeration", 5, dp_vs_enumeration},
        {3, "flow-rule stationarity identity", 30, flow_identity},
        {4, "exact stationary + monotonicity", 60, stationary_monotone},
        {5, "Bernoulli domination", inf, bernoulli_domination_check},
        {6, "coupling certificates", inf, coupling_certificates},
        {7, "disentanglement calibration", 120, disentanglement},
        {8, "time window", 600, time_window},
        {9, "subflow blockage", 300, subflow_blockage},
        {10, "superflow current floor", 300, superflow_floor},
        {11, "exponential-sum tail bounds", inf, exp_sum_tails},
        {12, "determinism", inf, determinism},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.check();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        bool in_time = secs < c.limit_s;
        if (!in_time) v.detail += fmt::format("; runtime limit {:.0f} s exceeded", c.limit_s);
        bool ok = v.ok && in_time;
        failed += !ok;
        fmt::print("{} criterion {:2d} {}: {} [{:.2f} s]\n", ok ? "PASS" : "FAIL", c.id, c.name, v.detail, secs);
        std::fflush(stdout);
    }
    fmt::print("{}/{} criteria passed\n", int(criteria.size()) - failed, criteria.size());
    return std::min(failed, 255);
}
