#include <doctest.h>

#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <sstream>

#include "support.hpp"
#include "treetasep/couplings.hpp"
#include "treetasep/rng.hpp"

using namespace treetasep;

namespace {

GenerationProfile exp3_profile() { return GenerationProfile::analytic(RateFamily::exponential(3), OffspringLaw::dirac(2)); }

// Arrival time of particle i into generation k, read from a log (entries are generation 0).
std::vector<std::vector<double>> arrivals_by_particle(const EventLog& log) {
    std::vector<std::vector<double>> out;
    for (const Event& e : log.events) {
        if (e.kind == EventKind::Exit) continue;
        if (out.size() <= e.particle) out.resize(e.particle + 1);
        out[e.particle].push_back(e.time);
    }
    return out;
}

bool same_or_both_nan(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

TEST_CASE("canonical pair: equal intensities give identical trajectories") {
    Tree tree(OffspringLaw::dirac(2), 1);
    auto pair = canonical_pair(tree, RateFamily::exponential(3), 0.8, 0.8, 11, 30.0);
    REQUIRE(!pair.first.events.empty());
    CHECK(pair.first.events == pair.second.events);
    CHECK(pair.state1 == pair.state2);
    CHECK(pair.certificate.violations() == 0);
}

TEST_CASE("canonical pair: lambda1 = 0 keeps the first process empty") {
    Tree tree(OffspringLaw::dirac(2), 2);
    auto pair = canonical_pair(tree, RateFamily::constant(), 0.0, 1.0, 3, 20.0);
    CHECK(pair.first.events.empty());
    CHECK(!pair.second.events.empty());
    CHECK(pair.certificate.violations() == 0);
}

TEST_CASE("canonical pair: ordering holds after every event on 100 seeds") {
    Tree tree(OffspringLaw::dirac(2), 5);
    std::uint64_t total = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        CanonicalOptions opts;
        opts.throw_on_violation = false;
        auto pair = canonical_pair(tree, RateFamily::exponential(3), 0.5, 1.0, derive_seed(77, s), 20.0, opts);
        CHECK(pair.certificate.violations() == 0);
        total += pair.certificate.holds.size();
        // Final occupancy ordering, checked directly.
        for (std::size_t v = 0; v < pair.state1.occupancy.size(); ++v)
            if (pair.state1.occupancy[v]) CHECK(pair.state2.occupied(VertexId(v)));
        // The second process sees at least as many entries.
        CHECK(current(pair.first, 0, 20.0) <= current(pair.second, 0, 20.0));
    }
    CHECK(total > 1000);
}

TEST_CASE("canonical pair: seeded ordering and rejected inputs") {
    Tree tree(OffspringLaw::dirac(2), 5);
    tree.materialize_to_depth(3);
    CanonicalOptions opts;
    opts.initial1 = {3};
    opts.initial2 = {3, 1, 9};
    auto pair = canonical_pair(tree, RateFamily::exponential(3), 0.5, 1.0, 4, 15.0, opts);
    CHECK(pair.certificate.violations() == 0);
    CHECK_THROWS_AS(canonical_pair(tree, RateFamily::constant(), 1.0, 0.5, 1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(canonical_pair(tree, RateFamily::constant(), -0.1, 0.5, 1, 1.0), std::invalid_argument);
}

TEST_CASE("irw pair: on a single edge the particle follows its walker") {
    auto tree = Tree::from_parents({kNoVertex, 0});
    auto rates = RateFamily::custom({{1, 1.5}}, std::nullopt);
    auto profile = GenerationProfile::tabulated(aggregates(rates, tree, 1));
    for (std::uint64_t s = 0; s < 20; ++s) {
        IrwOptions opts;
        opts.max_particles = 1;
        auto pair = irw_pair(tree, rates, profile, 1.0, s, 50.0, opts);
        CHECK(pair.tasep.events == pair.walks.events);
        CHECK(pair.certificate.violations() == 0);
    }
}

TEST_CASE("irw pair: generation currents are dominated on 100 seeds") {
    Tree tree(OffspringLaw::dirac(2), 8);
    auto family = RateFamily::exponential(3);
    auto profile = exp3_profile();
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto pair = irw_pair(tree, family, profile, 1.0, derive_seed(9, s), 50.0);
        CHECK(pair.certificate.violations() == 0);
        LogIndex real(pair.tasep), walks(pair.walks);
        for (double t : {5.0, 20.0, 50.0})
            for (std::uint32_t l = 0; l <= 6; ++l) CHECK(real.current_generation(l, t) <= walks.current_generation(l, t));
        // Same entry times: the entry stream is shared and the walker leaves the root first.
        auto a = arrivals_by_particle(pair.tasep), b = arrivals_by_particle(pair.walks);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i][0] == b[i][0]);
            REQUIRE(a[i].size() <= b[i].size());
            for (std::size_t k = 1; k < a[i].size(); ++k) CHECK(b[i][k] <= a[i][k]);
        }
    }
}

TEST_CASE("irw pair: a rate above the walker rate is rejected") {
    auto tree = Tree::from_parents({kNoVertex, 0});
    auto rates = RateFamily::custom({{1, 1.5}}, std::nullopt);
    auto low = GenerationProfile::tabulated(aggregates(RateFamily::custom({{1, 1.0}}, std::nullopt), tree, 1));
    CHECK_THROWS_AS(irw_pair(tree, rates, low, 1.0, 1, 50.0), std::invalid_argument);
}

TEST_CASE("slowed pair: slowed particles never lead the real ones") {
    Tree tree(OffspringLaw::dirac(2), 3);
    auto family = RateFamily::exponential(3);
    auto profile = exp3_profile();
    for (std::uint64_t s = 0; s < 50; ++s) {
        auto pair = slowed_pair(tree, family, profile, 1.0, 6, 200.0, derive_seed(21, s));
        CHECK(pair.certificate.violations() == 0);
        auto real = arrivals_by_particle(pair.real);
        REQUIRE(pair.slowed.size() == 6);
        for (std::size_t i = 0; i < pair.slowed.size(); ++i)
            for (std::size_t k = 0; k < pair.slowed[i].size(); ++k) {
                double st = pair.slowed[i][k];
                if (!std::isfinite(st)) continue;
                // The slowed move happened by T, so the real one did too and no later.
                REQUIRE(i < real.size());
                REQUIRE(k < real[i].size());
                CHECK(real[i][k] <= st);
            }
    }
}

TEST_CASE("slowed passage times: one particle accumulates its column") {
    auto env = build_env(1, 6, 0.7, exp3_profile(), 12);
    auto g = slowed_passage_times(env, 6);
    double acc = 0;
    for (std::size_t k = 0; k <= 6; ++k) {
        acc += env(1 + k, 1);
        CHECK(g(1 + k, 1) == acc);
    }
}

TEST_CASE("slowed passage times satisfy the max-plus recursion") {
    for (std::uint64_t s = 0; s < 40; ++s)
        for (std::uint64_t M : {0u, 1u, 3u}) {
            const std::uint64_t n = 5, m = 4;
            auto env = build_env(n, m, 1.3, exp3_profile(), derive_seed(M, s));
            auto g = slowed_passage_times(env, M);
            // First particle: cumulative sums of its column.
            double acc = 0;
            for (std::size_t i = 1; i <= std::min(env.rows, std::size_t(1 + M)); ++i) {
                acc += env(i, 1);
                CHECK(g(i, 1) == acc);
            }
            for (std::size_t j = 1; j <= n; ++j)
                for (std::size_t k = 0; k <= std::min<std::uint64_t>(M, n + m - j); ++k) {
                    std::size_t i = j + k;
                    double pred = 0;
                    if (k > 0) pred = g(i - 1, j);
                    if (j > 1) {
                        std::size_t kk = M == 0 ? 0 : k + 1;
                        if (kk <= M && (j - 1) + kk <= env.rows) pred = std::max(pred, g(j - 1 + kk, j - 1));
                    }
                    CHECK(g(i, j) == pred + env(i, j));
                }
            // Cells outside the move set stay NaN.
            for (std::size_t i = 1; i <= env.rows; ++i)
                for (std::size_t j = 1; j <= env.cols; ++j)
                    if (i < j || i - j > M) CHECK(std::isnan(g(i, j)));
        }
}

TEST_CASE("slowed passage times equal restricted last passage times") {
    for (std::uint64_t n = 1; n <= 6; ++n)
        for (std::uint64_t m = 0; m <= 6; ++m)
            for (std::uint64_t s = 0; s < 10; ++s) {
                auto env = build_env(n, m, 0.9, exp3_profile(), derive_seed(n * 10 + m, s));
                auto slowed = slowed_passage_times(env, m);
                auto lpp = passage_table(env, PathRegion{m});
                for (std::size_t i = 1; i <= env.rows; ++i)
                    for (std::size_t j = 1; j <= std::min<std::size_t>(i, env.cols); ++j)
                        if (i - j <= m) CHECK(slowed(i, j) == lpp(i, j));
            }
    // Seeded overload builds the same environment.
    auto a = slowed_passage_times(5, 5, 5, 1.0, exp3_profile(), 99);
    auto b = slowed_passage_times(build_env(5, 5, 1.0, exp3_profile(), 99), 5);
    REQUIRE(a.g.size() == b.g.size());
    for (std::size_t k = 0; k < a.g.size(); ++k) CHECK(same_or_both_nan(a.g[k], b.g[k]));
}

TEST_CASE("exp_sum_tail: a single term brackets 1 - exp(-t)") {
    auto r = exp_sum_tail({1.0}, 1.0, 0.5);
    double exact = 1 - std::exp(-1.0);
    CHECK(r.lower <= exact);
    CHECK(exact <= r.upper1);
    CHECK(r.S == 1.0);
}

TEST_CASE("exp_sum_tail brackets the Gamma CDF for equal coefficients") {
    for (std::size_t l : {0u, 1u, 3u, 8u})
        for (double c : {0.3, 1.0, 4.0})
            for (double delta : {0.1, 0.5, 0.9}) {
                std::vector<double> cs(l + 1, c);
                double S = (l + 1) / c;
                for (double t : {0.5 * S, S, 2 * S}) {
                    auto r = exp_sum_tail(cs, t, delta);
                    double exact = boost::math::gamma_p(double(l + 1), c * t);
                    CHECK(r.lower <= exact * (1 + 1e-12));
                    CHECK(exact <= r.upper1 * (1 + 1e-12));
                    if (l > 0) CHECK(exact <= r.upper2 * (1 + 1e-12));
                }
            }
}

TEST_CASE("exp_sum_tail brackets Monte Carlo for mixed coefficients") {
    Rng rng(31);
    std::vector<double> c = {2.0, 0.5, 1.0, 0.25};
    double S = 0;
    for (double x : c) S += 1 / x;
    const int N = 200000;
    for (double t : {0.5 * S, S, 2 * S}) {
        int hits = 0;
        for (int k = 0; k < N; ++k) {
            double sum = 0;
            for (double x : c) sum += rng.exponential() / x;
            hits += sum <= t;
        }
        double p = double(hits) / N, se = std::sqrt(std::max(p * (1 - p), 1e-12) / N);
        auto r = exp_sum_tail(c, t, 0.3);
        CHECK(r.lower <= p + 4 * se);
        CHECK(p - 4 * se <= r.upper1);
        CHECK(p - 4 * se <= r.upper2);
    }
}

TEST_CASE("exp_sum_tail degenerates as delta -> 0") {
    auto r = exp_sum_tail({1.0, 2.0, 3.0}, 2.0, 1e-12);
    CHECK(r.lower == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(r.upper1 == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("the uncorrected second upper bound fails against the exact tail") {
    auto r = exp_sum_tail({0.01, 0.01}, 200.0, 0.5);
    double exact = boost::math::gamma_p(2.0, 2.0);
    CHECK(exact == doctest::Approx(1 - 3 * std::exp(-2.0)));
    CHECK(r.upper2_typeset < exact);
    CHECK(r.upper2_typeset == doctest::Approx(std::exp(1 + std::log(200.0) + 2 * std::log(0.01))));
    CHECK(r.upper2 >= exact);
}

TEST_CASE("exp_sum_tail input validation") {
    CHECK_THROWS_AS(exp_sum_tail({1.0}, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(exp_sum_tail({1.0}, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(exp_sum_tail({1.0, 0.0}, 1.0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(exp_sum_tail({1.0}, -1.0, 0.5), std::invalid_argument);
}

TEST_CASE("certificate CSV") {
    Certificate cert;
    cert.holds = {1, 1, 0, 1};
    CHECK(cert.violations() == 1);
    std::ostringstream os;
    write_certificate_csv(os, cert);
    CHECK(os.str() == "event_index,holds\n0,1\n1,1\n2,0\n3,1\n");
}
