#include <doctest.h>

#include <bit>
#include <cmath>
#include <sstream>

#include "support.hpp"
#include "treetasep/equilibrium.hpp"
#include "treetasep/rng.hpp"

using namespace treetasep;

namespace {

double total(const StationaryDist& pi) {
    double s = 0;
    for (double x : pi.p) s += x;
    return s;
}

// Integral of L f against nu_rho for f = prod_{x in A} eta(x), by enumerating
// the sites that can change f: A, the parents of A and the children of A.
double generator_oracle(const Tree& tree, const RateFamily& family, const std::vector<VertexId>& A, double rho,
                        double lambda) {
    std::vector<VertexId> sites;
    auto add = [&](VertexId v) {
        if (std::find(sites.begin(), sites.end(), v) == sites.end()) sites.push_back(v);
    };
    for (VertexId x : A) {
        add(x);
        if (x != Tree::root()) add(tree.parent(x));
        for (VertexId y : tree.ensure_children(x)) add(y);
    }
    auto idx = [&](VertexId v) { return std::size_t(std::find(sites.begin(), sites.end(), v) - sites.begin()); };
    auto f = [&](std::uint32_t s) {
        for (VertexId x : A)
            if (!(s & (1u << idx(x)))) return 0.0;
        return 1.0;
    };
    const std::size_t k = sites.size();
    double acc = 0;
    for (std::uint32_t s = 0; s < (1u << k); ++s) {
        int ones = std::popcount(s);
        double w = std::pow(rho, ones) * std::pow(1 - rho, int(k) - ones);
        double lf = 0;
        for (std::size_t a = 0; a < k; ++a) {
            VertexId x = sites[a];
            if (x == Tree::root() && !(s & (1u << a))) lf += lambda * (f(s | (1u << a)) - f(s));
            if (x == Tree::root()) continue;
            std::size_t b = idx(tree.parent(x));
            if (b == k) continue;
            if ((s & (1u << b)) && !(s & (1u << a)))
                lf += family.edge_rate(tree, x) * (f((s & ~(1u << b)) | (1u << a)) - f(s));
        }
        acc += w * lf;
    }
    return acc;
}

std::vector<VertexId> random_set(const Tree& tree, std::uint32_t depth, Rng& rng) {
    std::size_t n = 0;
    for (std::uint32_t g = 0; g <= depth; ++g) n += tree.generation_vertices(g).size();
    std::vector<VertexId> A;
    std::size_t want = 1 + std::size_t(rng.uniform() * 4);
    while (A.size() < want) {
        auto v = VertexId(rng.uniform() * double(n));
        if (std::find(A.begin(), A.end(), v) == A.end()) A.push_back(v);
    }
    return A;
}

}  // namespace

TEST_CASE("single site: two-state chain") {
    Tree tree(OffspringLaw::dirac(2), 0);
    for (double lambda : {0.1, 0.5, 2.0, 7.0}) {
        auto tr = make_truncation(tree, RateFamily::constant(), 0, lambda);
        REQUIRE(tr.sites() == 1);
        CHECK(tr.exit_rate[0] == 2.0);
        auto pi = exact_stationary(tr);
        CHECK(pi.marginal(0) == doctest::Approx(lambda / (lambda + 2.0)).epsilon(1e-13));
    }
    auto tiny = exact_stationary(make_truncation(tree, RateFamily::exponential(3), 2, 1e-9));
    CHECK(tiny.p[0] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("stationary vectors are normalized with small residual") {
    Tree tree(OffspringLaw::dirac(2), 0);
    for (std::uint32_t depth : {1u, 2u, 3u})
        for (const auto& fam : {RateFamily::exponential(3), RateFamily::constant()}) {
            auto pi = exact_stationary(make_truncation(tree, fam, depth, 0.7));
            CHECK(std::abs(total(pi) - 1) <= 1e-12);
            CHECK(pi.residual <= 1e-10);
            for (double x : pi.p) CHECK(x >= -1e-15);
        }
    CHECK(exact_stationary(make_truncation(tree, RateFamily::constant(), 3, 0.7)).method == "bicgstab");
    CHECK(exact_stationary(make_truncation(tree, RateFamily::constant(), 2, 0.7)).method == "dense-lu");
}

TEST_CASE("balance equations hold state by state") {
    Tree tree(OffspringLaw::dirac(2), 0);
    auto tr = make_truncation(tree, RateFamily::exponential(3), 2, 0.9);
    auto pi = exact_stationary(tr);
    std::vector<double> in(pi.p.size(), 0), out(pi.p.size(), 0);
    for (std::uint32_t s = 0; s < pi.p.size(); ++s)
        for_each_transition(tr, s, [&](std::uint32_t t, double r) {
            out[s] += pi.p[s] * r;
            in[t] += pi.p[s] * r;
        });
    for (std::size_t s = 0; s < pi.p.size(); ++s) CHECK(std::abs(in[s] - out[s]) <= 1e-12);
}

TEST_CASE("truncation sites grow by prefix") {
    Tree tree(OffspringLaw::general({{1, 0.3}, {2, 0.4}, {3, 0.3}}), 4);
    auto a = make_truncation(tree, RateFamily::constant(), 2, 1.0);
    auto b = make_truncation(tree, RateFamily::constant(), 3, 1.0);
    REQUIRE(a.sites() <= b.sites());
    for (std::size_t k = 0; k < a.sites(); ++k) {
        CHECK(a.vertices[k] == b.vertices[k]);
        CHECK(a.parent[k] == b.parent[k]);
        CHECK(a.in_rate[k] == b.in_rate[k]);
    }
    for (std::size_t k = 0; k < a.sites(); ++k) CHECK((a.exit_rate[k] > 0) == (a.generation[k] == 2));
    CHECK_THROWS_AS(exact_stationary(make_truncation(Tree(OffspringLaw::dirac(2), 0), RateFamily::constant(), 4, 1.0)),
                    std::length_error);
}

TEST_CASE("depth-1 stationary marginals match long-run engine occupancy") {
    const double lambda = 0.8;
    auto fam = RateFamily::exponential(3);
    auto tree = std::make_shared<Tree>(OffspringLaw::dirac(2), 0);
    auto tr = make_truncation(*tree, fam, 1, lambda);
    auto exact = density_profile(exact_stationary(tr), tr);
    std::vector<std::vector<double>> runs(2);
    for (std::uint64_t s = 0; s < 30; ++s) {
        SimConfig cfg;
        cfg.family = fam;
        cfg.lambda = lambda;
        cfg.truncation_depth = 1;
        cfg.stop = StopRule::time(2000.0);
        cfg.seed = derive_seed(44, s);
        auto res = run(cfg, tree);
        auto d = density_profile(res.log, *tree, 1, 100.0, 2000.0);
        for (int g = 0; g < 2; ++g) runs[g].push_back(d[g]);
    }
    for (int g = 0; g < 2; ++g) {
        auto ms = testsupport::mean_se(runs[g]);
        MESSAGE("generation " << g << ": exact " << exact[g] << ", simulated " << ms.mean << " +- " << ms.se);
        CHECK(std::abs(ms.mean - exact[g]) < 3 * ms.se);
    }
}

TEST_CASE("monotone check between consecutive truncations") {
    Tree tree(OffspringLaw::dirac(2), 0);
    for (const auto& fam : {RateFamily::exponential(3), RateFamily::constant()})
        for (std::uint32_t n = 0; n <= 2; ++n) {
            auto lo = exact_stationary(make_truncation(tree, fam, n, 0.5));
            auto hi = exact_stationary(make_truncation(tree, fam, n + 1, 0.5));
            auto fns = sample_upsets(lo.sites, 200, derive_seed(n, 3));
            fns.push_back(UpSet{{0u}});  // f = 1
            fns.push_back(UpSet{{1u}});  // f = eta(o)
            auto cert = monotone_check(lo, hi, fns);
            CHECK(cert.holds);
            CHECK(cert.checked == fns.size());
            CHECK(cert.worst_gap <= 1e-10);
        }
    auto lo = exact_stationary(make_truncation(tree, RateFamily::exponential(3), 0, 0.5));
    auto hi = exact_stationary(make_truncation(tree, RateFamily::exponential(3), 1, 0.5));
    CHECK(expectation(lo, UpSet{{0u}}) == doctest::Approx(expectation(hi, UpSet{{0u}})).epsilon(1e-12));
    CHECK(lo.marginal(0) <= hi.marginal(0));
}

TEST_CASE("monotone check reports a witness when the order fails") {
    Tree tree(OffspringLaw::dirac(2), 0);
    // Same truncation, larger reservoir on the lower side.
    auto busy = exact_stationary(make_truncation(tree, RateFamily::exponential(3), 1, 2.0));
    auto calm = exact_stationary(make_truncation(tree, RateFamily::exponential(3), 1, 0.5));
    auto cert = monotone_check(busy, calm, {UpSet{{0u}}, UpSet{{1u}}});
    CHECK(!cert.holds);
    REQUIRE(cert.witness);
    CHECK(cert.witness->generators == std::vector<std::uint32_t>{1u});
    CHECK(cert.worst_gap > 0.1);
    auto deep = exact_stationary(make_truncation(tree, RateFamily::exponential(3), 2, 0.5));
    CHECK_THROWS_AS(monotone_check(deep, calm, {UpSet{{1u}}}), std::invalid_argument);
}

TEST_CASE("Bernoulli expectation against a product formula") {
    // Single principal filter: rho^|g|.
    for (std::uint32_t g : {1u, 5u, 6u, 7u}) CHECK(bernoulli_expectation(3, 0.3, UpSet{{g}}) == doctest::Approx(std::pow(0.3, std::popcount(g))));
    // Union of two disjoint filters: inclusion-exclusion.
    CHECK(bernoulli_expectation(4, 0.4, UpSet{{3u, 12u}}) == doctest::Approx(2 * 0.16 - 0.16 * 0.16));
}

TEST_CASE("stationary laws are dominated by the Bernoulli product at lambda = rho q(o)") {
    Tree tree(OffspringLaw::dirac(2), 0);
    struct Case {
        RateFamily fam;
        double q_o;
    };
    for (const Case& c : {Case{RateFamily::constant(), 2.0}, Case{RateFamily::exponential(3), 1.0}})
        for (double rho : {0.2, 0.5, 0.8})
            for (std::uint32_t n = 0; n <= 2; ++n) {
                auto pi = exact_stationary(make_truncation(tree, c.fam, n, rho * c.q_o));
                auto fns = sample_upsets(pi.sites, 200, derive_seed(n, 17));
                auto cert = bernoulli_domination(pi, rho, fns);
                CHECK(cert.holds);
                for (std::size_t k = 0; k < pi.sites; ++k) CHECK(pi.marginal(k) <= rho + 1e-10);
            }
}

TEST_CASE("flow identity vanishes for exponential rates") {
    Tree tree(OffspringLaw::dirac(2), 0);
    tree.materialize_to_depth(6);
    auto fam = RateFamily::exponential(3);
    Rng rng(8);
    const double rho = 0.4, lambda = 0.4;
    CHECK(flow_generator_identity(tree, fam, {}, rho, lambda) == 0.0);
    for (int k = 0; k < 300; ++k) {
        auto A = random_set(tree, k < 150 ? 4 : 5, rng);
        if (k % 10 == 0) A.push_back(Tree::root());
        std::sort(A.begin(), A.end());
        A.erase(std::unique(A.begin(), A.end()), A.end());
        double v = flow_generator_identity(tree, fam, A, rho, lambda);
        CHECK(std::abs(v) <= 1e-12);
        CHECK(std::abs(generator_oracle(tree, fam, A, rho, lambda)) <= 1e-12);
    }
}

TEST_CASE("flow identity matches direct generator enumeration") {
    Tree tree(OffspringLaw::general({{1, 0.2}, {2, 0.5}, {3, 0.3}}), 6);
    tree.materialize_to_depth(5);
    Rng rng(12);
    for (const auto& fam : {RateFamily::constant(), RateFamily::exponential(4), RateFamily::polynomial(0.75)})
        for (int k = 0; k < 100; ++k) {
            auto A = random_set(tree, 3, rng);
            double rho = 0.1 + 0.8 * rng.uniform(), lambda = 2 * rng.uniform();
            double v = flow_generator_identity(tree, fam, A, rho, lambda);
            double o = generator_oracle(tree, fam, A, rho, lambda);
            CHECK(std::abs(v - o) <= 1e-12 * (1 + std::abs(o)));
        }
}

TEST_CASE("flow identity off the flow case") {
    Tree tree(OffspringLaw::dirac(2), 0);
    tree.materialize_to_depth(2);
    const double rho = 0.3;
    auto depth1 = tree.generation_vertices(1);
    // Constant rates: one unit in, two units out.
    CHECK(flow_generator_identity(tree, RateFamily::constant(), {depth1[0]}, rho, 0.6) ==
          doctest::Approx((1 - rho) * rho * (1 - 2.0)));
}

TEST_CASE("density profiles") {
    Tree tree(OffspringLaw::dirac(2), 0);
    SystemState empty;
    auto zero = density_profile(empty, tree, 3);
    REQUIRE(zero.size() == 4);
    for (double x : zero) CHECK(x == 0.0);

    tree.materialize_to_depth(2);
    SystemState s;
    s.occupancy.assign(tree.size(), 0);
    auto g2 = tree.generation_vertices(2);
    s.occupancy[g2[0]] = s.occupancy[g2[3]] = 1;
    s.occupancy[0] = 1;
    auto d = density_profile(s, tree, 2);
    CHECK(d == std::vector<double>{1.0, 0.0, 0.5});

    std::ostringstream os;
    write_density_csv(os, d);
    CHECK(os.str().rfind("generation,density\n", 0) == 0);
}

TEST_CASE("constant rates: fan profile and the superflow current floor") {
    auto tree = std::make_shared<Tree>(OffspringLaw::dirac(2), 0);
    SimConfig cfg;
    cfg.family = RateFamily::constant();
    cfg.lambda = 1.0;  // rho = 0.5 with q(o) = 2
    cfg.stop = StopRule::time(1000.0);
    cfg.seed = 5;
    auto res = run(cfg, tree);
    auto rc = root_current_rate(res.log, 1000.0, 1.0, 2.0, 0.5);
    MESSAGE("J_o(T)/T = " << rc.empirical << ", bound " << rc.bound << ", floor " << rc.floor);
    CHECK(rc.floor == doctest::Approx(0.5));
    CHECK(rc.empirical >= 0.9 * rc.floor);
    // Entries are a thinned rate-lambda stream, so J_o(T) - lambda |{t : root empty}| is a martingale.
    CHECK(std::abs(rc.empirical - rc.bound) * 1000.0 < 3 * std::sqrt(rc.empirical * 1000.0));
    auto dens = density_profile(res.log, *tree, 5, 500.0, 1000.0);
    for (std::size_t l = 1; l < dens.size(); ++l) CHECK(dens[l] < dens[l - 1]);
}

TEST_CASE("rare arrivals are almost never blocked") {
    auto tree = std::make_shared<Tree>(OffspringLaw::dirac(2), 0);
    SimConfig cfg;
    cfg.family = RateFamily::constant();
    cfg.lambda = 0.01;
    cfg.stop = StopRule::time(2e5);
    cfg.seed = 6;
    cfg.truncation_depth = 2;  // particles leave, so the event count stays proportional to T
    auto res = run(cfg, tree);
    REQUIRE(!res.truncated);
    auto rc = root_current_rate(res.log, 2e5, 0.01, 2.0, 0.005);
    double se = std::sqrt(0.01 / 2e5);
    CHECK(std::abs(rc.empirical - 0.01) < 4 * se);
    CHECK(rc.root_empty > 0.99);
}

TEST_CASE("subflow rates: sublinear current and a blocked root") {
    auto tree = std::make_shared<Tree>(OffspringLaw::dirac(2), 0);
    SimConfig cfg;
    cfg.family = RateFamily::slowed(3, DecayFunction{DecayFunction::Kind::Exponential, 2.0});
    cfg.lambda = 1.0;
    cfg.stop = StopRule::time(4000.0);
    cfg.seed = 9;
    auto res = run(cfg, tree);
    auto early = root_current_rate(res.log, 1000.0, 1.0, 1.0, 0.5);
    auto late = root_current_rate(res.log, 4000.0, 1.0, 1.0, 0.5);
    MESSAGE("J/T at 1000: " << early.empirical << ", at 4000: " << late.empirical);
    CHECK(late.empirical < early.empirical);
    auto dens = density_profile(res.log, *tree, 0, 3000.0, 4000.0);
    MESSAGE("late root density " << dens[0]);
    CHECK(dens[0] >= 0.95);
}
