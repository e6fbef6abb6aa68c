#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "support.hpp"
#include "treetasep/bounds.hpp"
#include "treetasep/engine.hpp"
#include "treetasep/rng.hpp"

using namespace treetasep;

namespace {

SimConfig base(RateFamily fam, double lambda, StopRule stop, std::uint64_t seed) {
    SimConfig c;
    c.law = OffspringLaw::dirac(2);
    c.family = std::move(fam);
    c.lambda = lambda;
    c.stop = stop;
    c.seed = seed;
    return c;
}

EventLog prefix(const EventLog& log, double t) {
    EventLog p;
    p.initial = log.initial;
    for (const Event& e : log.events)
        if (e.time <= t) p.events.push_back(e);
    p.end_time = t;
    return p;
}

// Generation of each particle at time t, by walking the log.
std::vector<int> generations_at(const EventLog& log, double t) {
    std::vector<int> g;
    for (const Event& e : log.events) {
        if (e.time > t) break;
        if (e.kind == EventKind::Entry) g.push_back(0);
        if (e.kind == EventKind::Jump) g[e.particle] += 1;
    }
    return g;
}

EventLog hand_log(std::vector<Event> events, double end) {
    EventLog log;
    log.events = std::move(events);
    log.end_time = end;
    return log;
}

}  // namespace

TEST_CASE("single entry") {
    auto r = run(base(RateFamily::constant(), 1.0, StopRule::entered(1), 3));
    REQUIRE(r.log.events.size() == 1);
    const Event& e = r.log.events[0];
    CHECK(e.kind == EventKind::Entry);
    REQUIRE(r.state.particles.size() == 1);
    CHECK(r.state.particles[0].vertex == Tree::root());
    CHECK(r.state.particles[0].entry_time == e.time);
    CHECK(current_generation(r.log, 0, r.log.end_time) == 1);
    CHECK(!r.truncated);
}

TEST_CASE("runs are deterministic per seed") {
    for (ClockMode clock : {ClockMode::NextReaction, ClockMode::SharedStream}) {
        auto c = base(RateFamily::exponential(3), 1.0, StopRule::time(30), 17);
        c.clock = clock;
        auto a = run(c), b = run(c);
        CHECK(a.log == b.log);
        std::ostringstream sa, sb;
        write_event_log(sa, a.log);
        write_event_log(sb, b.log);
        CHECK(sa.str() == sb.str());
        c.seed = 18;
        CHECK(!(run(c).log == a.log));
    }
}

TEST_CASE("invalid configurations") {
    CHECK_THROWS_AS(run(base(RateFamily::constant(), 0.0, StopRule::time(1), 0)), std::invalid_argument);
    CHECK_THROWS_AS(run(base(RateFamily::constant(), 1.0, StopRule::entered(0), 0)), std::invalid_argument);
    CHECK_THROWS_AS(run(base(RateFamily::constant(), 1.0, StopRule::time(-1), 0)), std::invalid_argument);
}

TEST_CASE("first entry time is Exponential(lambda)") {
    const double lambda = 2.0;
    auto tree = std::make_shared<const Tree>(OffspringLaw::dirac(2), 0);
    std::vector<double> x;
    for (std::uint64_t s = 0; s < 100000; ++s) {
        auto r = run(base(RateFamily::constant(), lambda, StopRule::entered(1), s), tree);
        x.push_back(*tau(r.log, 0, 1));
    }
    auto ms = testsupport::mean_se(x);
    CHECK(std::abs(ms.mean - 1 / lambda) < 3 * ms.se);
}

TEST_CASE("exclusion, monotone generations and replay on long runs") {
    for (ClockMode clock : {ClockMode::NextReaction, ClockMode::SharedStream}) {
        auto c = base(RateFamily::constant(), 1.0, StopRule::time(450), 5);
        c.clock = clock;
        auto r = run(c);
        REQUIRE(r.log.events.size() >= 100000);
        std::set<VertexId> occupied;
        std::vector<VertexId> at;
        double last = -1;
        for (const Event& e : r.log.events) {
            CHECK(e.time > last);
            last = e.time;
            if (e.kind == EventKind::Entry) {
                REQUIRE(!occupied.count(Tree::root()));
                occupied.insert(Tree::root());
                at.push_back(Tree::root());
            } else {
                REQUIRE(at[e.particle] == e.from);
                REQUIRE(r.tree->parent(e.to) == e.from);  // one generation further
                REQUIRE(!occupied.count(e.to));
                occupied.erase(e.from);
                occupied.insert(e.to);
                at[e.particle] = e.to;
            }
        }
        CHECK(replay(r.log) == r.state);
        // Registry and occupancy agree.
        std::size_t count = 0;
        for (auto o : r.state.occupancy) count += o;
        CHECK(count == r.state.particles.size());
        for (const Particle& p : r.state.particles) CHECK(r.state.occupied(p.vertex));
    }
}

TEST_CASE("replay with truncation exits and a seed configuration") {
    auto c = base(RateFamily::exponential(3), 1.5, StopRule::time(60), 9);
    c.truncation_depth = 2;
    c.initial = {3, 5};
    auto r = run(c);
    bool exits = false;
    for (const Event& e : r.log.events) {
        exits = exits || e.kind == EventKind::Exit;
        if (e.kind == EventKind::Jump) CHECK(r.tree->generation(e.to) <= 2);
    }
    CHECK(exits);
    CHECK(replay(r.log) == r.state);
    std::stringstream ss;
    write_event_log(ss, r.log);
    CHECK(read_event_log(ss) == r.log);
}

TEST_CASE("stop rules and the reservoir cap") {
    auto c = base(RateFamily::exponential(3), 1.0, StopRule::past(5, 4), 2);
    auto r = run(c);
    CHECK(current_generation(r.log, 4, r.log.end_time) == 5);
    c = base(RateFamily::constant(), 3.0, StopRule::time(50), 2);
    c.max_particles = 7;
    r = run(c);
    CHECK(r.entered == 7);
    CHECK(current_generation(r.log, 0, 50) == 7);
}

TEST_CASE("current and tau on sampled logs") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto r = run(base(RateFamily::exponential(3), 1.0, StopRule::time(40), s));
        LogIndex idx(r.log);
        for (std::uint32_t l = 0; l < 6; ++l) CHECK(idx.current_generation(l, 0) == 0);
        Rng rng(s);
        for (int k = 0; k < 100; ++k) {
            double t = 40 * rng.uniform();
            std::uint64_t entries = 0;
            for (const Event& e : r.log.events) entries += e.kind == EventKind::Entry && e.time <= t;
            CHECK(idx.current_generation(0, t) == entries);
            CHECK(idx.current_vertex(Tree::root(), t) == entries);
            auto g = generations_at(r.log, t);
            for (std::uint32_t l = 0; l < 12; ++l) {
                std::uint64_t past = 0;
                for (int gi : g) past += gi >= int(l);
                CHECK(idx.current_generation(l, t) == past);
                CHECK(idx.current_generation(l + 1, t) <= idx.current_generation(l, t));
            }
            // J_l is the sum of J_x over the generation.
            std::uint64_t sum = 0;
            for (VertexId x : r.tree->generation_vertices(2)) sum += idx.current_vertex(x, t);
            CHECK(sum == idx.current_generation(2, t));
        }
        CHECK(*idx.tau(0, 1) == r.log.events.front().time);
    }
}

TEST_CASE("event identity tau <= t iff J >= n") {
    auto r = run(base(RateFamily::constant(), 1.0, StopRule::time(30), 77));
    LogIndex idx(r.log);
    Rng rng(1);
    for (int k = 0; k < 1000; ++k) {
        auto m = static_cast<std::uint32_t>(rng.uniform() * 10);
        auto n = static_cast<std::uint64_t>(rng.uniform() * 30);
        double t = 30 * rng.uniform();
        auto tt = idx.tau(m, n);
        CHECK((tt && *tt <= t) == (idx.current_generation(m, t) >= n));
    }
    for (std::uint32_t m = 0; m < 8; ++m) {
        CHECK(*idx.tau(m, 0) == 0.0);
        for (std::uint64_t n = 1; n < 20; ++n) {
            auto a = idx.tau(m, n), b = idx.tau(m, n + 1), c = idx.tau(m + 1, n);
            if (b) CHECK(*b >= *a);
            if (c) CHECK(*c >= *a);
        }
    }
}

TEST_CASE("disentanglement generation") {
    auto one = run(base(RateFamily::constant(), 1.0, StopRule::entered(1), 1));
    CHECK(disentanglement_generation(one.log, 1) == 0u);
    // Root children are 1 and 2.
    auto split = hand_log({{1, EventKind::Entry, 0, kNoVertex, 0},
                           {2, EventKind::Jump, 0, 0, 1},
                           {3, EventKind::Entry, 1, kNoVertex, 0},
                           {4, EventKind::Jump, 1, 0, 2}},
                          5);
    CHECK(disentanglement_generation(split, 2) == 1u);
    auto same = hand_log({{1, EventKind::Entry, 0, kNoVertex, 0},
                          {2, EventKind::Jump, 0, 0, 1},
                          {3, EventKind::Jump, 0, 1, 3},
                          {4, EventKind::Entry, 1, kNoVertex, 0},
                          {5, EventKind::Jump, 1, 0, 1},
                          {6, EventKind::Jump, 1, 1, 4}},
                         7);
    CHECK(disentanglement_generation(same, 2) == 2u);
    auto waiting = hand_log({{1, EventKind::Entry, 0, kNoVertex, 0},
                             {2, EventKind::Jump, 0, 0, 1},
                             {3, EventKind::Entry, 1, kNoVertex, 0}},
                            4);
    CHECK(!disentanglement_generation(waiting, 2));
    CHECK(!disentanglement_generation(waiting, 3));
}

TEST_CASE("depth of traffic") {
    Tree t(OffspringLaw::dirac(2), 0);
    t.materialize_to_depth(4);
    SystemState s;
    CHECK(depth_of_traffic(s, t, Tree::root()) == 0);
    CHECK(depth_of_traffic(s, t, 5) == 0);
    s.occupancy.assign(t.size(), 0);
    s.occupancy[Tree::root()] = 1;
    CHECK(depth_of_traffic(s, t, Tree::root()) == 1);
    for (std::uint32_t k = 0; k < 3; ++k) {
        for (VertexId v : t.generation_vertices(k)) s.occupancy[v] = 1;
        CHECK(depth_of_traffic(s, t, Tree::root()) == k + 1);
    }
    // One empty vertex in generation 2 is enough.
    s.occupancy[t.generation_vertices(2).back()] = 0;
    CHECK(depth_of_traffic(s, t, Tree::root()) == 2);
}

TEST_CASE("availability and max generation") {
    auto log = hand_log({{1, EventKind::Entry, 0, kNoVertex, 0},
                         {2.5, EventKind::Jump, 0, 0, 1},
                         {3, EventKind::Entry, 1, kNoVertex, 0}},
                        4);
    CHECK(*availability(log, 0, 0.5) == 0.0);
    CHECK(*availability(log, 0, 1.5) == doctest::Approx(1.0));
    CHECK(*availability(log, 0, 2.7) == 0.0);
    CHECK(!availability(log, 0, 3.5));

    auto before = max_generation(log, 0.5);
    CHECK(before.generation == 0);
    CHECK(!before.any);
    CHECK(max_generation(log, 1.0).any);
    CHECK(max_generation(log, 3.0).generation == 1);

    auto solo = base(RateFamily::constant(), 1.0, StopRule::time(20), 4);
    solo.max_particles = 1;
    auto r = run(solo);
    std::uint32_t jumps = 0;
    for (const Event& e : r.log.events) jumps += e.kind == EventKind::Jump;
    CHECK(max_generation(r.log, 20).generation == jumps);

    auto many = run(base(RateFamily::exponential(3), 1.0, StopRule::time(50), 8));
    std::uint32_t prev = 0;
    for (double t = 0; t <= 50; t += 0.25) {
        auto g = max_generation(many.log, t).generation;
        CHECK(g >= prev);
        prev = g;
    }
}

TEST_CASE("clock modes agree in distribution (two-sample KS on J_1(5))") {
    auto tree = std::make_shared<const Tree>(OffspringLaw::dirac(2), 0);
    std::vector<double> a, b;
    for (std::uint64_t s = 0; s < 10000; ++s) {
        auto c = base(RateFamily::exponential(3), 1.0, StopRule::time(5), derive_seed(11, s));
        c.truncation_depth = 4;
        c.clock = ClockMode::NextReaction;
        a.push_back(double(current_generation(run(c, tree).log, 1, 5)));
        c.clock = ClockMode::SharedStream;
        b.push_back(double(current_generation(run(c, tree).log, 1, 5)));
    }
    auto ks = testsupport::ks_two_sample(a, b);
    MESSAGE("D = " << ks.D << ", p = " << ks.p);
    CHECK(ks.p > 0.001);
}

TEST_CASE("entries form a Poisson process when the root is rarely blocked") {
    const double lambda = 0.02;
    for (ClockMode clock : {ClockMode::NextReaction, ClockMode::SharedStream}) {
        auto c = base(RateFamily::constant(), lambda, StopRule::entered(3000), 21);
        c.truncation_depth = 0;  // particles leave from the root at rate r_o = 2
        c.clock = clock;
        auto r = run(c);
        std::vector<double> gaps;
        double last = 0;
        for (const Event& e : r.log.events)
            if (e.kind == EventKind::Entry) {
                gaps.push_back(e.time - last);
                last = e.time;
            }
        // A gap is the root's Exp(2) exit followed by an Exp(lambda) wait: the
        // Poisson law up to an O(lambda) blocking correction, kept exact here.
        auto ks = testsupport::ks_one_sample(gaps, [&](double x) {
            return 1 - (2 * std::exp(-lambda * x) - lambda * std::exp(-2 * x)) / (2 - lambda);
        });
        MESSAGE("D = " << ks.D << ", p = " << ks.p);
        CHECK(ks.p > 0.001);
    }
}

TEST_CASE("availability at the root obeys the renewal tail bound") {
    BoundsModel model(RateFamily::exponential(3), OffspringLaw::dirac(2));
    auto tree = std::make_shared<const Tree>(OffspringLaw::dirac(2), 0);
    std::map<std::uint32_t, std::vector<double>> samples;
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto r = run(base(RateFamily::exponential(3), 1.0, StopRule::time(300), derive_seed(5, s)), tree);
        for (double t = 10; t < 250; t += 5) {
            auto psi = availability(r.log, Tree::root(), t);
            if (!psi) continue;
            std::uint32_t D = depth_of_traffic(replay(prefix(r.log, t)), *tree, Tree::root());
            for (std::uint32_t l : {3u, 4u, 5u})
                if (D <= l) samples[l].push_back(*psi);
        }
    }
    for (std::uint32_t l : {3u, 4u, 5u}) {
        auto b = renewal_tail_bound(1.0, l, model.kappa(), model.c_low());
        const auto& x = samples[l];
        REQUIRE(x.size() > 100);
        double exceed = 0;
        for (double v : x) exceed += v > b.threshold;
        double p = exceed / x.size();
        double se = std::sqrt(std::max(p * (1 - p), 1.0 / x.size()) / x.size());
        CHECK(p <= b.probability + 3 * se);
    }
}
