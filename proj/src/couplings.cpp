#include "treetasep/couplings.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <queue>
#include <tuple>

#include <fmt/format.h>

#include "sim_core.hpp"
#include "treetasep/rng.hpp"

namespace treetasep {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Mark {
    double t = kInf;
    double u = 0, v = 0;
};

// Poisson marks of a fixed rate from `origin` on; each mark carries two uniforms.
// Two cursors built from the same key and origin read identical marks.
class StreamCursor {
public:
    StreamCursor() = default;
    StreamCursor(std::uint64_t key, double origin, double rate) : rng_(key), t_(origin), rate_(rate) {}
    Mark next() {
        if (!(rate_ > 0)) return {};
        t_ = detail::advance(t_, rng_.exponential() / rate_);
        Mark m{t_, rng_.uniform(), rng_.uniform()};
        return m;
    }
    Mark first_after(double s) {
        Mark m;
        do m = next();
        while (m.t <= s);
        return m;
    }

private:
    Rng rng_{0};
    double t_ = 0;
    double rate_ = 0;
};

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t tag, std::uint64_t i, std::uint64_t l) {
    return hash_combine(hash_combine(hash_combine(seed, tag), i), l);
}

constexpr std::uint64_t kTagEntry = 0x656e;
constexpr std::uint64_t kTagWalk = 0x776b;
constexpr std::uint64_t kTagSlow = 0x736c;
constexpr std::uint64_t kTagTopUp = 0x7475;

// Heap item: (time, type, index, version); lower type wins ties.
using Item = std::tuple<double, int, std::uint64_t, std::uint64_t>;
using MinHeap = std::priority_queue<Item, std::vector<Item>, std::greater<>>;

// Child of x chosen by cumulative weight w over `weights`.
VertexId pick(ChildRange kids, const std::vector<double>& weights, double w) {
    auto it = kids.begin();
    for (double r : weights) {
        if (w < r) return *it;
        w -= r;
        ++it;
    }
    return *(kids.begin() + (weights.size() - 1));
}

}  // namespace

std::uint64_t Certificate::violations() const {
    return static_cast<std::uint64_t>(std::count(holds.begin(), holds.end(), std::uint8_t{0}));
}

void write_certificate_csv(std::ostream& os, const Certificate& cert) {
    os << "event_index,holds\n";
    for (std::size_t i = 0; i < cert.holds.size(); ++i) os << i << ',' << int(cert.holds[i]) << '\n';
}

// ---- canonical coupling

CanonicalPair canonical_pair(const Tree& tree, const RateFamily& family, double lambda1, double lambda2,
                             std::uint64_t seed, double T, const CanonicalOptions& opts) {
    if (!(lambda1 >= 0) || !(lambda2 >= lambda1)) throw std::invalid_argument("canonical: need 0 <= lambda1 <= lambda2");
    if (!(T >= 0)) throw std::invalid_argument("canonical: T must be >= 0");
    detail::TasepProcess p1(tree, std::nullopt, std::nullopt), p2(tree, std::nullopt, std::nullopt);
    p1.place_initial(opts.initial1);
    p2.place_initial(opts.initial2);

    // Sites with eta1 = 1 and eta2 = 0.
    std::vector<std::uint8_t> bad;
    std::uint64_t bad_count = 0;
    auto recheck = [&](VertexId v) {
        if (v >= bad.size()) bad.resize(std::max<std::size_t>(tree.size(), v + 1), 0);
        std::uint8_t now = p1.occupied(v) && !p2.occupied(v);
        bad_count += now;
        bad_count -= bad[v];
        bad[v] = now;
    };
    for (VertexId v : opts.initial1) recheck(v);
    if (bad_count) throw std::invalid_argument("canonical: initial configurations are not ordered");

    detail::SlotModel model(tree, family, {&p1, &p2}, lambda1, lambda2 - lambda1);
    CanonicalPair out;
    detail::RunLimits limits;
    limits.T = T;
    limits.event_cap = opts.event_cap;
    limits.after_event = [&](std::uint64_t slot, double t) {
        if (slot <= detail::kExtraReservoir) {
            recheck(Tree::root());
        } else {
            auto v = static_cast<VertexId>((slot - 2) / 2);
            recheck(v);
            if (slot % 2 == 0) recheck(tree.parent(v));
        }
        out.certificate.holds.push_back(bad_count == 0);
        if (bad_count && opts.throw_on_violation)
            throw CouplingViolation(fmt::format("canonical: ordering violated at event {} (t = {})",
                                                out.certificate.holds.size() - 1, t),
                                    out.certificate.holds.size() - 1, t);
    };
    auto outcome = detail::run_shared_streams(model, seed, limits);
    out.first = std::move(p1.log());
    out.second = std::move(p2.log());
    out.first.end_time = out.second.end_time = outcome.end_time;
    out.state1 = replay(out.first);
    out.state2 = replay(out.second);
    return out;
}

// ---- independent random walks

IrwPair irw_pair(const Tree& tree, const RateFamily& family, const GenerationProfile& profile, double lambda,
                 std::uint64_t seed, double T, const IrwOptions& opts) {
    if (!(lambda > 0)) throw std::invalid_argument("irw: lambda must be positive");
    if (!(T >= 0)) throw std::invalid_argument("irw: T must be >= 0");

    std::vector<double> walk_rate;
    auto M = [&](std::uint32_t l) {
        while (walk_rate.size() <= l) walk_rate.push_back(profile.rx_max(walk_rate.size()));
        return walk_rate[l];
    };
    auto kids_of = [&](VertexId x) {
        return tree.growable() || tree.materialized(x) ? tree.ensure_children(x) : ChildRange(0, 0);
    };

    struct Agent {
        VertexId vertex = kNoVertex;
        std::uint32_t gen = 0;
        StreamCursor cursor;
        Mark mark;
        std::uint64_t version = 0;
    };
    std::vector<Agent> part, walk;
    std::vector<std::vector<double>> origin;  // origin[i][l]: walker arrival at l
    std::vector<std::uint8_t> occ;
    auto occupied = [&](VertexId v) { return v < occ.size() && occ[v]; };
    auto set_occ = [&](VertexId v, bool on) {
        if (v >= occ.size()) occ.resize(std::max<std::size_t>(tree.size(), v + 1), 0);
        occ[v] = on;
    };

    IrwPair out;
    MinHeap heap;
    std::uint64_t bad = 0;  // particles ahead of their walker
    std::uint64_t events = 0;
    std::uint64_t entered = 0;
    std::uint64_t next_entry_version = 0;
    StreamCursor entry_cursor;
    Mark entry_mark;

    auto violation_check = [&](double t) {
        out.certificate.holds.push_back(bad == 0);
        if (bad && opts.throw_on_violation)
            throw CouplingViolation(
                fmt::format("irw: generation domination violated at event {} (t = {})", events, t), events, t);
    };

    auto walker_arrive = [&](std::uint64_t i, double t) {
        Agent& w = walk[i];
        auto& o = origin[i];
        if (o.size() <= w.gen) o.resize(w.gen + 1, kInf);
        o[w.gen] = t;
        ++w.version;
        if (kids_of(w.vertex).empty()) return;
        w.cursor = StreamCursor(stream_key(seed, kTagWalk, i, w.gen), t, M(w.gen));
        w.mark = w.cursor.next();
        heap.emplace(w.mark.t, 0, i, w.version);
    };
    auto particle_arrive = [&](std::uint64_t i, double t) {
        Agent& p = part[i];
        ++p.version;
        auto kids = kids_of(p.vertex);
        if (kids.empty()) return;
        double rx = 0;
        for (VertexId c : kids) rx += family.edge_rate(tree, c);
        if (rx > M(p.gen) * (1 + 1e-12))
            throw std::invalid_argument(fmt::format("irw: r_x = {} exceeds the walker rate {} at generation {}", rx,
                                                    M(p.gen), p.gen));
        const auto& o = origin[i];
        if (p.gen >= o.size() || !(o[p.gen] <= t)) {
            // The walker has not reached this generation: domination already failed.
            return;
        }
        p.cursor = StreamCursor(stream_key(seed, kTagWalk, i, p.gen), o[p.gen], M(p.gen));
        p.mark = p.cursor.first_after(t);
        heap.emplace(p.mark.t, 1, i, p.version);
    };
    auto schedule_entry = [&](double t) {
        if (opts.max_particles && entered >= *opts.max_particles) return;
        if (occupied(Tree::root())) return;
        entry_mark = entry_cursor.first_after(t);
        heap.emplace(entry_mark.t, 2, 0, ++next_entry_version);
    };
    auto update_bad = [&](std::uint64_t i, std::int64_t before) {
        bool now = part[i].gen > walk[i].gen;
        bad += now;
        bad -= before;
    };

    // Initial particles.
    for (VertexId v : opts.initial) {
        if (v >= tree.size()) throw std::invalid_argument("irw: initial vertex not materialized");
        if (occupied(v)) throw std::invalid_argument("irw: initial vertex listed twice");
        std::uint64_t i = part.size();
        std::uint32_t g = tree.generation(v);
        part.push_back(Agent{v, g});
        walk.push_back(Agent{v, g});
        origin.emplace_back();
        set_occ(v, true);
        out.tasep.initial.push_back(v);
        out.walks.initial.push_back(v);
        walker_arrive(i, 0.0);
        particle_arrive(i, 0.0);
    }
    entry_cursor = StreamCursor(stream_key(seed, kTagEntry, 0, 0), 0.0, lambda);
    schedule_entry(0.0);

    double t = 0;
    while (!heap.empty()) {
        auto [time, type, idx, version] = heap.top();
        if (time > T) break;
        heap.pop();
        if (events >= opts.event_cap) break;
        if (type == 2) {
            if (version != next_entry_version || occupied(Tree::root())) continue;
            t = time;
            std::uint64_t i = part.size();
            part.push_back(Agent{Tree::root(), 0});
            walk.push_back(Agent{Tree::root(), 0});
            origin.emplace_back();
            set_occ(Tree::root(), true);
            ++entered;
            auto p = static_cast<std::uint32_t>(i);
            out.tasep.events.push_back(Event{t, EventKind::Entry, p, kNoVertex, Tree::root()});
            out.walks.events.push_back(Event{t, EventKind::Entry, p, kNoVertex, Tree::root()});
            walker_arrive(i, t);
            particle_arrive(i, t);
            // The next entry stream starts at this entry.
            entry_cursor = StreamCursor(stream_key(seed, kTagEntry, entered, 0), t, lambda);
            ++events;
            violation_check(t);
            continue;
        }
        Agent& a = type == 0 ? walk[idx] : part[idx];
        if (version != a.version) continue;
        t = time;
        const Mark mk = a.mark;
        auto kids = kids_of(a.vertex);
        std::int64_t before = part[idx].gen > walk[idx].gen;
        if (type == 0) {
            auto k = static_cast<std::uint32_t>(kids.size());
            VertexId y = *(kids.begin() + std::min<std::uint32_t>(k - 1, static_cast<std::uint32_t>(mk.v * k)));
            out.walks.events.push_back(Event{t, EventKind::Jump, static_cast<std::uint32_t>(idx), a.vertex, y});
            a.vertex = y;
            ++a.gen;
            update_bad(idx, before);
            walker_arrive(idx, t);
        } else {
            std::vector<double> rates;
            double rx = 0;
            for (VertexId c : kids) rates.push_back(family.edge_rate(tree, c)), rx += rates.back();
            double w = mk.u * M(a.gen);
            bool moved = false;
            if (w < rx) {
                VertexId y = pick(kids, rates, w);
                if (!occupied(y)) {
                    VertexId x = a.vertex;
                    set_occ(x, false);
                    set_occ(y, true);
                    out.tasep.events.push_back(Event{t, EventKind::Jump, static_cast<std::uint32_t>(idx), x, y});
                    a.vertex = y;
                    ++a.gen;
                    update_bad(idx, before);
                    particle_arrive(idx, t);
                    if (x == Tree::root()) schedule_entry(t);
                    moved = true;
                }
            }
            if (!moved) {
                a.mark = a.cursor.next();
                heap.emplace(a.mark.t, 1, idx, a.version);
                continue;  // nothing changed; not an event
            }
        }
        ++events;
        violation_check(t);
    }
    out.tasep.end_time = out.walks.end_time = T;
    return out;
}

// ---- slowed TASEP against the real one

SlowedPair slowed_pair(const Tree& tree, const RateFamily& family, const GenerationProfile& profile, double lambda,
                       std::uint64_t n, double T, std::uint64_t seed, bool throw_on_violation) {
    if (!(lambda > 0)) throw std::invalid_argument("slowed: lambda must be positive");
    std::vector<double> rmin;
    auto r_min = [&](std::uint32_t l) {
        while (rmin.size() <= l) rmin.push_back(profile.r_min(rmin.size()));
        return rmin[l];
    };

    struct Real {
        VertexId vertex = kNoVertex;
        std::uint32_t gen = 0;
        StreamCursor a, b;
        Mark ma, mb;
        std::uint64_t version = 0;
        std::vector<double> arrival;  // by generation
    };
    std::vector<Real> part;
    std::vector<double> entry_origin{0.0};
    std::vector<std::uint8_t> occ;
    auto occupied = [&](VertexId v) { return v < occ.size() && occ[v]; };
    auto set_occ = [&](VertexId v, bool on) {
        if (v >= occ.size()) occ.resize(std::max<std::size_t>(tree.size(), v + 1), 0);
        occ[v] = on;
    };

    SlowedPair out;
    MinHeap heap;
    StreamCursor entry_cursor(stream_key(seed, kTagEntry, 0, 0), 0.0, lambda);
    std::uint64_t entry_version = 0;
    auto schedule_entry = [&](double t) {
        if (part.size() >= n || occupied(Tree::root())) return;
        Mark m = entry_cursor.first_after(t);
        heap.emplace(m.t, 2, 0, ++entry_version);
    };
    auto arrive = [&](std::uint64_t i, double t) {
        Real& p = part[i];
        ++p.version;
        p.arrival.push_back(t);
        auto kids = tree.growable() || tree.materialized(p.vertex) ? tree.ensure_children(p.vertex) : ChildRange(0, 0);
        double rx = 0, lo = r_min(p.gen);
        for (VertexId c : kids) {
            double r = family.edge_rate(tree, c);
            if (r < lo * (1 - 1e-12))
                throw std::invalid_argument(fmt::format("slowed: edge rate {} below r^min_{} = {}", r, p.gen, lo));
            rx += r;
        }
        p.a = StreamCursor(stream_key(seed, kTagSlow, i, p.gen), t, lo);
        p.b = StreamCursor(stream_key(seed, kTagTopUp, i, p.gen), t, std::max(0.0, rx - lo));
        p.ma = p.a.next();
        p.mb = p.b.next();
        heap.emplace(p.ma.t, 0, i, p.version);
        heap.emplace(p.mb.t, 1, i, p.version);
    };
    auto jump = [&](std::uint64_t i, VertexId y, double t) {
        Real& p = part[i];
        VertexId x = p.vertex;
        set_occ(x, false);
        set_occ(y, true);
        out.real.events.push_back(Event{t, EventKind::Jump, static_cast<std::uint32_t>(i), x, y});
        p.vertex = y;
        ++p.gen;
        arrive(i, t);
        if (x == Tree::root()) schedule_entry(t);
    };

    schedule_entry(0.0);
    while (!heap.empty()) {
        auto [time, type, idx, version] = heap.top();
        if (time > T) break;
        heap.pop();
        if (type == 2) {
            if (version != entry_version) continue;
            std::uint64_t i = part.size();
            part.push_back(Real{Tree::root(), 0});
            set_occ(Tree::root(), true);
            out.real.events.push_back(Event{time, EventKind::Entry, static_cast<std::uint32_t>(i), kNoVertex, Tree::root()});
            arrive(i, time);
            entry_origin.push_back(time);
            entry_cursor = StreamCursor(stream_key(seed, kTagEntry, i + 1, 0), time, lambda);
            continue;
        }
        Real& p = part[idx];
        if (version != p.version) continue;
        auto kids = tree.children(p.vertex);
        std::vector<double> rates;
        double avail = 0, rx = 0;
        for (VertexId c : kids) {
            double r = family.edge_rate(tree, c);
            rx += r;
            rates.push_back(occupied(c) ? 0.0 : r);
            avail += rates.back();
        }
        double lo = r_min(p.gen);
        Mark mk = type == 0 ? p.ma : p.mb;
        bool go = avail > 0 && (type == 0 || mk.u * (rx - lo) < avail - lo);
        if (go) {
            jump(idx, pick(kids, rates, (type == 0 ? mk.u : mk.v) * avail), time);
        } else if (type == 0) {
            p.ma = p.a.next();
            heap.emplace(p.ma.t, 0, idx, p.version);
        } else {
            p.mb = p.b.next();
            heap.emplace(p.mb.t, 1, idx, p.version);
        }
    }
    out.real.end_time = T;

    // Slowed system, particle by particle.
    out.slowed.assign(n, {});
    auto slowed_at = [&](std::uint64_t i, std::size_t k) {
        return k < out.slowed[i].size() ? out.slowed[i][k] : kInf;
    };
    for (std::uint64_t i = 0; i < n; ++i) {
        auto& s = out.slowed[i];
        // Entry: first mark of the i-th entry stream after particle i-1 left the root.
        double e = i == 0 ? 0.0 : slowed_at(i - 1, 1);
        if (i >= entry_origin.size() || !std::isfinite(e)) {
            s.push_back(kInf);
            continue;
        }
        StreamCursor ec(stream_key(seed, kTagEntry, i, 0), entry_origin[i], lambda);
        double t0 = ec.first_after(e).t;
        s.push_back(t0 <= T ? t0 : kInf);
        for (std::size_t k = 1; std::isfinite(s.back()); ++k) {
            std::size_t l = k - 1;
            double ready = std::max(s.back(), i == 0 ? 0.0 : slowed_at(i - 1, k + 1));
            if (!std::isfinite(ready) || i >= part.size() || l >= part[i].arrival.size()) {
                s.push_back(kInf);
                break;
            }
            StreamCursor a(stream_key(seed, kTagSlow, i, l), part[i].arrival[l], r_min(static_cast<std::uint32_t>(l)));
            double tk = a.first_after(ready).t;
            s.push_back(tk <= T ? tk : kInf);
        }
        while (!s.empty() && !std::isfinite(s.back()) && s.size() > 1) s.pop_back();
    }

    // Certificate: slowed move k of i no earlier than the real one.
    std::vector<std::tuple<double, std::uint64_t, std::size_t>> moves;
    for (std::uint64_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < out.slowed[i].size(); ++k)
            if (std::isfinite(out.slowed[i][k])) moves.emplace_back(out.slowed[i][k], i, k);
    std::sort(moves.begin(), moves.end());
    for (auto [t, i, k] : moves) {
        bool ok = i < part.size() && k < part[i].arrival.size() && part[i].arrival[k] <= t;
        out.certificate.holds.push_back(ok);
        if (!ok && throw_on_violation)
            throw CouplingViolation(fmt::format("slowed: particle {} move {} ahead of the real system", i, k),
                                    out.certificate.holds.size() - 1, t);
    }
    return out;
}

// ---- slowed passage times

PassageTable slowed_passage_times(const LppEnvironment& env, std::uint64_t M) {
    const std::size_t n = env.cols, N = env.rows;
    PassageTable g;
    g.rows = N;
    g.cols = n;
    g.g.assign(N * n, std::numeric_limits<double>::quiet_NaN());
    auto last = [&](std::size_t j) { return std::min<std::size_t>(M, N - j); };  // last move of particle j
    auto cell = [&](std::size_t j, std::size_t k) -> double& { return g.g[(j + k - 1) * n + (j - 1)]; };

    // Move (j, k) waits on (j, k-1) and on its blocker in particle j-1.
    auto blocker = [&](std::size_t j, std::size_t k) -> std::optional<std::size_t> {
        if (j == 1) return std::nullopt;
        if (k + 1 <= M) return k + 1;
        if (k == 0) return 0;  // M = 0: entries stay in order
        return std::nullopt;
    };
    std::vector<std::vector<int>> pending(n + 1);
    std::vector<std::vector<double>> ready(n + 1);
    for (std::size_t j = 1; j <= n; ++j) {
        if (N < j) continue;
        pending[j].assign(last(j) + 1, 0);
        ready[j].assign(last(j) + 1, -kInf);
        for (std::size_t k = 0; k <= last(j); ++k) pending[j][k] = (k > 0) + (blocker(j, k).has_value());
    }
    // Moves complete in time order; a completion releases at most two moves.
    MinHeap heap;
    auto start = [&](std::size_t j, std::size_t k) {
        double w = env(j + k, j);
        double t = std::isfinite(ready[j][k]) ? ready[j][k] + w : w;
        cell(j, k) = t;
        heap.emplace(t, 0, j, k);
    };
    auto release = [&](std::size_t j, std::size_t k, double t) {
        ready[j][k] = std::isfinite(ready[j][k]) ? std::max(ready[j][k], t) : t;
        if (--pending[j][k] == 0) start(j, k);
    };
    for (std::size_t j = 1; j <= n; ++j)
        if (N >= j && pending[j][0] == 0) start(j, 0);
    while (!heap.empty()) {
        auto [t, unused, j, k] = heap.top();
        (void)unused;
        heap.pop();
        if (k < last(j)) release(j, k + 1, t);
        if (j < n && N >= j + 1) {
            std::size_t j2 = j + 1;
            for (std::size_t k2 = 0; k2 <= last(j2); ++k2)
                if (blocker(j2, k2) == k) release(j2, k2, t);
        }
    }
    return g;
}

PassageTable slowed_passage_times(std::uint64_t n, std::uint64_t m, std::uint64_t M, double lambda,
                                  const GenerationProfile& profile, std::uint64_t seed) {
    if (m > M) throw std::invalid_argument("slowed passage times: need m <= M");
    return slowed_passage_times(build_env(n, m, lambda, profile, seed), M);
}

// ---- weighted exponential sums

ExpSumTail exp_sum_tail(const std::vector<double>& c, double t, double delta) {
    if (c.empty()) throw std::invalid_argument("exp_sum_tail: need at least one term");
    if (!(delta > 0 && delta < 1)) throw std::invalid_argument("exp_sum_tail: delta must lie in (0,1)");
    if (!(t >= 0)) throw std::invalid_argument("exp_sum_tail: t must be >= 0");
    ExpSumTail r;
    r.c = kInf;
    double sum_log_c = 0;
    for (double ci : c) {
        if (!(ci > 0)) throw std::invalid_argument("exp_sum_tail: rates must be positive");
        r.S += 1 / ci;
        r.c = std::min(r.c, ci);
        sum_log_c += std::log(ci);
    }
    const double cS = r.c * r.S;
    r.lower = 1 - std::exp(-delta * r.c * t - cS * std::log1p(-delta));
    r.upper1 = std::exp(delta * r.c * t - cS * std::log1p(delta));
    const double l = double(c.size() - 1);
    if (l == 0) {
        r.upper2 = kInf;
        r.upper2_typeset = kInf;
    } else {
        double lt = std::log(t / l);
        r.upper2 = std::exp(l + (l + 1) * lt + sum_log_c);
        r.upper2_typeset = std::exp(l * (1 + lt) + sum_log_c);
    }
    return r;
}

}  // namespace treetasep
