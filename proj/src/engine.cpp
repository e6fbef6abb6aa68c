#include "treetasep/engine.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <fmt/format.h>

#include "sim_core.hpp"

namespace treetasep {

namespace detail {

TasepProcess::TasepProcess(const Tree& tree, std::optional<std::uint32_t> truncation,
                           std::optional<std::uint64_t> max_particles)
    : tree_(&tree), truncation_(truncation), max_particles_(max_particles) {}

void TasepProcess::set(VertexId v, std::int64_t particle) {
    if (v >= occ_.size()) {
        std::size_t n = std::max<std::size_t>(tree_->size(), v + 1);
        occ_.resize(n, 0);
        who_.resize(n, -1);
    }
    occ_[v] = particle >= 0;
    who_[v] = particle;
}

void TasepProcess::prepare(VertexId v) {
    if (is_leaf(v)) return;
    if (tree_->growable() || tree_->materialized(v)) tree_->ensure_children(v);
}

bool TasepProcess::can_jump_into(VertexId c) const {
    VertexId x = tree_->parent(c);
    return occupied(x) && !occupied(c) && !is_leaf(x);
}

bool TasepProcess::can_exit(VertexId v) const { return truncation_ && occupied(v) && is_leaf(v); }

void TasepProcess::place_initial(const std::vector<VertexId>& initial) {
    if (!particles_.empty()) throw std::logic_error("initial configuration placed twice");
    std::unordered_set<VertexId> seen;
    for (VertexId v : initial) {
        if (v >= tree_->size()) throw std::invalid_argument(fmt::format("initial: vertex {} not materialized", v));
        if (!seen.insert(v).second) throw std::invalid_argument(fmt::format("initial: vertex {} listed twice", v));
        if (truncation_ && tree_->generation(v) > *truncation_)
            throw std::invalid_argument(fmt::format("initial: vertex {} lies below the truncation", v));
        auto i = static_cast<std::uint32_t>(particles_.size());
        particles_.push_back(Particle{i, v, 0.0, {v}});
        set(v, i);
        prepare(v);
    }
    log_.initial = initial;
}

void TasepProcess::enter(double t) {
    auto i = static_cast<std::uint32_t>(particles_.size());
    particles_.push_back(Particle{i, Tree::root(), t, {Tree::root()}});
    set(Tree::root(), i);
    ++entered_;
    if (past_.empty()) past_.resize(1, 0);
    ++past_[0];
    log_.events.push_back(Event{t, EventKind::Entry, i, kNoVertex, Tree::root()});
    prepare(Tree::root());
}

void TasepProcess::jump(double t, VertexId x, VertexId y) {
    auto i = static_cast<std::uint32_t>(who_[x]);
    set(x, -1);
    set(y, i);
    Particle& p = particles_[i];
    p.vertex = y;
    p.path.push_back(y);
    std::uint32_t g = tree_->generation(y);
    if (g >= past_.size()) past_.resize(g + 1, 0);
    ++past_[g];
    log_.events.push_back(Event{t, EventKind::Jump, i, x, y});
    prepare(y);
}

void TasepProcess::exit(double t, VertexId x) {
    auto i = static_cast<std::uint32_t>(who_[x]);
    set(x, -1);
    particles_[i].vertex = kNoVertex;
    log_.events.push_back(Event{t, EventKind::Exit, i, x, kNoVertex});
}

SystemState TasepProcess::state(double t) const { return SystemState{occ_, particles_, t}; }

}  // namespace detail

namespace {

std::vector<std::uint8_t> trimmed(std::vector<std::uint8_t> v) {
    while (!v.empty() && v.back() == 0) v.pop_back();
    return v;
}

void validate(const SimConfig& c) {
    if (!(c.lambda > 0) || !std::isfinite(c.lambda)) throw std::invalid_argument("run: lambda must be positive and finite");
    switch (c.stop.kind) {
    case StopRule::Kind::Time:
        if (!(c.stop.T >= 0) || !std::isfinite(c.stop.T)) throw std::invalid_argument("run: stop time must be finite and >= 0");
        break;
    case StopRule::Kind::ParticlesEntered:
    case StopRule::Kind::ParticlesPastGeneration:
        if (c.stop.n == 0) throw std::invalid_argument("run: particle stop rule needs n >= 1");
        break;
    }
    if (c.event_cap == 0) throw std::invalid_argument("run: event cap must be positive");
}

}  // namespace

bool SystemState::operator==(const SystemState& o) const {
    return time == o.time && particles == o.particles && trimmed(occupancy) == trimmed(o.occupancy);
}

RunResult run(const SimConfig& config) {
    auto tree = std::make_shared<Tree>(config.law, config.tree_seed);
    if (!config.initial.empty()) {
        // Seed ids refer to breadth-first order, so grow whole generations until they exist.
        VertexId need = *std::max_element(config.initial.begin(), config.initial.end());
        for (std::uint32_t g = 1; tree->size() <= need && g <= need; ++g) tree->materialize_to_depth(g);
    }
    return run(config, std::move(tree));
}

RunResult run(const SimConfig& config, std::shared_ptr<const Tree> tree) {
    validate(config);
    if (!tree) throw std::invalid_argument("run: null tree");
    detail::TasepProcess proc(*tree, config.truncation_depth, config.max_particles);
    proc.place_initial(config.initial);
    detail::SlotModel model(*tree, config.family, {&proc}, config.lambda);

    detail::RunLimits limits;
    limits.event_cap = config.event_cap;
    switch (config.stop.kind) {
    case StopRule::Kind::Time:
        limits.T = config.stop.T;
        break;
    case StopRule::Kind::ParticlesEntered:
        limits.done = [&] { return proc.entered() >= config.stop.n; };
        break;
    case StopRule::Kind::ParticlesPastGeneration:
        limits.done = [&] { return proc.past(config.stop.m) >= config.stop.n; };
        break;
    }

    detail::RunOutcome outcome;
    if (config.clock == ClockMode::NextReaction) {
        Rng rng(hash_combine(config.seed, 0x6e72));
        outcome = detail::run_next_reaction(model, rng, limits);
    } else {
        outcome = detail::run_shared_streams(model, config.seed, limits);
    }

    RunResult r;
    r.tree = std::move(tree);
    r.state = proc.state(outcome.end_time);
    r.log = std::move(proc.log());
    r.log.end_time = outcome.end_time;
    r.truncated = outcome.truncated;
    r.entered = proc.entered();
    return r;
}

SystemState replay(const EventLog& log) {
    SystemState s;
    auto put = [&](VertexId v, bool on) {
        if (v >= s.occupancy.size()) s.occupancy.resize(std::size_t(v) + 1, 0);
        if (on && s.occupancy[v]) throw std::logic_error(fmt::format("replay: exclusion violated at vertex {}", v));
        s.occupancy[v] = on;
    };
    for (VertexId v : log.initial) {
        auto i = static_cast<std::uint32_t>(s.particles.size());
        s.particles.push_back(Particle{i, v, 0.0, {v}});
        put(v, true);
    }
    for (const Event& e : log.events) {
        switch (e.kind) {
        case EventKind::Entry:
            if (e.particle != s.particles.size()) throw std::logic_error("replay: entries out of order");
            s.particles.push_back(Particle{e.particle, Tree::root(), e.time, {Tree::root()}});
            put(Tree::root(), true);
            break;
        case EventKind::Jump: {
            Particle& p = s.particles.at(e.particle);
            if (p.vertex != e.from) throw std::logic_error("replay: jump from a vertex the particle does not hold");
            put(e.from, false);
            put(e.to, true);
            p.vertex = e.to;
            p.path.push_back(e.to);
            break;
        }
        case EventKind::Exit: {
            Particle& p = s.particles.at(e.particle);
            if (p.vertex != e.from) throw std::logic_error("replay: exit from a vertex the particle does not hold");
            put(e.from, false);
            p.vertex = kNoVertex;
            break;
        }
        }
    }
    s.time = log.end_time;
    return s;
}

// ---- serialization

namespace {

const char* kind_name(EventKind k) {
    switch (k) {
    case EventKind::Entry: return "entry";
    case EventKind::Jump: return "jump";
    case EventKind::Exit: return "exit";
    }
    return "?";
}

long long vid(VertexId v) { return v == kNoVertex ? -1 : static_cast<long long>(v); }

VertexId parse_vid(long long v) {
    if (v == -1) return kNoVertex;
    if (v < 0 || v >= static_cast<long long>(kNoVertex)) throw std::invalid_argument("event log: bad vertex id");
    return static_cast<VertexId>(v);
}

}  // namespace

void write_event_log(std::ostream& os, const EventLog& log) {
    os << "# event log v1: t kind particle from to\n";
    os << "# initial";
    for (VertexId v : log.initial) os << ' ' << v;
    os << '\n';
    os << fmt::format("# end_time {:.17g}\n", log.end_time);
    for (const Event& e : log.events)
        os << fmt::format("{:.17g} {} {} {} {}\n", e.time, kind_name(e.kind), e.particle, vid(e.from), vid(e.to));
}

EventLog read_event_log(std::istream& is) {
    EventLog log;
    std::string line;
    std::size_t lineno = 0;
    double last = -1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        if (line[0] == '#') {
            std::string hash, tag;
            ls >> hash >> tag;
            if (tag == "initial") {
                long long v;
                while (ls >> v) log.initial.push_back(parse_vid(v));
            } else if (tag == "end_time") {
                ls >> log.end_time;
            }
            continue;
        }
        Event e;
        std::string kind;
        long long from, to;
        if (!(ls >> e.time >> kind >> e.particle >> from >> to))
            throw std::invalid_argument(fmt::format("event log line {}: malformed", lineno));
        if (kind == "entry")
            e.kind = EventKind::Entry;
        else if (kind == "jump")
            e.kind = EventKind::Jump;
        else if (kind == "exit")
            e.kind = EventKind::Exit;
        else
            throw std::invalid_argument(fmt::format("event log line {}: unknown kind '{}'", lineno, kind));
        e.from = parse_vid(from);
        e.to = parse_vid(to);
        if (!(e.time > last)) throw std::invalid_argument(fmt::format("event log line {}: times not increasing", lineno));
        last = e.time;
        log.events.push_back(e);
    }
    return log;
}

// ---- measurements

LogIndex::LogIndex(const EventLog& log) : end_time_(log.end_time) {
    // Generation of every particle, tracked through its jumps. Initial
    // particles have no known generation; their jumps are attributed to the
    // vertex only.
    std::vector<std::int64_t> gen(log.initial.size(), -1);
    arrivals_.resize(1);
    for (const Event& e : log.events) {
        if (e.kind == EventKind::Exit) continue;
        std::int64_t g;
        if (e.kind == EventKind::Entry) {
            if (e.particle >= gen.size()) gen.resize(e.particle + 1, -1);
            g = gen[e.particle] = 0;
        } else {
            g = gen.at(e.particle);
            if (g >= 0) g = ++gen[e.particle];
        }
        by_vertex_[e.to].push_back(e.time);
        if (g < 0) continue;
        if (std::size_t(g) >= arrivals_.size()) arrivals_.resize(g + 1);
        arrivals_[g].push_back(e.time);
    }
    for (auto& a : arrivals_) first_reach_.push_back(a.empty() ? INFINITY : a.front());
}

std::uint64_t LogIndex::current_vertex(VertexId x, double t) const {
    auto it = by_vertex_.find(x);
    if (it == by_vertex_.end()) return 0;
    return std::upper_bound(it->second.begin(), it->second.end(), t) - it->second.begin();
}

std::uint64_t LogIndex::current_generation(std::uint32_t l, double t) const {
    if (l >= arrivals_.size()) return 0;
    const auto& a = arrivals_[l];
    return std::upper_bound(a.begin(), a.end(), t) - a.begin();
}

std::optional<double> LogIndex::tau(std::uint32_t m, std::uint64_t n) const {
    if (n == 0) return 0.0;
    if (m >= arrivals_.size() || arrivals_[m].size() < n) return std::nullopt;
    return arrivals_[m][n - 1];
}

std::uint32_t LogIndex::max_generation(double t) const {
    // first_reach_ is non-decreasing in the generation.
    auto it = std::upper_bound(first_reach_.begin(), first_reach_.end(), t);
    return it == first_reach_.begin() ? 0 : static_cast<std::uint32_t>(it - first_reach_.begin() - 1);
}

bool LogIndex::any_entry(double t) const { return !first_reach_.empty() && first_reach_[0] <= t; }

std::uint64_t current(const EventLog& log, VertexId x, double t) { return LogIndex(log).current_vertex(x, t); }

std::uint64_t current_generation(const EventLog& log, std::uint32_t l, double t) {
    return LogIndex(log).current_generation(l, t);
}

std::optional<double> tau(const EventLog& log, std::uint32_t m, std::uint64_t n) { return LogIndex(log).tau(m, n); }

MaxGeneration max_generation(const EventLog& log, double t) {
    LogIndex idx(log);
    return {idx.max_generation(t), idx.any_entry(t)};
}

std::optional<std::uint32_t> disentanglement_generation(const EventLog& log, std::uint64_t n) {
    if (n == 0) return 0u;
    // Paths z_i^m of the first n entered particles.
    std::vector<std::vector<VertexId>> path;
    std::vector<std::int64_t> slot(log.initial.size(), -1);
    for (const Event& e : log.events) {
        if (e.kind == EventKind::Entry) {
            if (path.size() >= n) continue;
            if (e.particle >= slot.size()) slot.resize(e.particle + 1, -1);
            slot[e.particle] = static_cast<std::int64_t>(path.size());
            path.push_back({Tree::root()});
        } else if (e.kind == EventKind::Jump) {
            if (e.particle < slot.size() && slot[e.particle] >= 0) path[slot[e.particle]].push_back(e.to);
        }
    }
    if (path.size() < n) return std::nullopt;
    std::size_t common = path[0].size();
    for (const auto& p : path) common = std::min(common, p.size());
    std::optional<std::uint32_t> found;
    std::unordered_set<VertexId> seen;
    for (std::size_t m = 0; m < common; ++m) {
        seen.clear();
        bool distinct = true;
        for (const auto& p : path) distinct = distinct && seen.insert(p[m]).second;
        if (distinct && !found) found = static_cast<std::uint32_t>(m);
        // Distinct vertices root disjoint subtrees, so distinctness persists.
        if (!distinct && found) throw std::logic_error("disentanglement: particles re-entangled");
    }
    return found;
}

std::uint32_t depth_of_traffic(const SystemState& state, const Tree& tree, VertexId x) {
    std::vector<VertexId> level{x}, next;
    for (std::uint32_t m = 0;; ++m) {
        for (VertexId v : level)
            if (!state.occupied(v)) return m;
        next.clear();
        for (VertexId v : level)
            for (VertexId c : tree.children(v)) next.push_back(c);
        // Unmaterialized children have never been visited, hence are empty.
        if (next.empty()) return m + 1;
        level.swap(next);
    }
}

std::optional<double> availability(const EventLog& log, VertexId x, double t) {
    bool occ = std::find(log.initial.begin(), log.initial.end(), x) != log.initial.end();
    auto it = log.events.begin();
    for (; it != log.events.end() && it->time <= t; ++it) {
        if (it->to == x) occ = true;
        if (it->from == x) occ = false;
    }
    if (!occ) return 0.0;
    for (; it != log.events.end(); ++it)
        if (it->from == x) return it->time - t;
    return std::nullopt;
}

void write_series_csv(std::ostream& os, const std::vector<double>& t, const std::vector<double>& v) {
    if (t.size() != v.size()) throw std::invalid_argument("series: length mismatch");
    os << "t,value\n";
    for (std::size_t i = 0; i < t.size(); ++i) os << fmt::format("{:.17g},{:.17g}\n", t[i], v[i]);
}

}  // namespace treetasep
