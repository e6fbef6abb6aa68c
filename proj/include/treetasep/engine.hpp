#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "treetasep/gw_tree.hpp"
#include "treetasep/rate_field.hpp"

namespace treetasep {

enum class ClockMode { NextReaction, SharedStream };
enum class EventKind { Entry, Jump, Exit };

struct Event {
    double time = 0;
    EventKind kind = EventKind::Entry;
    std::uint32_t particle = 0;
    VertexId from = kNoVertex;  // kNoVertex for entries
    VertexId to = kNoVertex;    // kNoVertex for exits
    bool operator==(const Event&) const = default;
};

struct EventLog {
    std::vector<VertexId> initial;  // seed configuration, particles 0..k-1
    std::vector<Event> events;      // strictly increasing times
    double end_time = 0;            // time at which the run stopped
    bool operator==(const EventLog&) const = default;
};

// "t kind particle from to", kind in {entry, jump, exit}, -1 for absent vertices.
void write_event_log(std::ostream& os, const EventLog& log);
EventLog read_event_log(std::istream& is);

struct StopRule {
    enum class Kind { Time, ParticlesEntered, ParticlesPastGeneration } kind = Kind::Time;
    double T = 0;
    std::uint64_t n = 0;
    std::uint32_t m = 0;
    static StopRule time(double T) { return {Kind::Time, T, 0, 0}; }
    static StopRule entered(std::uint64_t n) { return {Kind::ParticlesEntered, 0, n, 0}; }
    static StopRule past(std::uint64_t n, std::uint32_t m) { return {Kind::ParticlesPastGeneration, 0, n, m}; }
};

struct SimConfig {
    OffspringLaw law = OffspringLaw::dirac(2);
    std::uint64_t tree_seed = 0;
    RateFamily family = RateFamily::constant();
    double lambda = 1.0;
    StopRule stop = StopRule::time(1.0);
    std::uint64_t seed = 0;
    ClockMode clock = ClockMode::NextReaction;
    // The reservoir closes after this many entries.
    std::optional<std::uint64_t> max_particles;
    // Particles at this generation leave the tree at rate r_x instead of jumping.
    std::optional<std::uint32_t> truncation_depth;
    // Seed configuration; with run(config) the ids are breadth-first ids of the fresh tree.
    std::vector<VertexId> initial;
    std::uint64_t event_cap = 10'000'000;
};

struct Particle {
    std::uint32_t index = 0;
    VertexId vertex = kNoVertex;  // kNoVertex once it has left a truncation
    double entry_time = 0;
    std::vector<VertexId> path;   // vertices held so far; for entered particles path[m] = z_i^m
    bool operator==(const Particle&) const = default;
};

struct SystemState {
    std::vector<std::uint8_t> occupancy;  // by vertex id; ids beyond the end are empty
    std::vector<Particle> particles;
    double time = 0;
    bool occupied(VertexId v) const { return v < occupancy.size() && occupancy[v]; }
    bool operator==(const SystemState& o) const;
};

struct RunResult {
    std::shared_ptr<const Tree> tree;
    SystemState state;
    EventLog log;
    bool truncated = false;  // stopped by the event cap or with nothing left to do
    std::uint64_t entered = 0;
};

// Throws std::invalid_argument for lambda <= 0 or an invalid stop rule.
RunResult run(const SimConfig& config);
// Runs on a caller-provided tree; config.law and config.tree_seed are ignored.
RunResult run(const SimConfig& config, std::shared_ptr<const Tree> tree);

SystemState replay(const EventLog& log);

// Indexed queries over one log. Generations are read from the log itself.
class LogIndex {
public:
    explicit LogIndex(const EventLog& log);
    // J_x(t): arrivals at x by time t.
    std::uint64_t current_vertex(VertexId x, double t) const;
    // J_l(t): arrivals into generation l by time t.
    std::uint64_t current_generation(std::uint32_t l, double t) const;
    // tau_m^n: first time J_m reaches n; 0 for n = 0.
    std::optional<double> tau(std::uint32_t m, std::uint64_t n) const;
    std::uint32_t max_generation(double t) const;
    bool any_entry(double t) const;
    std::uint32_t deepest() const { return static_cast<std::uint32_t>(arrivals_.size()) - 1; }
    double end_time() const { return end_time_; }

private:
    std::vector<std::vector<double>> arrivals_;                     // by generation, sorted
    std::unordered_map<VertexId, std::vector<double>> by_vertex_;   // sorted
    std::vector<double> first_reach_;                               // first arrival time per generation
    double end_time_ = 0;
};

std::uint64_t current(const EventLog& log, VertexId x, double t);
std::uint64_t current_generation(const EventLog& log, std::uint32_t l, double t);
std::optional<double> tau(const EventLog& log, std::uint32_t m, std::uint64_t n);

// Smallest m at which the first n entered particles sit at pairwise distinct
// vertices z_i^m; nullopt (not yet) if no generation crossed by all of them qualifies.
std::optional<std::uint32_t> disentanglement_generation(const EventLog& log, std::uint64_t n);

// D_x: distance below x to the first generation of its subtree holding an empty vertex.
std::uint32_t depth_of_traffic(const SystemState& state, const Tree& tree, VertexId x);

// psi_x(t): time after t until x is empty; nullopt if the log ends first.
std::optional<double> availability(const EventLog& log, VertexId x, double t);

struct MaxGeneration {
    std::uint32_t generation = 0;
    bool any = false;  // false before the first entry
};
MaxGeneration max_generation(const EventLog& log, double t);

// "t,value" rows for a step function sampled at the given times.
void write_series_csv(std::ostream& os, const std::vector<double>& t, const std::vector<double>& v);

namespace detail {

// Slot ids: 0 the reservoir, 1 the extra reservoir of a coupled pair,
// 2 + 2v the edge into v, 3 + 2v the exit from truncation leaf v.
constexpr std::uint64_t kReservoir = 0;
constexpr std::uint64_t kExtraReservoir = 1;
constexpr std::uint64_t enter_slot(VertexId v) { return 2 + 2 * std::uint64_t(v); }
constexpr std::uint64_t exit_slot(VertexId v) { return 3 + 2 * std::uint64_t(v); }

// One exclusion process on a shared tree together with its log.
class TasepProcess {
public:
    TasepProcess(const Tree& tree, std::optional<std::uint32_t> truncation, std::optional<std::uint64_t> max_particles);
    void place_initial(const std::vector<VertexId>& initial);

    bool occupied(VertexId v) const { return v < occ_.size() && occ_[v]; }
    bool can_enter() const { return !occupied(Tree::root()) && (!max_particles_ || entered_ < *max_particles_); }
    bool can_jump_into(VertexId c) const;  // c != root
    bool can_exit(VertexId v) const;
    bool is_leaf(VertexId v) const { return truncation_ && tree_->generation(v) >= *truncation_; }

    void enter(double t);
    void jump(double t, VertexId x, VertexId y);
    void exit(double t, VertexId x);

    std::uint64_t entered() const { return entered_; }
    std::uint64_t past(std::uint32_t m) const { return m < past_.size() ? past_[m] : 0; }
    const EventLog& log() const { return log_; }
    EventLog& log() { return log_; }
    SystemState state(double t) const;

private:
    void set(VertexId v, std::int64_t particle);
    void prepare(VertexId v);

    const Tree* tree_;
    std::optional<std::uint32_t> truncation_;
    std::optional<std::uint64_t> max_particles_;
    std::vector<std::uint8_t> occ_;
    std::vector<std::int64_t> who_;  // particle index at a vertex, -1 if empty
    std::vector<Particle> particles_;
    std::vector<std::uint64_t> past_;  // arrivals per generation
    std::uint64_t entered_ = 0;
    EventLog log_;
};

// Per-slot rates with lazily filled caches.
class SlotRates {
public:
    SlotRates(const Tree& tree, const RateFamily& family) : tree_(&tree), family_(&family) {}
    double edge(VertexId child);
    double out(VertexId v);

private:
    const Tree* tree_;
    const RateFamily* family_;
    std::vector<double> edge_, out_;
};

// Event-time step that keeps times strictly increasing.
double advance(double t, double dt);

}  // namespace detail

}  // namespace treetasep
