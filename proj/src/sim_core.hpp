#pragma once

// Schedulers shared by the engine and the couplings.

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "treetasep/engine.hpp"
#include "treetasep/rng.hpp"

namespace treetasep::detail {

// Slots of one or more exclusion processes on the same tree. A slot fires in
// every process where its transition is legal.
class SlotModel {
public:
    SlotModel(const Tree& tree, const RateFamily& family, std::vector<TasepProcess*> procs, double lambda,
              double lambda_extra = 0.0);

    bool legal(std::size_t k, std::uint64_t slot) const;
    bool legal_any(std::uint64_t slot) const;
    double rate(std::uint64_t slot);
    void fire(std::uint64_t slot, double t);
    // Slots whose legality may change when `slot` fires (including itself).
    void affected(std::uint64_t slot, std::vector<std::uint64_t>& out) const;
    // Every slot that can be legal in the current configuration.
    void all_candidates(std::vector<std::uint64_t>& out) const;
    std::size_t processes() const { return procs_.size(); }
    const Tree& tree() const { return *tree_; }

private:
    void touch(VertexId v, std::vector<std::uint64_t>& out) const;

    const Tree* tree_;
    SlotRates rates_;
    std::vector<TasepProcess*> procs_;
    double lambda_, lambda_extra_;
};

struct RunLimits {
    double T = std::numeric_limits<double>::infinity();
    std::uint64_t event_cap = 10'000'000;
    std::function<bool()> done;  // checked before every event; may be empty
    std::function<void(std::uint64_t slot, double t)> after_event;
};

struct RunOutcome {
    double end_time = 0;
    bool truncated = false;
    std::uint64_t events = 0;
};

// Gillespie direct method over a sum tree of slot rates.
RunOutcome run_next_reaction(SlotModel& model, Rng& rng, const RunLimits& limits);

// One Poisson stream per slot with its own generator keyed by tree position,
// so every process driven by the model reads the same clock marks. A stream
// is only realized while its slot is legal somewhere; on re-enabling it
// restarts from the current time, which by memorylessness leaves its law on
// the enabled periods unchanged.
RunOutcome run_shared_streams(SlotModel& model, std::uint64_t seed, const RunLimits& limits);

}  // namespace treetasep::detail
