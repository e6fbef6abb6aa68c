#include "sim_core.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

namespace treetasep::detail {

double advance(double t, double dt) {
    double next = t + dt;
    if (!(next > t)) next = std::nextafter(t, std::numeric_limits<double>::infinity());
    return next;
}

double SlotRates::edge(VertexId child) {
    if (child >= edge_.size()) edge_.resize(std::max<std::size_t>(tree_->size(), child + 1), -1.0);
    double& r = edge_[child];
    if (r < 0) r = family_->edge_rate(*tree_, child);
    return r;
}

double SlotRates::out(VertexId v) {
    if (v >= out_.size()) out_.resize(std::max<std::size_t>(tree_->size(), v + 1), -1.0);
    double& r = out_[v];
    if (r < 0) {
        r = 0;
        for (VertexId c : tree_->ensure_children(v)) r += edge(c);
    }
    return r;
}

SlotModel::SlotModel(const Tree& tree, const RateFamily& family, std::vector<TasepProcess*> procs, double lambda,
                     double lambda_extra)
    : tree_(&tree), rates_(tree, family), procs_(std::move(procs)), lambda_(lambda), lambda_extra_(lambda_extra) {}

bool SlotModel::legal(std::size_t k, std::uint64_t slot) const {
    const TasepProcess& p = *procs_[k];
    if (slot == kReservoir) return lambda_ > 0 && p.can_enter();
    if (slot == kExtraReservoir) return k == 1 && lambda_extra_ > 0 && p.can_enter();
    auto v = static_cast<VertexId>((slot - 2) / 2);
    return slot % 2 == 0 ? p.can_jump_into(v) : p.can_exit(v);
}

bool SlotModel::legal_any(std::uint64_t slot) const {
    for (std::size_t k = 0; k < procs_.size(); ++k)
        if (legal(k, slot)) return true;
    return false;
}

double SlotModel::rate(std::uint64_t slot) {
    if (slot == kReservoir) return lambda_;
    if (slot == kExtraReservoir) return lambda_extra_;
    auto v = static_cast<VertexId>((slot - 2) / 2);
    return slot % 2 == 0 ? rates_.edge(v) : rates_.out(v);
}

void SlotModel::fire(std::uint64_t slot, double t) {
    // Decide legality first: firing in one process must not depend on another.
    bool go[8];
    std::size_t K = std::min<std::size_t>(procs_.size(), 8);
    for (std::size_t k = 0; k < K; ++k) go[k] = legal(k, slot);
    for (std::size_t k = 0; k < K; ++k) {
        if (!go[k]) continue;
        TasepProcess& p = *procs_[k];
        if (slot <= kExtraReservoir) {
            p.enter(t);
        } else {
            auto v = static_cast<VertexId>((slot - 2) / 2);
            if (slot % 2 == 0)
                p.jump(t, tree_->parent(v), v);
            else
                p.exit(t, v);
        }
    }
}

void SlotModel::touch(VertexId v, std::vector<std::uint64_t>& out) const {
    if (v != Tree::root()) out.push_back(enter_slot(v));
    out.push_back(exit_slot(v));
    for (VertexId c : tree_->children(v)) out.push_back(enter_slot(c));
}

void SlotModel::affected(std::uint64_t slot, std::vector<std::uint64_t>& out) const {
    out.push_back(kReservoir);
    out.push_back(kExtraReservoir);
    if (slot <= kExtraReservoir) {
        touch(Tree::root(), out);
        return;
    }
    auto v = static_cast<VertexId>((slot - 2) / 2);
    touch(v, out);
    if (slot % 2 == 0) touch(tree_->parent(v), out);
}

void SlotModel::all_candidates(std::vector<std::uint64_t>& out) const {
    out.push_back(kReservoir);
    out.push_back(kExtraReservoir);
    for (VertexId v = 0; v < tree_->size(); ++v) {
        bool any = false;
        for (auto* p : procs_) any = any || p->occupied(v);
        if (any) touch(v, out);
    }
}

namespace {

// Leaf sums are stored as given; every inner node is recomputed from its two
// children, so a node never accumulates rounding from earlier updates.
class SumTree {
public:
    void set(std::size_t i, double w) {
        if (i >= cap_) grow(i + 1);
        std::size_t p = cap_ + i;
        node_[p] = w;
        for (p >>= 1; p; p >>= 1) node_[p] = node_[2 * p] + node_[2 * p + 1];
    }
    double get(std::size_t i) const { return i < cap_ ? node_[cap_ + i] : 0.0; }
    double total() const { return node_[1]; }
    // Leaf index for u in [0, total); npos when rounding lands on an empty leaf.
    std::size_t find(double u) const {
        std::size_t p = 1;
        while (p < cap_) {
            double left = node_[2 * p];
            if (u < left) {
                p = 2 * p;
            } else {
                u -= left;
                p = 2 * p + 1;
            }
        }
        return node_[p] > 0 ? p - cap_ : npos;
    }
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    void grow(std::size_t need) {
        std::size_t cap = cap_;
        while (cap < need) cap *= 2;
        std::vector<double> node(2 * cap, 0.0);
        std::copy(node_.begin() + cap_, node_.begin() + 2 * cap_, node.begin() + cap);
        for (std::size_t p = cap - 1; p >= 1; --p) node[p] = node[2 * p] + node[2 * p + 1];
        node_ = std::move(node);
        cap_ = cap;
    }

    std::size_t cap_ = 1;
    std::vector<double> node_ = std::vector<double>(2, 0.0);
};

}  // namespace

RunOutcome run_next_reaction(SlotModel& model, Rng& rng, const RunLimits& limits) {
    if (model.processes() != 1) throw std::invalid_argument("next reaction: exactly one process");
    SumTree st;
    std::vector<std::uint64_t> slots;
    auto refresh = [&] {
        std::sort(slots.begin(), slots.end());
        slots.erase(std::unique(slots.begin(), slots.end()), slots.end());
        for (auto s : slots) st.set(s, model.legal(0, s) ? model.rate(s) : 0.0);
        slots.clear();
    };
    model.all_candidates(slots);
    refresh();

    RunOutcome out;
    double t = 0;
    for (;;) {
        if (limits.done && limits.done()) break;
        if (out.events >= limits.event_cap) {
            out.truncated = true;
            break;
        }
        double total = st.total();
        if (!(total > 0)) {
            if (std::isfinite(limits.T))
                t = limits.T;
            else
                out.truncated = true;
            break;
        }
        double dt = rng.exponential() / total;
        if (t + dt > limits.T) {
            t = limits.T;
            break;
        }
        t = advance(t, dt);
        std::size_t slot = SumTree::npos;
        for (int tries = 0; slot == SumTree::npos; ++tries) {
            if (tries == 64) throw std::logic_error("next reaction: sum tree out of balance");
            slot = st.find(rng.uniform() * total);
        }
        model.fire(slot, t);
        ++out.events;
        model.affected(slot, slots);
        refresh();
        if (limits.after_event) limits.after_event(slot, t);
    }
    out.end_time = t;
    return out;
}

namespace {

struct Stream {
    std::uint64_t state = 0;
    double next = 0;
    bool enabled = false;
    bool seeded = false;
};

std::uint64_t slot_key(const Tree& tree, std::uint64_t slot) {
    if (slot <= kExtraReservoir) return hash_combine(0x5e5e5e5eULL, slot);
    auto v = static_cast<VertexId>((slot - 2) / 2);
    return hash_combine(tree.path_key(v), slot % 2);
}

}  // namespace

RunOutcome run_shared_streams(SlotModel& model, std::uint64_t seed, const RunLimits& limits) {
    std::vector<Stream> streams;
    using Entry = std::pair<double, std::uint64_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    std::vector<std::uint64_t> slots;
    double t = 0;

    auto stream = [&](std::uint64_t s) -> Stream& {
        if (s >= streams.size()) streams.resize(std::max<std::size_t>(s + 1, streams.size() * 2));
        Stream& st = streams[s];
        if (!st.seeded) {
            st.state = hash_combine(seed, slot_key(model.tree(), s));
            st.seeded = true;
        }
        return st;
    };
    auto schedule = [&](std::uint64_t s, Stream& st) {
        double r = model.rate(s);
        if (!(r > 0)) return;
        Rng g(st.state);
        double dt = g.exponential() / r;
        st.state = g.state();
        st.next = advance(t, dt);
        st.enabled = true;
        heap.emplace(st.next, s);
    };
    auto refresh = [&] {
        std::sort(slots.begin(), slots.end());
        slots.erase(std::unique(slots.begin(), slots.end()), slots.end());
        for (auto s : slots) {
            bool on = model.legal_any(s);
            Stream& st = stream(s);
            if (on && !st.enabled)
                schedule(s, st);
            else if (!on)
                st.enabled = false;
        }
        slots.clear();
    };
    model.all_candidates(slots);
    refresh();

    RunOutcome out;
    for (;;) {
        if (limits.done && limits.done()) break;
        if (out.events >= limits.event_cap) {
            out.truncated = true;
            break;
        }
        while (!heap.empty()) {
            auto [time, s] = heap.top();
            const Stream& st = streams[s];
            if (st.enabled && st.next == time) break;
            heap.pop();
        }
        if (heap.empty()) {
            if (std::isfinite(limits.T))
                t = limits.T;
            else
                out.truncated = true;
            break;
        }
        auto [time, s] = heap.top();
        if (time > limits.T) {
            t = limits.T;
            break;
        }
        heap.pop();
        // Equal marks on different slots: keep the log strictly increasing.
        t = time > t ? time : advance(t, 0);
        streams[s].enabled = false;
        model.fire(s, t);
        ++out.events;
        model.affected(s, slots);
        refresh();
        if (limits.after_event) limits.after_event(s, t);
    }
    out.end_time = t;
    return out;
}

}  // namespace treetasep::detail
