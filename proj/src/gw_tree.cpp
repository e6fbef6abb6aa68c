#include "treetasep/gw_tree.hpp"

#include <cmath>
#include <deque>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "treetasep/rng.hpp"

namespace treetasep {

OffspringLaw OffspringLaw::dirac(unsigned k) {
    if (k < 2) throw std::invalid_argument("offspring law: Dirac(k) needs k >= 2 for a supercritical tree");
    OffspringLaw law = general({{k, 1.0}});
    law.kind_ = OffspringKind::Dirac;
    return law;
}

OffspringLaw OffspringLaw::general(const std::map<unsigned, double>& weights) {
    OffspringLaw law;
    double total = 0, mean = 0;
    for (auto [k, p] : weights) {
        if (!(p >= 0) || !std::isfinite(p)) throw std::invalid_argument("offspring law: probabilities must be finite and non-negative");
        if (p == 0) continue;
        if (k == 0) throw std::invalid_argument("offspring law: p_0 > 0 is not allowed (trees must have no leaves)");
        law.weights_[k] = p;
        total += p;
        mean += k * p;
    }
    if (law.weights_.empty()) throw std::invalid_argument("offspring law: no positive weights");
    if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("offspring law: weights must sum to 1");
    if (!(mean > 1.0)) throw std::invalid_argument("offspring law: mean must exceed 1 (supercritical)");
    law.mean_ = mean;
    law.kind_ = law.weights_.size() == 1 ? OffspringKind::Dirac : OffspringKind::General;
    double acc = 0;
    for (auto [k, p] : law.weights_) {
        acc += p;
        law.cdf_.emplace_back(k, acc);
    }
    law.cdf_.back().second = 1.0;
    return law;
}

double OffspringLaw::p(unsigned k) const {
    auto it = weights_.find(k);
    return it == weights_.end() ? 0.0 : it->second;
}

unsigned OffspringLaw::sample(double u) const {
    for (auto [k, c] : cdf_)
        if (u < c) return k;
    return cdf_.back().first;
}

TreeStats tree_stats(const OffspringLaw& law) {
    TreeStats s;
    s.d_min = law.min_offspring();
    s.mean = law.mean();
    double mass = 0, first = 0;
    for (auto [k, p] : law.weights())
        if (k >= 2) {
            mass += p;
            first += k * p;
        }
    if (mass > 0) s.conditioned_mean = first / mass;
    return s;
}

// ---------------------------------------------------------------------------

void Tree::init_storage() {
    chunks_.reserve(kMaxChunks);
    grow_mutex_ = std::make_unique<std::mutex>();
}

Tree::Tree(const OffspringLaw& law, std::uint64_t seed) : law_(law), seed_(seed) {
    init_storage();
    VertexId r = allocate(1);
    at_mut(r).key = mix64(seed);
}

Tree::Tree(Tree&& other) noexcept
    : law_(std::move(other.law_)),
      seed_(other.seed_),
      chunks_(std::move(other.chunks_)),
      size_(other.size_.load()),
      grow_mutex_(std::move(other.grow_mutex_)) {
    other.size_ = 0;
}

Tree& Tree::operator=(Tree&& other) noexcept {
    law_ = std::move(other.law_);
    seed_ = other.seed_;
    chunks_ = std::move(other.chunks_);
    size_ = other.size_.load();
    grow_mutex_ = std::move(other.grow_mutex_);
    other.size_ = 0;
    return *this;
}

Tree::~Tree() = default;

VertexId Tree::allocate(std::uint32_t count) const {
    std::size_t first = size_.load(std::memory_order_relaxed);
    std::size_t last = first + count;
    if (last > kChunkSize * kMaxChunks) throw std::length_error("tree arena exhausted");
    while (chunks_.size() * kChunkSize < last) chunks_.push_back(std::make_unique<Vertex[]>(kChunkSize));
    size_.store(last, std::memory_order_release);
    return static_cast<VertexId>(first);
}

Tree Tree::from_parents(const std::vector<VertexId>& parents) {
    if (parents.empty() || parents[0] != kNoVertex) throw std::invalid_argument("tree: vertex 0 must be the root");
    Tree t;
    t.init_storage();
    t.allocate(static_cast<std::uint32_t>(parents.size()));
    t.at_mut(0).key = mix64(0);
    for (VertexId v = 1; v < parents.size(); ++v) {
        VertexId p = parents[v];
        if (p == kNoVertex || p >= v) throw std::invalid_argument("tree: parent ids must precede their children");
        Vertex& pv = t.at_mut(p);
        VertexId first = pv.first_child.load(std::memory_order_relaxed);
        if (first == kNoVertex) {
            pv.first_child.store(v, std::memory_order_relaxed);
        } else if (first + pv.child_count != v) {
            throw std::invalid_argument("tree: children of a vertex must have contiguous ids");
        }
        Vertex& cv = t.at_mut(v);
        cv.parent = p;
        cv.generation = pv.generation + 1;
        cv.child_index = pv.child_count++;
        cv.key = hash_combine(pv.key, cv.child_index);
    }
    return t;
}

Tree Tree::clone() const {
    std::lock_guard lock(*grow_mutex_);
    Tree t;
    t.law_ = law_;
    t.seed_ = seed_;
    t.init_storage();
    std::size_t n = size();
    t.allocate(static_cast<std::uint32_t>(n));
    for (VertexId v = 0; v < n; ++v) {
        const Vertex& a = at(v);
        Vertex& b = t.at_mut(v);
        b.parent = a.parent;
        b.generation = a.generation;
        b.child_index = a.child_index;
        b.child_count = a.child_count;
        b.key = a.key;
        b.first_child.store(a.first_child.load(std::memory_order_acquire), std::memory_order_relaxed);
    }
    return t;
}

bool Tree::materialized(VertexId v) const { return at(v).first_child.load(std::memory_order_acquire) != kNoVertex; }

ChildRange Tree::children(VertexId v) const {
    const Vertex& x = at(v);
    VertexId first = x.first_child.load(std::memory_order_acquire);
    if (first == kNoVertex) return ChildRange(0, 0);
    return ChildRange(first, first + x.child_count);
}

ChildRange Tree::ensure_children(VertexId v) const {
    if (materialized(v)) return children(v);
    if (!law_) throw std::logic_error("tree: cannot grow an explicit tree beyond its frontier");
    std::lock_guard lock(*grow_mutex_);
    if (materialized(v)) return children(v);
    Vertex& x = at_mut(v);
    Rng rng(x.key);
    unsigned k = law_->sample(rng.uniform());
    VertexId first = allocate(k);
    for (unsigned i = 0; i < k; ++i) {
        Vertex& c = at_mut(first + i);
        c.parent = v;
        c.generation = x.generation + 1;
        c.child_index = i;
        c.key = hash_combine(x.key, i);
    }
    x.child_count = k;
    x.first_child.store(first, std::memory_order_release);
    return ChildRange(first, first + k);
}

void Tree::materialize_to_depth(std::uint32_t depth) const {
    std::vector<VertexId> level{root()};
    for (std::uint32_t g = 0; g < depth; ++g) {
        std::vector<VertexId> next;
        for (VertexId v : level) {
            auto ch = growable() ? ensure_children(v) : children(v);
            next.insert(next.end(), ch.begin(), ch.end());
        }
        level.swap(next);
    }
}

std::vector<VertexId> Tree::generation_vertices(std::uint32_t g) const {
    // Walk down from the root so that the result follows left-to-right order.
    std::vector<VertexId> level{root()};
    for (std::uint32_t i = 0; i < g && !level.empty(); ++i) {
        std::vector<VertexId> next;
        for (VertexId v : level)
            for (VertexId c : children(v)) next.push_back(c);
        level.swap(next);
    }
    return level;
}

std::vector<VertexId> Tree::frontier() const {
    std::vector<VertexId> out;
    for (VertexId v = 0; v < size(); ++v)
        if (!materialized(v)) out.push_back(v);
    return out;
}

std::uint32_t Tree::max_generation() const {
    std::uint32_t g = 0;
    for (VertexId v = 0; v < size(); ++v) g = std::max(g, generation(v));
    return g;
}

bool Tree::is_ancestor(VertexId a, VertexId v) const {
    std::uint32_t ga = generation(a);
    while (generation(v) > ga) v = parent(v);
    return v == a;
}

// ---------------------------------------------------------------------------

std::uint32_t branching_count(const Tree& tree, VertexId x) {
    std::uint32_t count = 0;
    for (VertexId z = tree.parent(x); z != kNoVertex; z = tree.parent(z)) {
        std::uint32_t deg = tree.child_count(z) + (z == Tree::root() ? 0u : 1u);
        if (deg >= 3) ++count;
    }
    return count;
}

namespace {

// Build an explicit tree breadth-first from a child-list description given as
// a function of the source vertex.
template <class Children>
Tree build_breadth_first(VertexId src_root, Children&& kids, std::vector<VertexId>* origin) {
    std::vector<VertexId> parents{kNoVertex};
    std::vector<VertexId> src{src_root};
    for (std::size_t i = 0; i < src.size(); ++i)
        for (VertexId c : kids(src[i])) {
            parents.push_back(static_cast<VertexId>(i));
            src.push_back(c);
        }
    if (origin) *origin = src;
    return Tree::from_parents(parents);
}

}  // namespace

Tree core(const Tree& tree, std::uint32_t depth, std::vector<VertexId>* origin) {
    auto is_leaf = [&](VertexId v) {
        if (tree.generation(v) >= depth) return true;
        if (tree.growable()) tree.ensure_children(v);
        return !tree.materialized(v);
    };
    auto kids = [&](VertexId a) {
        std::vector<VertexId> out;
        if (is_leaf(a)) return out;
        for (VertexId c : tree.children(a)) {
            while (!is_leaf(c) && tree.child_count(c) == 1) c = *tree.children(c).begin();
            out.push_back(c);
        }
        return out;
    };
    return build_breadth_first(Tree::root(), kids, origin);
}

Tree expand_core(const Tree& skeleton, double p1, std::uint64_t seed) {
    if (!(p1 >= 0 && p1 < 1)) throw std::invalid_argument("expand_core: p1 must lie in [0,1)");
    Rng rng(seed);
    auto geometric = [&] {
        std::uint32_t k = 0;
        while (rng.uniform() < p1) ++k;
        return k;
    };
    // Expanded vertices are either skeleton vertices or chain vertices; a chain
    // vertex is encoded by the skeleton vertex it leads to plus remaining length.
    struct Node {
        VertexId target;
        std::uint32_t remaining;
    };
    std::vector<Node> nodes;
    std::vector<VertexId> parents;
    std::deque<std::size_t> queue;
    auto push = [&](VertexId target, VertexId parent) {
        nodes.push_back({target, geometric()});
        parents.push_back(parent);
        queue.push_back(nodes.size() - 1);
    };
    push(Tree::root(), kNoVertex);
    while (!queue.empty()) {
        std::size_t i = queue.front();
        queue.pop_front();
        Node n = nodes[i];
        if (n.remaining > 0) {
            nodes.push_back({n.target, n.remaining - 1});
            parents.push_back(static_cast<VertexId>(i));
            queue.push_back(nodes.size() - 1);
            continue;
        }
        for (VertexId c : skeleton.children(n.target)) push(c, static_cast<VertexId>(i));
    }
    return Tree::from_parents(parents);
}

// ---------------------------------------------------------------------------

void write_tree(std::ostream& os, const Tree& tree) {
    os << "# tree v1: id parent_id generation child_count\n";
    for (VertexId v = 0; v < tree.size(); ++v) {
        long long p = tree.parent(v) == kNoVertex ? -1 : static_cast<long long>(tree.parent(v));
        os << v << ' ' << p << ' ' << tree.generation(v) << ' ' << tree.child_count(v) << '\n';
    }
}

Tree read_tree(std::istream& is) {
    std::vector<VertexId> parents;
    std::vector<std::uint32_t> gens, counts;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        long long id, p;
        std::uint32_t g, c;
        if (!(ls >> id >> p >> g >> c)) throw std::invalid_argument("tree file line " + std::to_string(lineno) + ": expected 4 fields");
        if (id != static_cast<long long>(parents.size())) throw std::invalid_argument("tree file line " + std::to_string(lineno) + ": ids must be dense and ordered");
        parents.push_back(p < 0 ? kNoVertex : static_cast<VertexId>(p));
        gens.push_back(g);
        counts.push_back(c);
    }
    Tree t = Tree::from_parents(parents);
    for (VertexId v = 0; v < t.size(); ++v)
        if (t.generation(v) != gens[v] || t.child_count(v) != counts[v])
            throw std::invalid_argument("tree file: generation or child_count inconsistent at vertex " + std::to_string(v));
    return t;
}

}  // namespace treetasep
