#pragma once

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ranges>
#include <vector>

namespace treetasep {

using VertexId = std::uint32_t;
inline constexpr VertexId kNoVertex = 0xffffffffu;

enum class OffspringKind { Dirac, General };

// Offspring distribution of a leafless supercritical Galton-Watson tree.
class OffspringLaw {
public:
    // Every vertex has exactly k children (the (k+1)-regular tree below the root).
    static OffspringLaw dirac(unsigned k);
    // Throws std::invalid_argument unless the weights sum to 1, p_0 = 0 and 1 < mean < inf.
    static OffspringLaw general(const std::map<unsigned, double>& weights);

    const std::map<unsigned, double>& weights() const { return weights_; }
    OffspringKind kind() const { return kind_; }
    double p(unsigned k) const;
    double mean() const { return mean_; }
    unsigned min_offspring() const { return weights_.begin()->first; }
    unsigned max_offspring() const { return weights_.rbegin()->first; }
    // Inverse-CDF draw from a uniform u in [0,1).
    unsigned sample(double u) const;

    bool operator==(const OffspringLaw& o) const { return weights_ == o.weights_ && kind_ == o.kind_; }

private:
    OffspringLaw() = default;
    std::map<unsigned, double> weights_;
    std::vector<std::pair<unsigned, double>> cdf_;
    OffspringKind kind_ = OffspringKind::General;
    double mean_ = 0;
};

struct TreeStats {
    unsigned d_min = 0;
    double mean = 0;
    std::optional<double> conditioned_mean;  // absent when p_k = 0 for all k >= 2
};

TreeStats tree_stats(const OffspringLaw& law);

using ChildRange = std::ranges::iota_view<VertexId, VertexId>;

// Rooted tree stored in an arena of dense ids. A tree is either grown lazily
// from an offspring law (child counts are a pure function of the seed and the
// root-to-vertex child-index path) or given explicitly, in which case vertices
// without listed children are a frontier that cannot grow.
//
// Growth is logically const: materializing children never changes anything a
// reader has already observed. ensure_children takes an internal lock; all
// other accessors are lock-free for vertices the caller has already seen.
class Tree {
public:
    Tree(const OffspringLaw& law, std::uint64_t seed);
    // parents[0] must be kNoVertex; the children of every vertex must occupy a
    // contiguous increasing id range. Throws std::invalid_argument otherwise.
    static Tree from_parents(const std::vector<VertexId>& parents);

    Tree(Tree&& other) noexcept;
    Tree& operator=(Tree&& other) noexcept;
    Tree(const Tree&) = delete;
    Tree& operator=(const Tree&) = delete;
    ~Tree();

    Tree clone() const;

    static constexpr VertexId root() { return 0; }
    std::size_t size() const { return size_.load(std::memory_order_acquire); }
    bool growable() const { return law_.has_value(); }
    const std::optional<OffspringLaw>& law() const { return law_; }
    std::uint64_t seed() const { return seed_; }

    VertexId parent(VertexId v) const { return at(v).parent; }
    std::uint32_t generation(VertexId v) const { return at(v).generation; }
    std::uint32_t child_index(VertexId v) const { return at(v).child_index; }
    std::uint64_t path_key(VertexId v) const { return at(v).key; }
    bool materialized(VertexId v) const;
    // Children already materialized; empty for frontier vertices.
    ChildRange children(VertexId v) const;
    std::uint32_t child_count(VertexId v) const { return static_cast<std::uint32_t>(children(v).size()); }
    // Idempotent. Throws std::logic_error on a frontier vertex of an explicit tree.
    ChildRange ensure_children(VertexId v) const;

    void materialize_to_depth(std::uint32_t depth) const;
    // Materialized vertices of generation g, in id order.
    std::vector<VertexId> generation_vertices(std::uint32_t g) const;
    std::vector<VertexId> frontier() const;
    std::uint32_t max_generation() const;
    // Whether vertex a lies on the path from the root to v (inclusive).
    bool is_ancestor(VertexId a, VertexId v) const;

private:
    struct Vertex {
        VertexId parent = kNoVertex;
        std::uint32_t generation = 0;
        std::uint32_t child_index = 0;
        std::uint32_t child_count = 0;
        std::uint64_t key = 0;
        std::atomic<VertexId> first_child{kNoVertex};  // published last
    };
    static constexpr unsigned kChunkBits = 12;
    static constexpr std::size_t kChunkSize = std::size_t{1} << kChunkBits;
    static constexpr std::size_t kMaxChunks = std::size_t{1} << 18;

    Tree() = default;
    const Vertex& at(VertexId v) const { return chunks_[v >> kChunkBits][v & (kChunkSize - 1)]; }
    Vertex& at_mut(VertexId v) const { return chunks_[v >> kChunkBits][v & (kChunkSize - 1)]; }
    VertexId allocate(std::uint32_t count) const;
    void init_storage();

    std::optional<OffspringLaw> law_;
    std::uint64_t seed_ = 0;
    mutable std::vector<std::unique_ptr<Vertex[]>> chunks_;
    mutable std::atomic<std::size_t> size_{0};
    mutable std::unique_ptr<std::mutex> grow_mutex_;
};

// F(o,x): vertices z on [o,x) whose degree (children plus parent edge) is at least 3.
std::uint32_t branching_count(const Tree& tree, VertexId x);

// Collapse every maximal chain of single-child non-root vertices below the root,
// looking at generations <= depth. Vertices at generation depth and frontier
// vertices are kept as leaves. If `origin` is given it receives, for each output
// vertex, the input vertex it came from.
Tree core(const Tree& tree, std::uint32_t depth, std::vector<VertexId>* origin = nullptr);

// Inverse of core: put a Geometric(1 - p1) number (on {0,1,...}) of single-child
// vertices in front of the root and inside every edge of `skeleton`.
Tree expand_core(const Tree& skeleton, double p1, std::uint64_t seed);

// Line format: "# tree v1" header, then "id parent_id generation child_count"
// per vertex with parent_id -1 for the root. Frontier vertices report 0 children.
void write_tree(std::ostream& os, const Tree& tree);
Tree read_tree(std::istream& is);

}  // namespace treetasep
