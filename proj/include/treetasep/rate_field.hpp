#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "treetasep/gw_tree.hpp"

namespace treetasep {

enum class RateKind { Constant, ExponentialHomogeneous, Slowed, Polynomial, CustomTable };

// Which disentanglement formula applies: D_n of order log n, or growing faster.
enum class DecayClass { LogOrderDn, SuperLogOrderDn };

// Slowing factor g for the Slowed family. Exponential(b): g(s) = b^{-s};
// Power(p): g(s) = (1+s)^{-p}, shifted so that g(0) = 1.
struct DecayFunction {
    enum class Kind { Exponential, Power } kind = Kind::Exponential;
    double param = 2.0;
    double operator()(double s) const;
    bool operator==(const DecayFunction&) const = default;
};

class RateFamily {
public:
    static RateFamily constant();
    static RateFamily exponential(unsigned d);
    static RateFamily slowed(unsigned d, DecayFunction g);
    static RateFamily polynomial(double p);
    // Rates keyed by child id (each edge is identified by its lower endpoint).
    // r_sup defaults to max(1, largest rate).
    static RateFamily custom(std::unordered_map<VertexId, double> by_child, std::optional<DecayClass> decay,
                             std::optional<double> r_sup = std::nullopt);

    RateKind kind() const { return kind_; }
    unsigned d() const { return d_; }
    double p() const { return p_; }
    const DecayFunction& g() const { return g_; }
    std::optional<DecayClass> decay_class() const { return decay_; }
    double r_sup() const { return r_sup_; }
    bool symbolic() const { return kind_ != RateKind::CustomTable; }
    // Slowed rates carry the analytic subflow limit.
    bool analytic_subflow() const { return kind_ == RateKind::Slowed; }
    const std::unordered_map<VertexId, double>& table() const { return *table_; }

    // Rate of every edge leaving generation `gen`; symbolic families only.
    double generation_rate(std::uint32_t gen) const;
    // Throws std::out_of_range for an edge missing from a custom table and
    // std::invalid_argument if (parent, child) is not an edge.
    double rate(const Tree& tree, VertexId parent, VertexId child) const;
    double edge_rate(const Tree& tree, VertexId child) const;
    // r_x: sum of the out-rates of x. Materializes the children of x.
    double out_rate(const Tree& tree, VertexId x) const;

    std::string describe() const;

private:
    RateKind kind_ = RateKind::Constant;
    unsigned d_ = 0;
    double p_ = 0;
    DecayFunction g_;
    std::optional<DecayClass> decay_;
    double r_sup_ = 1.0;
    std::shared_ptr<const std::unordered_map<VertexId, double>> table_;
};

// "parent_id child_id rate" per line; '#' starts a comment line.
RateFamily read_rate_table(std::istream& is, const Tree& tree, std::optional<DecayClass> decay);
void write_rate_table(std::ostream& os, const RateFamily& family, const Tree& tree);

struct UEResult {
    bool holds = false;
    double epsilon = 1.0;
};
UEResult check_UE(const RateFamily& family, const Tree& tree, std::uint32_t depth);

struct EDResult {
    bool holds = false;
    double kappa = 0;
    double c_low = 0;
};
// Symbolic families return their closed-form witnesses; custom tables fit
// kappa = r_0^min and the smallest c_low valid on the tree up to depth.
EDResult check_ED(const RateFamily& family, std::uint32_t depth, const Tree* tree = nullptr);

struct GenerationAggregates {
    std::vector<double> r_min, r_max;    // edge rates leaving generation l
    std::vector<double> rx_min, rx_max;  // out-rates r_x over generation l
    std::vector<double> out_rate;        // r_x by vertex id; empty for analytic aggregates
    std::vector<double> rho;             // min_{i<=l} rx_max[i]

    std::uint32_t depth() const { return static_cast<std::uint32_t>(r_min.size()) - 1; }
    double R_min(std::uint32_t l, std::uint32_t m) const;
    double R_max(std::uint32_t l, std::uint32_t m) const;
};

GenerationAggregates aggregates(const RateFamily& family, const Tree& tree, std::uint32_t depth);

// Generation-indexed rate profile for the bound formulas. Symbolic families are
// evaluated in closed form for any generation, with r_x ranging over
// [d_min, d_max] times the generation rate; custom tables are tabulated up to a
// horizon and throw Unclassifiable beyond it.
class GenerationProfile {
public:
    static GenerationProfile analytic(const RateFamily& family, const OffspringLaw& law);
    static GenerationProfile tabulated(GenerationAggregates agg);

    double r_min(std::uint64_t l) const;
    double r_max(std::uint64_t l) const;
    double rx_min(std::uint64_t l) const;
    double rx_max(std::uint64_t l) const;
    double rho(std::uint64_t l) const;
    double R_min(std::uint64_t l, std::uint64_t m) const;
    double R_max(std::uint64_t l, std::uint64_t m) const;
    // sum_{i=l}^m log R^max_i
    double sum_log_R_max(std::uint64_t l, std::uint64_t m) const;
    // sum_{i=l}^m log r^max_i
    double sum_log_r_max(std::uint64_t l, std::uint64_t m) const;
    // min over l <= |x| <= m of r_x
    double min_rx(std::uint64_t l, std::uint64_t m) const;
    // Generations beyond which nothing is known (tabulated profiles only).
    std::optional<std::uint64_t> horizon() const;
    // Whether r^max_l is non-increasing in l (symbolic families).
    bool monotone() const { return !table_; }
    const std::optional<RateFamily>& family() const { return family_; }

private:
    void check(std::uint64_t l) const;
    double inv_rate_sum(std::uint64_t l, std::uint64_t m) const;  // sum of 1/generation_rate
    double log_inv_rate_sum(std::uint64_t l, std::uint64_t m) const;

    std::optional<RateFamily> family_;
    unsigned d_min_ = 1, d_max_ = 1;
    std::shared_ptr<const GenerationAggregates> table_;
};

class Unclassifiable : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class FlowClass { Flow, Superflow, Subflow, Unclassified };

struct FlowReport {
    std::map<VertexId, double> q;  // net flow for |x| < horizon
    FlowClass cls = FlowClass::Unclassified;
    double strength = 0;           // q(o) when cls == Flow
    std::uint32_t horizon = 0;
    double tolerance = 0;
};

// Default tolerance: 1e-10 for symbolic families, 1e-8 for custom tables.
double default_flow_tolerance(const RateFamily& family);
FlowReport classify_flow(const RateFamily& family, const Tree& tree, std::uint32_t horizon,
                         std::optional<double> tolerance = std::nullopt);
std::string to_string(FlowClass c);

struct FlowComponent {
    VertexId source = 0;
    double strength = 0;
    std::map<VertexId, double> edge_rate;  // keyed by child id
};

class DecompositionError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Root-first decomposition of a superflow on generations < depth into flows
// r^z of strength q(z), each vertex splitting what it must pass on in
// proportion to the residual capacities of its out-edges.
std::vector<FlowComponent> superflow_decomposition(const RateFamily& family, const Tree& tree, std::uint32_t depth);

}  // namespace treetasep
