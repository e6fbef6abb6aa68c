#include "treetasep/rate_field.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace treetasep {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
// Any positive c_low witnesses (ED) for constant rates; this is the value reported.
constexpr double kConstantCLow = 1e-6;
}  // namespace

double DecayFunction::operator()(double s) const {
    return kind == Kind::Exponential ? std::pow(param, -s) : std::pow(1.0 + s, -param);
}

RateFamily RateFamily::constant() {
    RateFamily f;
    f.kind_ = RateKind::Constant;
    f.decay_ = DecayClass::SuperLogOrderDn;
    return f;
}

RateFamily RateFamily::exponential(unsigned d) {
    if (d < 3) throw std::invalid_argument("exponential rates: need d >= 3");
    RateFamily f;
    f.kind_ = RateKind::ExponentialHomogeneous;
    f.d_ = d;
    f.decay_ = DecayClass::LogOrderDn;
    return f;
}

RateFamily RateFamily::slowed(unsigned d, DecayFunction g) {
    if (d < 3) throw std::invalid_argument("slowed rates: need d >= 3");
    if (g.kind == DecayFunction::Kind::Exponential && !(g.param > 1))
        throw std::invalid_argument("slowed rates: exponential g needs base > 1 so that g -> 0");
    if (g.kind == DecayFunction::Kind::Power && !(g.param > 0))
        throw std::invalid_argument("slowed rates: power g needs exponent > 0 so that g -> 0");
    RateFamily f;
    f.kind_ = RateKind::Slowed;
    f.d_ = d;
    f.g_ = g;
    f.decay_ = DecayClass::LogOrderDn;
    return f;
}

RateFamily RateFamily::polynomial(double p) {
    if (!(p > 0)) throw std::invalid_argument("polynomial rates: need p > 0");
    RateFamily f;
    f.kind_ = RateKind::Polynomial;
    f.p_ = p;
    f.decay_ = DecayClass::SuperLogOrderDn;
    return f;
}

RateFamily RateFamily::custom(std::unordered_map<VertexId, double> by_child, std::optional<DecayClass> decay,
                              std::optional<double> r_sup) {
    double top = 1.0;
    for (auto [c, r] : by_child) {
        if (!(r > 0) || !std::isfinite(r)) throw std::invalid_argument("rate table: rates must be positive and finite");
        top = std::max(top, r);
    }
    RateFamily f;
    f.kind_ = RateKind::CustomTable;
    f.decay_ = decay;
    f.r_sup_ = r_sup.value_or(top);
    if (f.r_sup_ < top) throw std::invalid_argument("rate table: a rate exceeds r_sup");
    f.table_ = std::make_shared<const std::unordered_map<VertexId, double>>(std::move(by_child));
    return f;
}

double RateFamily::generation_rate(std::uint32_t gen) const {
    double l = gen;
    switch (kind_) {
        case RateKind::Constant: return 1.0;
        case RateKind::ExponentialHomogeneous: return std::pow(double(d_ - 1), -l - 1);
        case RateKind::Slowed: return std::pow(double(d_ - 1), -l - 1) * g_(l);
        case RateKind::Polynomial: return std::pow(l + 1, -p_);
        case RateKind::CustomTable: break;
    }
    throw std::logic_error("generation_rate: custom tables are not generation-homogeneous");
}

double RateFamily::edge_rate(const Tree& tree, VertexId child) const {
    if (kind_ != RateKind::CustomTable) return generation_rate(tree.generation(child) - 1);
    auto it = table_->find(child);
    if (it == table_->end())
        throw std::out_of_range("rate table: no rate for edge (" + std::to_string(tree.parent(child)) + ", " +
                                std::to_string(child) + ")");
    return it->second;
}

double RateFamily::rate(const Tree& tree, VertexId parent, VertexId child) const {
    if (child >= tree.size() || tree.parent(child) != parent)
        throw std::invalid_argument("rate: (" + std::to_string(parent) + ", " + std::to_string(child) + ") is not an edge");
    return edge_rate(tree, child);
}

double RateFamily::out_rate(const Tree& tree, VertexId x) const {
    auto ch = tree.growable() ? tree.ensure_children(x) : tree.children(x);
    if (kind_ != RateKind::CustomTable) return ch.size() * generation_rate(tree.generation(x));
    double s = 0;
    for (VertexId c : ch) s += edge_rate(tree, c);
    return s;
}

std::string RateFamily::describe() const {
    std::ostringstream os;
    switch (kind_) {
        case RateKind::Constant: os << "constant"; break;
        case RateKind::ExponentialHomogeneous: os << "exponential(d=" << d_ << ")"; break;
        case RateKind::Slowed:
            os << "slowed(d=" << d_ << ", g=" << (g_.kind == DecayFunction::Kind::Exponential ? "exp" : "power") << ":"
               << g_.param << ")";
            break;
        case RateKind::Polynomial: os << "polynomial(p=" << p_ << ")"; break;
        case RateKind::CustomTable: os << "table(" << table_->size() << " edges)"; break;
    }
    return os.str();
}

RateFamily read_rate_table(std::istream& is, const Tree& tree, std::optional<DecayClass> decay) {
    std::unordered_map<VertexId, double> by_child;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        long long p, c;
        double r;
        if (!(ls >> p >> c >> r)) throw std::invalid_argument("rate table line " + std::to_string(lineno) + ": expected 'parent_id child_id rate'");
        if (c <= 0 || static_cast<std::size_t>(c) >= tree.size() || static_cast<long long>(tree.parent(static_cast<VertexId>(c))) != p)
            throw std::invalid_argument("rate table line " + std::to_string(lineno) + ": not an edge of the tree");
        by_child[static_cast<VertexId>(c)] = r;
    }
    return RateFamily::custom(std::move(by_child), decay);
}

void write_rate_table(std::ostream& os, const RateFamily& family, const Tree& tree) {
    os << "# rates v1: parent_id child_id rate\n";
    os.precision(17);
    for (VertexId c = 1; c < tree.size(); ++c) {
        if (family.kind() == RateKind::CustomTable && !family.table().count(c)) continue;
        os << tree.parent(c) << ' ' << c << ' ' << family.edge_rate(tree, c) << '\n';
    }
}

// ---------------------------------------------------------------------------

namespace {

template <class F>
void for_each_vertex_below(const Tree& tree, std::uint32_t depth, F&& f) {
    std::vector<VertexId> level{Tree::root()};
    for (std::uint32_t g = 0; g < depth && !level.empty(); ++g) {
        std::vector<VertexId> next;
        for (VertexId v : level) {
            auto ch = tree.growable() ? tree.ensure_children(v) : tree.children(v);
            f(v, g);
            next.insert(next.end(), ch.begin(), ch.end());
        }
        level.swap(next);
    }
}

}  // namespace

UEResult check_UE(const RateFamily& family, const Tree& tree, std::uint32_t depth) {
    UEResult res{true, 1.0};
    for_each_vertex_below(tree, depth, [&](VertexId v, std::uint32_t) {
        double lo = kInf, hi = 0;
        for (VertexId c : tree.children(v)) {
            double r = family.edge_rate(tree, c);
            lo = std::min(lo, r);
            hi = std::max(hi, r);
        }
        if (hi > 0) res.epsilon = std::min(res.epsilon, lo / hi);
    });
    res.holds = res.epsilon > 0;
    return res;
}

EDResult check_ED(const RateFamily& family, std::uint32_t depth, const Tree* tree) {
    EDResult res;
    std::vector<double> rmin;
    if (family.symbolic()) {
        for (std::uint32_t l = 0; l <= depth; ++l) rmin.push_back(family.generation_rate(l));
    } else {
        if (!tree) throw std::invalid_argument("check_ED: custom tables need the tree");
        GenerationAggregates agg = aggregates(family, *tree, depth);
        rmin = agg.r_min;
    }
    switch (family.kind()) {
        case RateKind::Constant: res.kappa = 1; res.c_low = kConstantCLow; break;
        case RateKind::ExponentialHomogeneous:
            res.kappa = 1.0 / (family.d() - 1);
            res.c_low = std::log(double(family.d() - 1));
            break;
        case RateKind::Polynomial:
            res.kappa = 1;
            res.c_low = family.p() * std::log(2.0);
            break;
        case RateKind::Slowed: {
            res.kappa = 1.0 / (family.d() - 1);
            const DecayFunction& g = family.g();
            res.c_low = std::log(double(family.d() - 1)) +
                        (g.kind == DecayFunction::Kind::Exponential ? std::log(g.param) : g.param * std::log(2.0));
            break;
        }
        case RateKind::CustomTable: {
            res.kappa = rmin[0];
            res.c_low = kConstantCLow;
            for (std::uint32_t l = 1; l < rmin.size(); ++l)
                res.c_low = std::max(res.c_low, (std::log(res.kappa) - std::log(rmin[l])) / l);
            break;
        }
    }
    res.holds = true;
    for (std::uint32_t l = 0; l < rmin.size(); ++l)
        if (rmin[l] < res.kappa * std::exp(-res.c_low * l) * (1 - 1e-12)) res.holds = false;
    return res;
}

// ---------------------------------------------------------------------------

double GenerationAggregates::R_min(std::uint32_t l, std::uint32_t m) const {
    double s = 0;
    for (std::uint32_t i = l; i <= m; ++i) s += 1.0 / rx_min.at(i);
    return s;
}

double GenerationAggregates::R_max(std::uint32_t l, std::uint32_t m) const {
    double s = 0;
    for (std::uint32_t i = l; i <= m; ++i) s += 1.0 / rx_max.at(i);
    return s;
}

GenerationAggregates aggregates(const RateFamily& family, const Tree& tree, std::uint32_t depth) {
    tree.materialize_to_depth(depth + 1);
    GenerationAggregates a;
    a.r_min.assign(depth + 1, kInf);
    a.r_max.assign(depth + 1, 0);
    a.rx_min.assign(depth + 1, kInf);
    a.rx_max.assign(depth + 1, 0);
    a.out_rate.assign(tree.size(), 0);
    for_each_vertex_below(tree, depth + 1, [&](VertexId v, std::uint32_t g) {
        double rx = 0;
        for (VertexId c : tree.children(v)) {
            double r = family.edge_rate(tree, c);
            a.r_min[g] = std::min(a.r_min[g], r);
            a.r_max[g] = std::max(a.r_max[g], r);
            rx += r;
        }
        a.out_rate[v] = rx;
        a.rx_min[g] = std::min(a.rx_min[g], rx);
        a.rx_max[g] = std::max(a.rx_max[g], rx);
    });
    a.rho.resize(depth + 1);
    for (std::uint32_t l = 0; l <= depth; ++l) a.rho[l] = l == 0 ? a.rx_max[0] : std::min(a.rho[l - 1], a.rx_max[l]);
    return a;
}

// ---------------------------------------------------------------------------

GenerationProfile GenerationProfile::analytic(const RateFamily& family, const OffspringLaw& law) {
    if (!family.symbolic()) throw std::invalid_argument("analytic profile: custom tables must be tabulated");
    GenerationProfile p;
    p.family_ = family;
    p.d_min_ = law.min_offspring();
    p.d_max_ = law.max_offspring();
    return p;
}

GenerationProfile GenerationProfile::tabulated(GenerationAggregates agg) {
    GenerationProfile p;
    p.table_ = std::make_shared<const GenerationAggregates>(std::move(agg));
    return p;
}

std::optional<std::uint64_t> GenerationProfile::horizon() const {
    if (table_) return table_->depth();
    return std::nullopt;
}

void GenerationProfile::check(std::uint64_t l) const {
    if (table_ && l > table_->depth())
        throw Unclassifiable("rate profile: generation " + std::to_string(l) + " is beyond the tabulated horizon " +
                             std::to_string(table_->depth()));
}

double GenerationProfile::r_min(std::uint64_t l) const {
    check(l);
    return table_ ? table_->r_min[l] : family_->generation_rate(static_cast<std::uint32_t>(l));
}
double GenerationProfile::r_max(std::uint64_t l) const {
    check(l);
    return table_ ? table_->r_max[l] : family_->generation_rate(static_cast<std::uint32_t>(l));
}
double GenerationProfile::rx_min(std::uint64_t l) const {
    check(l);
    return table_ ? table_->rx_min[l] : d_min_ * family_->generation_rate(static_cast<std::uint32_t>(l));
}
double GenerationProfile::rx_max(std::uint64_t l) const {
    check(l);
    return table_ ? table_->rx_max[l] : d_max_ * family_->generation_rate(static_cast<std::uint32_t>(l));
}

double GenerationProfile::rho(std::uint64_t l) const {
    if (table_) {
        check(l);
        return table_->rho[l];
    }
    // Symbolic generation rates are non-increasing.
    return rx_max(l);
}

double GenerationProfile::min_rx(std::uint64_t l, std::uint64_t m) const {
    if (table_) {
        double v = kInf;
        for (std::uint64_t i = l; i <= m; ++i) v = std::min(v, rx_min(i));
        return v;
    }
    return rx_min(m);
}

namespace {

// sum_{j=a}^{b} j^p, exact below a cut and by Euler-Maclaurin above it.
double power_sum(double p, std::uint64_t a, std::uint64_t b) {
    constexpr std::uint64_t kCut = 4096;
    long double s = 0;
    std::uint64_t j = a;
    for (; j <= b && (j < kCut || b - a < 1'000'000); ++j) s += std::pow(static_cast<long double>(j), p);
    if (j > b) return static_cast<double>(s);
    long double x0 = j, x1 = b;
    auto f = [&](long double x) { return std::pow(x, static_cast<long double>(p)); };
    auto f1 = [&](long double x) { return p * std::pow(x, static_cast<long double>(p - 1)); };
    auto f3 = [&](long double x) { return p * (p - 1) * (p - 2) * std::pow(x, static_cast<long double>(p - 3)); };
    long double integral = (std::pow(x1, static_cast<long double>(p + 1)) - std::pow(x0, static_cast<long double>(p + 1))) / (p + 1);
    s += integral + (f(x0) + f(x1)) / 2 + (f1(x1) - f1(x0)) / 12 - (f3(x1) - f3(x0)) / 720;
    return static_cast<double>(s);
}

// sum_{i=l}^{m} q^i for q >= 1, evaluated as q^l (q^{m-l+1} - 1)/(q - 1).
double geometric_sum(double q, std::uint64_t l, std::uint64_t m) {
    double n = double(m - l + 1);
    if (q == 1.0) return n;
    return std::pow(q, double(l)) * std::expm1(n * std::log(q)) / (q - 1);
}

}  // namespace

double GenerationProfile::inv_rate_sum(std::uint64_t l, std::uint64_t m) const {
    const RateFamily& f = *family_;
    switch (f.kind()) {
        case RateKind::Constant: return double(m - l + 1);
        case RateKind::ExponentialHomogeneous: {
            double q = f.d() - 1;
            return q * geometric_sum(q, l, m);
        }
        case RateKind::Polynomial: return power_sum(f.p(), l + 1, m + 1);
        case RateKind::Slowed:
            if (f.g().kind == DecayFunction::Kind::Exponential) {
                double q = (f.d() - 1) * f.g().param;
                return (f.d() - 1) * geometric_sum(q, l, m);
            }
            break;
        case RateKind::CustomTable: break;
    }
    long double s = 0;
    for (std::uint64_t i = l; i <= m; ++i) s += 1.0L / f.generation_rate(static_cast<std::uint32_t>(i));
    return static_cast<double>(s);
}

double GenerationProfile::log_inv_rate_sum(std::uint64_t l, std::uint64_t m) const {
    const RateFamily& f = *family_;
    double n = double(m - l + 1);
    auto arith = [&](double a, double b) { return n * a + b * (double(l) + double(m)) * n / 2; };  // sum a + b i
    switch (f.kind()) {
        case RateKind::Constant: return 0;
        case RateKind::ExponentialHomogeneous: {
            double lq = std::log(double(f.d() - 1));
            return arith(lq, lq);
        }
        case RateKind::Polynomial: return f.p() * (std::lgamma(double(m) + 2) - std::lgamma(double(l) + 1));
        case RateKind::Slowed: {
            double lq = std::log(double(f.d() - 1));
            if (f.g().kind == DecayFunction::Kind::Exponential) return arith(lq, lq + std::log(f.g().param));
            return arith(lq, lq) + f.g().param * (std::lgamma(double(m) + 2) - std::lgamma(double(l) + 1));
        }
        case RateKind::CustomTable: break;
    }
    throw std::logic_error("log_inv_rate_sum: not symbolic");
}

double GenerationProfile::R_min(std::uint64_t l, std::uint64_t m) const {
    if (table_) {
        check(m);
        return table_->R_min(static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(m));
    }
    return inv_rate_sum(l, m) / d_min_;
}

double GenerationProfile::R_max(std::uint64_t l, std::uint64_t m) const {
    if (table_) {
        check(m);
        return table_->R_max(static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(m));
    }
    return inv_rate_sum(l, m) / d_max_;
}

double GenerationProfile::sum_log_R_max(std::uint64_t l, std::uint64_t m) const {
    if (table_) {
        check(m);
        double s = 0;
        for (std::uint64_t i = l; i <= m; ++i) s -= std::log(table_->rx_max[i]);
        return s;
    }
    return log_inv_rate_sum(l, m) - double(m - l + 1) * std::log(double(d_max_));
}

double GenerationProfile::sum_log_r_max(std::uint64_t l, std::uint64_t m) const {
    if (m < l) return 0;
    if (table_) {
        check(m);
        double s = 0;
        for (std::uint64_t i = l; i <= m; ++i) s += std::log(table_->r_max[i]);
        return s;
    }
    return -log_inv_rate_sum(l, m);
}

// ---------------------------------------------------------------------------

double default_flow_tolerance(const RateFamily& family) { return family.symbolic() ? 1e-10 : 1e-8; }

std::string to_string(FlowClass c) {
    switch (c) {
        case FlowClass::Flow: return "Flow";
        case FlowClass::Superflow: return "Superflow";
        case FlowClass::Subflow: return "Subflow";
        case FlowClass::Unclassified: return "Unclassified";
    }
    return "?";
}

FlowReport classify_flow(const RateFamily& family, const Tree& tree, std::uint32_t horizon, std::optional<double> tolerance) {
    FlowReport rep;
    rep.horizon = horizon;
    rep.tolerance = tolerance.value_or(default_flow_tolerance(family));
    bool flow = true, superflow = true;
    std::vector<double> generation_out(horizon, 0.0);
    for_each_vertex_below(tree, horizon, [&](VertexId v, std::uint32_t g) {
        double rx = family.out_rate(tree, v);
        generation_out[g] += rx;
        double q = v == Tree::root() ? rx : rx - family.edge_rate(tree, v);
        rep.q[v] = q;
        if (v == Tree::root()) return;
        if (std::abs(q) > rep.tolerance) flow = false;
        if (q < -rep.tolerance) superflow = false;
    });
    bool decreasing = horizon >= 2;
    for (std::uint32_t g = 1; g < horizon; ++g)
        if (!(generation_out[g] < generation_out[g - 1])) decreasing = false;
    bool vanishing = decreasing && generation_out.back() < rep.tolerance;
    if (flow) {
        rep.cls = FlowClass::Flow;
        rep.strength = rep.q[Tree::root()];
    } else if (superflow) {
        rep.cls = FlowClass::Superflow;
    } else if (family.analytic_subflow() || vanishing) {
        rep.cls = FlowClass::Subflow;
    }
    return rep;
}

std::vector<FlowComponent> superflow_decomposition(const RateFamily& family, const Tree& tree, std::uint32_t depth) {
    const double tol = default_flow_tolerance(family);
    std::unordered_map<VertexId, double> residual;
    std::vector<VertexId> order;  // breadth-first, generations < depth
    for_each_vertex_below(tree, depth, [&](VertexId v, std::uint32_t) {
        order.push_back(v);
        for (VertexId c : tree.children(v)) residual[c] = family.edge_rate(tree, c);
    });

    std::vector<FlowComponent> out;
    for (VertexId z : order) {
        double rz = family.out_rate(tree, z);
        double q = z == Tree::root() ? rz : rz - family.edge_rate(tree, z);
        if (q < -tol)
            throw DecompositionError("superflow decomposition: negative net flow " + std::to_string(q) + " at vertex " +
                                     std::to_string(z));
        if (q <= tol) continue;
        FlowComponent comp{z, q, {}};
        std::vector<std::pair<VertexId, double>> stack{{z, q}};
        while (!stack.empty()) {
            auto [x, amount] = stack.back();
            stack.pop_back();
            double cap = 0;
            for (VertexId c : tree.children(x)) cap += residual[c];
            if (amount > cap + tol)
                throw DecompositionError("superflow decomposition: residual capacity below vertex " + std::to_string(x) +
                                         " would go negative (needs " + std::to_string(amount) + ", has " +
                                         std::to_string(cap) + ")");
            if (cap <= 0) continue;
            for (VertexId c : tree.children(x)) {
                double share = amount * residual[c] / cap;
                residual[c] = std::max(0.0, residual[c] - share);
                comp.edge_rate[c] += share;
                if (tree.generation(c) < depth) stack.emplace_back(c, share);
            }
        }
        out.push_back(std::move(comp));
    }
    return out;
}

}  // namespace treetasep
