#include "treetasep/equilibrium.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <fmt/format.h>

#include "treetasep/rng.hpp"

namespace treetasep {

Truncation make_truncation(const Tree& tree, const RateFamily& family, std::uint32_t depth, double lambda) {
    if (!(lambda >= 0)) throw std::invalid_argument("truncation: lambda must be >= 0");
    if (tree.growable()) tree.materialize_to_depth(depth + 1);
    Truncation tr;
    tr.depth = depth;
    tr.lambda = lambda;
    std::unordered_map<VertexId, int> index;
    for (std::uint32_t g = 0; g <= depth; ++g)
        for (VertexId v : tree.generation_vertices(g)) {
            index[v] = static_cast<int>(tr.vertices.size());
            tr.vertices.push_back(v);
            tr.generation.push_back(g);
            tr.parent.push_back(g == 0 ? -1 : index.at(tree.parent(v)));
            tr.in_rate.push_back(g == 0 ? 0.0 : family.edge_rate(tree, v));
            tr.exit_rate.push_back(g == depth ? family.out_rate(tree, v) : 0.0);
        }
    return tr;
}

double StationaryDist::marginal(std::size_t site) const {
    double m = 0;
    for (std::size_t s = 0; s < p.size(); ++s)
        if (s >> site & 1u) m += p[s];
    return m;
}

namespace {

double balance_residual(const Truncation& tr, const std::vector<double>& p) {
    std::vector<double> flux(p.size(), 0.0);
    for (std::uint32_t s = 0; s < p.size(); ++s)
        for_each_transition(tr, s, [&](std::uint32_t to, double r) {
            flux[to] += r * p[s];
            flux[s] -= r * p[s];
        });
    double worst = 0;
    for (double f : flux) worst = std::max(worst, std::abs(f));
    return worst;
}

// Q^T p = 0 with the balance row of the empty state replaced by p_0 = 1; the
// chain is irreducible, so p_0 > 0 and normalizing afterwards is safe. A row of
// ones would do the same job but ruins the fill-in of the sparse factorization.
template <class Add>
void assemble(const Truncation& tr, std::size_t N, Add&& add) {
    for (std::uint32_t s = 0; s < N; ++s)
        for_each_transition(tr, s, [&](std::uint32_t to, double r) {
            if (to != 0) add(to, s, r);
            if (s != 0) add(s, s, -r);
        });
    add(0, 0, 1.0);
}

}  // namespace

StationaryDist exact_stationary(const Truncation& tr) {
    const std::size_t k = tr.sites();
    if (k > kMaxExactSites)
        throw std::length_error(fmt::format("exact_stationary: {} sites exceed the cap of {}; estimate by simulation",
                                            k, kMaxExactSites));
    const std::size_t N = std::size_t{1} << k;
    StationaryDist d;
    d.sites = k;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N));
    b(0) = 1.0;
    Eigen::VectorXd x;
    if (N <= 1024) {
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N, N);
        assemble(tr, N, [&](std::size_t i, std::size_t j, double v) { A(i, j) += v; });
        x = A.partialPivLu().solve(b);
        d.method = "dense-lu";
    } else {
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(N * (k + 2));
        assemble(tr, N, [&](std::size_t i, std::size_t j, double v) {
            trip.emplace_back(static_cast<int>(i), static_cast<int>(j), v);
        });
        Eigen::SparseMatrix<double> A(N, N);
        A.setFromTriplets(trip.begin(), trip.end());
        A.makeCompressed();
        // Factorizations fill in badly on these hypercube-shaped generators;
        // Jacobi-preconditioned BiCGSTAB converges in tens of iterations.
        Eigen::BiCGSTAB<Eigen::SparseMatrix<double>> solver;
        solver.setTolerance(1e-15);
        solver.setMaxIterations(20000);
        solver.compute(A);
        x = solver.solve(b);
        for (int restart = 0; restart < 3 && solver.info() != Eigen::Success; ++restart) x = solver.solveWithGuess(b, x);
        d.method = "bicgstab";
    }
    d.p.resize(N);
    double total = 0;
    for (std::size_t s = 0; s < N; ++s) total += d.p[s] = std::max(0.0, x(static_cast<Eigen::Index>(s)));
    for (double& v : d.p) v /= total;
    d.residual = balance_residual(tr, d.p);
    return d;
}

std::vector<UpSet> sample_upsets(std::size_t sites, std::size_t count, std::uint64_t seed) {
    if (sites == 0 || sites > 32) throw std::invalid_argument("sample_upsets: need 1..32 sites");
    Rng rng(seed);
    std::vector<UpSet> out;
    const double p = std::min(0.5, 2.0 / double(sites));
    while (out.size() < count) {
        UpSet f;
        int filters = 1 + static_cast<int>(rng.uniform() * 3);
        for (int i = 0; i < filters; ++i) {
            std::uint32_t g = 0;
            while (g == 0)
                for (std::size_t b = 0; b < sites; ++b)
                    if (rng.uniform() < p) g |= 1u << b;
            f.generators.push_back(g);
        }
        out.push_back(std::move(f));
    }
    return out;
}

double expectation(const StationaryDist& pi, const UpSet& f) {
    double e = 0;
    for (std::uint32_t s = 0; s < pi.p.size(); ++s)
        if (f.contains(s)) e += pi.p[s];
    return e;
}

double bernoulli_expectation(std::size_t sites, double rho, const UpSet& f) {
    double e = 0;
    for (std::uint32_t s = 0; s < (std::uint32_t{1} << sites); ++s)
        if (f.contains(s)) {
            int ones = std::popcount(s);
            e += std::pow(rho, ones) * std::pow(1 - rho, int(sites) - ones);
        }
    return e;
}

namespace {

template <class Lower, class Upper>
MonotoneCertificate certify(const std::vector<UpSet>& fns, double tol, Lower&& lower, Upper&& upper) {
    MonotoneCertificate c;
    for (const UpSet& f : fns) {
        double gap = lower(f) - upper(f);
        ++c.checked;
        if (gap > c.worst_gap) c.worst_gap = gap;
        if (gap > tol && c.holds) {
            c.holds = false;
            c.witness = f;
        }
    }
    return c;
}

}  // namespace

MonotoneCertificate monotone_check(const StationaryDist& pi_n, const StationaryDist& pi_n1,
                                   const std::vector<UpSet>& fns, double tol) {
    if (pi_n.sites > pi_n1.sites) throw std::invalid_argument("monotone_check: pi_n must live on fewer sites");
    // A state of pi_n is the state of pi_n1 with the extra sites empty, so the
    // expectation under pi_n is the plain sum over its own states.
    return certify(fns, tol, [&](const UpSet& f) { return expectation(pi_n, f); },
                   [&](const UpSet& f) { return expectation(pi_n1, f); });
}

MonotoneCertificate bernoulli_domination(const StationaryDist& pi, double rho, const std::vector<UpSet>& fns,
                                         double tol) {
    return certify(fns, tol, [&](const UpSet& f) { return expectation(pi, f); },
                   [&](const UpSet& f) { return bernoulli_expectation(pi.sites, rho, f); });
}

double flow_generator_identity(const Tree& tree, const RateFamily& family, const std::vector<VertexId>& A, double rho,
                               double lambda) {
    if (A.empty()) return 0.0;
    std::unordered_set<VertexId> in(A.begin(), A.end());
    double sum = 0;
    bool root = false;
    for (VertexId x : A) {
        if (x == Tree::root())
            root = true;
        else if (!in.count(tree.parent(x)))
            sum += family.edge_rate(tree, x);
        for (VertexId y : tree.growable() ? tree.ensure_children(x) : tree.children(x))
            if (!in.count(y)) sum -= family.edge_rate(tree, y);
    }
    if (root) sum += lambda / rho;
    return (1 - rho) * std::pow(rho, double(in.size())) * sum;
}

std::vector<double> density_profile(const StationaryDist& pi, const Truncation& tr) {
    std::vector<double> sum(tr.depth + 1, 0.0), count(tr.depth + 1, 0.0);
    for (std::size_t k = 0; k < tr.sites(); ++k) {
        sum[tr.generation[k]] += pi.marginal(k);
        count[tr.generation[k]] += 1;
    }
    for (std::size_t g = 0; g <= tr.depth; ++g) sum[g] /= count[g];
    return sum;
}

std::vector<double> density_profile(const EventLog& log, const Tree& tree, std::uint32_t depth, double t0, double t1) {
    if (!(t1 > t0)) throw std::invalid_argument("density_profile: need t1 > t0");
    if (tree.growable()) tree.materialize_to_depth(depth);
    std::vector<double> occupied(depth + 1, 0.0), area(depth + 1, 0.0);
    for (VertexId v : log.initial)
        if (tree.generation(v) <= depth) occupied[tree.generation(v)] += 1;
    double last = t0;
    auto flush = [&](double t) {
        double a = std::max(t0, std::min(t, t1)), b = std::max(t0, last);
        if (a > b)
            for (std::size_t g = 0; g <= depth; ++g) area[g] += occupied[g] * (a - b);
        last = std::max(last, a);
    };
    for (const Event& e : log.events) {
        if (e.time > t1) break;
        flush(e.time);
        if (e.from != kNoVertex && tree.generation(e.from) <= depth) occupied[tree.generation(e.from)] -= 1;
        if (e.to != kNoVertex && tree.generation(e.to) <= depth) occupied[tree.generation(e.to)] += 1;
    }
    flush(t1);
    for (std::uint32_t g = 0; g <= depth; ++g)
        area[g] /= (t1 - t0) * double(tree.generation_vertices(g).size());
    return area;
}

std::vector<double> density_profile(const SystemState& state, const Tree& tree, std::uint32_t depth) {
    if (tree.growable()) tree.materialize_to_depth(depth);
    std::vector<double> d(depth + 1, 0.0);
    for (std::uint32_t g = 0; g <= depth; ++g) {
        auto vs = tree.generation_vertices(g);
        for (VertexId v : vs) d[g] += state.occupied(v);
        d[g] /= double(vs.size());
    }
    return d;
}

RootCurrent root_current_rate(const EventLog& log, double T, double lambda, double q_o, double rho,
                              std::optional<double> root_empty) {
    if (!(T > 0)) throw std::invalid_argument("root_current_rate: T must be positive");
    RootCurrent r;
    std::uint64_t entries = 0;
    double busy = 0, since = 0;
    bool occ = std::find(log.initial.begin(), log.initial.end(), Tree::root()) != log.initial.end();
    for (const Event& e : log.events) {
        if (e.time > T) break;
        if (e.kind == EventKind::Entry) {
            ++entries;
            occ = true;
            since = e.time;
        } else if (e.from == Tree::root()) {
            busy += e.time - since;
            occ = false;
        }
    }
    if (occ) busy += T - since;
    r.empirical = double(entries) / T;
    r.root_empty = root_empty ? *root_empty : 1 - busy / T;
    r.bound = lambda * r.root_empty;
    r.floor = q_o * rho * (1 - rho);
    return r;
}

void write_density_csv(std::ostream& os, const std::vector<double>& density) {
    os << "generation,density\n";
    for (std::size_t g = 0; g < density.size(); ++g) os << fmt::format("{},{:.17g}\n", g, density[g]);
}

void write_marginals_csv(std::ostream& os, const StationaryDist& pi, const Truncation& tr) {
    os << "vertex,marginal\n";
    for (std::size_t k = 0; k < tr.sites(); ++k) os << fmt::format("{},{:.17g}\n", tr.vertices[k], pi.marginal(k));
}

}  // namespace treetasep
