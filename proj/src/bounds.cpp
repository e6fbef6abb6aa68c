#include "treetasep/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace treetasep {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

// log r^max_l for a symbolic family at a (possibly huge) integer generation l.
double log_generation_rate(const RateFamily& f, double l) {
    switch (f.kind()) {
        case RateKind::Constant: return 0;
        case RateKind::ExponentialHomogeneous: return -(l + 1) * std::log(double(f.d() - 1));
        case RateKind::Polynomial: return -f.p() * std::log(l + 1);
        case RateKind::Slowed: return -(l + 1) * std::log(double(f.d() - 1)) + std::log(f.g()(l));
        case RateKind::CustomTable: break;
    }
    throw std::logic_error("log_generation_rate: not symbolic");
}

// Smallest integer m >= lo with pred(m), for a monotone predicate; doubles hold the integers.
template <class Pred>
double first_true(double lo, Pred pred) {
    if (pred(lo)) return lo;
    double step = 1, hi = lo + 1;
    while (!pred(hi)) {
        lo = hi;
        step *= 2;
        hi = lo + step;
        if (hi > 0x1p62) throw std::overflow_error("search range exhausted");
    }
    while (hi - lo > 1) {
        double mid = std::floor(lo + (hi - lo) / 2);
        (pred(mid) ? hi : lo) = mid;
    }
    return hi;
}

}  // namespace

double compute_c_o(const TreeStats& stats, double p1) {
    if (stats.d_min > 1) return 1.0 / std::log(double(stats.d_min));
    if (!(p1 > 0 && p1 < 1)) throw std::invalid_argument("c_o: d_min = 1 needs p1 in (0,1)");
    if (!stats.conditioned_mean) throw std::invalid_argument("c_o: conditioned mean is undefined");
    // Natural logs in the denominator, base-2 log of m~ in the numerator.
    return (5 + std::log2(*stats.conditioned_mean)) / (std::log(1 + p1) - std::log(2 * p1));
}

double D_n_threshold(double n, double c_low, double c_o) {
    return std::exp(-(2 + c_low * c_o) * std::log(n) - 3 * std::log(std::log(n)));
}

std::optional<double> compute_D_n(const GenerationProfile& profile, double n, double c_low, double c_o) {
    if (!(n >= 2)) throw std::invalid_argument("D_n: needs n >= 2");
    const double log_thr = -(2 + c_low * c_o) * std::log(n) - 3 * std::log(std::log(n));
    if (profile.monotone()) {
        const RateFamily& f = *profile.family();
        if (f.kind() == RateKind::Constant) return std::nullopt;
        auto ok = [&](double m) { return log_generation_rate(f, m) <= log_thr; };
        double guess = 1;
        if (f.kind() == RateKind::ExponentialHomogeneous)
            guess = std::ceil(-log_thr / std::log(double(f.d() - 1)) - 1);
        else if (f.kind() == RateKind::Polynomial)
            guess = std::ceil(std::exp(-log_thr / f.p()) - 1);
        else
            return first_true(1.0, ok);
        double m = std::max(1.0, guess);
        if (m < 0x1p52) {
            while (m > 1 && ok(m - 1)) m -= 1;
            while (!ok(m)) m += 1;
        }
        return m;
    }
    std::uint64_t h = *profile.horizon();
    for (std::uint64_t l = 1; l <= h; ++l)
        if (profile.r_max(l) > profile.r_max(l - 1))
            throw Unclassifiable("D_n: tabulated rates are not monotone, so the tail beyond the horizon is unknown");
    if (std::log(profile.r_max(h)) > log_thr)
        throw Unclassifiable("D_n: rates at the tabulated horizon are still above the threshold");
    std::uint64_t m = h;
    while (m > 1 && std::log(profile.r_max(m - 1)) <= log_thr) --m;
    return double(m);
}

DisentanglementBound compute_M_n(const BoundInputs& in) {
    if (!in.decay_class) throw std::invalid_argument("M_n: decay class must be declared for this rate family");
    if (!(in.delta > 0)) throw std::invalid_argument("M_n: delta must be positive");
    DisentanglementBound b;
    b.n = in.n;
    b.D_n = in.D_n;
    b.delta = in.delta;
    b.c_o = in.c_o;
    b.epsilon = in.epsilon;
    const double log_eps_n = std::log(in.n) / std::log(1 + in.epsilon);
    if (*in.decay_class == DecayClass::LogOrderDn) {
        if (!in.D_n) throw std::invalid_argument("M_n: log-order decay class declared but D_n is unbounded");
        b.case_used = 1;
        if (in.d_min > 1)
            b.M_n = double(in.d_min) / (in.d_min - 1) * *in.D_n + (2 + in.delta) * log_eps_n;
        else
            b.M_n = (in.c_o + 1) * *in.D_n + in.c_o * (2 + in.delta) * log_eps_n;
    } else {
        b.case_used = 2;
        double coef = (in.d_min == 1 ? in.c_o : 1.0 / (in.d_min - 1)) + 1 + in.delta;
        b.M_n = coef * std::min(in.D_n.value_or(kInf), in.n);
    }
    return b;
}

// ---------------------------------------------------------------------------

BoundsModel::BoundsModel(const RateFamily& family, const OffspringLaw& law, double delta)
    : family_(family), profile_(GenerationProfile::analytic(family, law)), stats_(tree_stats(law)), p1_(law.p(1)), delta_(delta) {
    EDResult ed = check_ED(family, 64);
    kappa_ = ed.kappa;
    c_low_ = ed.c_low;
    epsilon_ = 1.0;  // all edges leaving a vertex share one rate
    c_o_ = compute_c_o(stats_, p1_);
}

BoundsModel::BoundsModel(const RateFamily& family, const Tree& tree, std::uint32_t horizon, double delta)
    : family_(family), profile_(GenerationProfile::tabulated(aggregates(family, tree, horizon))), delta_(delta) {
    EDResult ed = check_ED(family, horizon, &tree);
    kappa_ = ed.kappa;
    c_low_ = ed.c_low;
    epsilon_ = check_UE(family, tree, horizon).epsilon;
    // Offspring statistics read off the tree itself.
    std::map<unsigned, double> counts;
    double total = 0;
    for (std::uint32_t g = 0; g < horizon; ++g)
        for (VertexId v : tree.generation_vertices(g)) {
            counts[tree.child_count(v)] += 1;
            total += 1;
        }
    stats_.d_min = counts.empty() ? 1 : counts.begin()->first;
    double mean = 0, mass2 = 0, first2 = 0;
    for (auto [k, c] : counts) {
        mean += k * c / total;
        if (k >= 2) {
            mass2 += c / total;
            first2 += k * c / total;
        }
    }
    stats_.mean = mean;
    if (mass2 > 0) stats_.conditioned_mean = first2 / mass2;
    p1_ = counts.count(1) ? counts[1] / total : 0.0;
    c_o_ = compute_c_o(stats_, p1_);
}

BoundsModel BoundsModel::with_delta(double delta) const {
    BoundsModel m = *this;
    m.delta_ = delta;
    return m;
}

std::optional<double> BoundsModel::D_n(double n) const { return compute_D_n(profile_, n, c_low_, c_o_); }

DisentanglementBound BoundsModel::M_n(double n) const {
    if (n < 2) {
        DisentanglementBound b;
        b.n = n;
        b.delta = delta_;
        b.c_o = c_o_;
        b.epsilon = epsilon_;
        b.c_low = c_low_;
        return b;
    }
    BoundInputs in{n, D_n(n), stats_.d_min, c_o_, epsilon_, delta_, family_.decay_class()};
    DisentanglementBound b = compute_M_n(in);
    b.c_low = c_low_;
    return b;
}

std::uint64_t EllRule::operator()(const BoundsModel& model, double n) const {
    double M = model.M_n(n).M_n;
    double l = 0;
    switch (kind) {
        case Kind::EqualsMn: l = M; break;
        case Kind::AffineMn: l = a * M + b; break;
        case Kind::PowerN: l = std::pow(n, a); break;
    }
    return static_cast<std::uint64_t>(std::ceil(l - 1e-9 * std::max(1.0, l)));
}

std::string EllRule::describe() const {
    std::ostringstream os;
    switch (kind) {
        case Kind::EqualsMn: os << "M_n"; break;
        case Kind::AffineMn: os << a << "*M_n+" << b; break;
        case Kind::PowerN: os << "n^" << a; break;
    }
    return os.str();
}

TimeWindow compute_time_window(const BoundsModel& model, double n, std::uint64_t ell_n, const TimeWindowOptions& opts) {
    if (!(n >= 1)) throw std::invalid_argument("time window: needs n >= 1");
    const GenerationProfile& pr = model.profile();
    TimeWindow w;
    w.n = n;
    w.ell_n = ell_n;
    w.delta = model.delta();
    w.M_n = model.M_n(n).M_n;
    if (double(ell_n) < w.M_n * (1 - 1e-9)) throw std::invalid_argument("time window: l_n must be at least M_n");
    const double l = double(ell_n);

    const double R = pr.R_max(0, ell_n);
    w.t1_low = R * (1 - 2 * std::pow(R * pr.rho(ell_n), -1.0 / 3) * std::log(R));
    w.t2_low = l / 2 * std::exp(pr.sum_log_R_max(0, ell_n) / (l + 1));
    w.t_low = std::max(w.t1_low, w.t2_low);

    // Generations strictly above M_n up to l_n; an integer M_n = l_n leaves
    // that range empty, in which case generation M_n itself is used.
    const std::uint64_t M_floor = static_cast<std::uint64_t>(std::floor(w.M_n));
    const std::uint64_t M_ceil = static_cast<std::uint64_t>(std::ceil(w.M_n));
    const double Rmin = pr.R_min(M_ceil, ell_n);
    const std::uint64_t open_lo = std::min<std::uint64_t>(M_floor + 1, ell_n);
    const double theta_n_val = pr.min_rx(open_lo, ell_n) * Rmin;
    w.theta = opts.theta.value_or(theta_n_val);
    w.theta_n = opts.theta_n.value_or(1.0 / std::log(n));

    const double head = 5 * (n + w.M_n) / pr.min_rx(0, M_floor);
    const double d = w.delta;
    const double factor = std::isinf(w.theta) ? 1 + w.theta_n : 1 + d - 2 * std::log(d) / (w.theta * d);
    w.t_up = head + factor * Rmin;
    return w;
}

std::optional<std::uint64_t> time_window_threshold(const BoundsModel& model, const EllRule& rule, std::uint64_t n_max) {
    std::optional<std::uint64_t> n0;
    for (std::uint64_t n = n_max; n >= 2; --n) {
        TimeWindow w = compute_time_window(model, double(n), rule(model, double(n)));
        if (!(w.t_low < w.t_up)) break;
        n0 = n;
    }
    return n0;
}

double n_t_constraint(const BoundsModel& model, std::uint64_t n) {
    double M = model.M_n(double(n)).M_n;
    return (double(n) + M) / model.profile().min_rx(0, static_cast<std::uint64_t>(std::floor(M)));
}

std::uint64_t compute_n_t(const BoundsModel& model, double t) {
    if (!(t > 0)) throw std::invalid_argument("n_t: needs t > 0");
    auto feasible = [&](double n) { return n_t_constraint(model, static_cast<std::uint64_t>(n)) <= t; };
    // Largest feasible n = (first infeasible) - 1; n = 0 is always feasible.
    double first_bad = first_true(1.0, [&](double n) { return !feasible(n); });
    return static_cast<std::uint64_t>(first_bad) - 1;
}

GenerationWindow compute_generation_window(const BoundsModel& model, double t) {
    if (!(t > std::exp(1.0))) throw std::invalid_argument("generation window: needs t > e");
    const GenerationProfile& pr = model.profile();
    GenerationWindow w;
    w.t = t;
    w.n_t = compute_n_t(model, t);
    w.L_low = model.M_n(double(w.n_t)).M_n;

    auto l1 = [&](double l) {
        return std::log(l) - pr.sum_log_r_max(1, static_cast<std::uint64_t>(l)) / (l + 1) >= std::log(t) + 2;
    };
    auto l2 = [&](double l) { return pr.R_max(0, static_cast<std::uint64_t>(l)) >= t + std::pow(t, 2.0 / 3); };
    auto search = [&](double lo, auto pred) -> std::uint64_t {
        if (pr.monotone()) {
            double v = first_true(lo, pred);
            if (v == lo || !pred(v - 1)) return static_cast<std::uint64_t>(v);
        }
        std::uint64_t h = pr.horizon().value_or(std::uint64_t{1} << 40);
        for (std::uint64_t l = static_cast<std::uint64_t>(lo); l <= h; ++l)
            if (pred(double(l))) return l;
        throw Unclassifiable("generation window: not reached within the tabulated horizon");
    };
    w.L1_up = search(1.0, l1);
    w.L2_up = search(0.0, l2);
    w.L_up = std::min(w.L1_up, w.L2_up);
    return w;
}

RefinedGenerationWindow refined_generation_window(double c_up, double t, double delta) {
    RefinedGenerationWindow w;
    const double lt = std::log(t);
    w.L_up = static_cast<std::uint64_t>(std::ceil(lt / c_up * (1 + std::pow(lt, -1.0 / 3))));
    w.L_low = (1 - delta) / c_up * lt;
    return w;
}

PolyWindowReport regular_poly_window(unsigned d, double p, const EllRule& rule, double n, double delta) {
    BoundsModel model(RateFamily::polynomial(p), OffspringLaw::dirac(d - 1), delta);
    PolyWindowReport r;
    r.d = d;
    r.p = p;
    r.n = n;
    auto ab = [&](double nn, double& a, double& b, double& M, std::uint64_t& ell) {
        M = model.M_n(nn).M_n;
        ell = rule(model, nn);
        double L = double(ell);
        a = M / std::pow(L, p);
        b = nn * std::pow(M, p) / std::pow(L, p + 1);
    };
    ab(n, r.a, r.b, r.M_n, r.ell_n);
    if (r.a >= 1) throw std::invalid_argument("poly window: a = M_n / l_n^p must stay below 1 (got " + std::to_string(r.a) + ")");
    double a10, b10, M10;
    std::uint64_t ell10;
    ab(10 * n, a10, b10, M10, ell10);
    r.sharp = r.b < 1e-9 || b10 < r.b / 2;
    r.leading_term = (1 - r.a) * std::pow(double(r.ell_n), p + 1) / ((d - 1) * (1 + p));

    // theta(n) grows without bound here; theta_n = theta(n)^{-1/2} satisfies the growth requirement.
    TimeWindow probe = compute_time_window(model, n, r.ell_n);
    TimeWindowOptions opts;
    opts.theta = kInf;
    opts.theta_n = 1 / std::sqrt(probe.theta);
    r.direct = compute_time_window(model, n, r.ell_n, opts);
    r.direct_ratio = r.direct.t_up / r.direct.t_low;
    return r;
}

RenewalBound renewal_tail_bound(double c, std::uint32_t ell, double kappa, double c_low) {
    RenewalBound b;
    b.threshold = (1 + c) * (ell + 1) / kappa * std::exp(c_low * (ell + 1));
    b.probability = std::exp(-(c - std::log1p(c)) * ell);
    return b;
}

}  // namespace treetasep
