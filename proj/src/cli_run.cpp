#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "treetasep/bounds.hpp"
#include "treetasep/cli.hpp"
#include "treetasep/couplings.hpp"
#include "treetasep/equilibrium.hpp"
#include "treetasep/lpp.hpp"
#include "treetasep/rng.hpp"

namespace treetasep {

using Json = nlohmann::ordered_json;

void parallel_for(std::uint64_t count, const std::function<void(std::uint64_t)>& f, unsigned threads) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, count));
    if (threads <= 1) {
        for (std::uint64_t i = 0; i < count; ++i) f(i);
        return;
    }
    std::atomic<std::uint64_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (std::uint64_t i; (i = next++) < count;) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!error) error = std::current_exception();
                    next = count;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

void write_svg_chart(std::ostream& os, const std::string& title, const std::string& xlabel, const std::string& ylabel,
                     const std::vector<SvgSeries>& series, const std::vector<std::string>& header) {
    const double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!(x1 > x0)) x0 = x0 - 1, x1 = x0 + 2;
    if (!(y1 > y0)) y0 = y0 - 1, y1 = y0 + 2;
    y0 = std::min(y0, 0.0);
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!--\n";
    for (const auto& h : header) os << h << '\n';
    os << "-->\n";
    os << fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n", W, H);
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << fmt::format("<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n", W / 2, title);
    os << fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", L, H - B, W - R);
    os << fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", L, H - B, T);
    for (int k = 0; k <= 4; ++k) {
        double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
        os << fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{:.4g}</text>\n", px(xv),
                          H - B + 16, xv);
        os << fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\" font-size=\"11\">{:.4g}</text>\n", L - 6,
                          py(yv) + 4, yv);
    }
    os << fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n", (L + W - R) / 2,
                      H - 12, xlabel);
    os << fmt::format(
        "<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 {0})\">{1}</text>\n",
        (T + H - B) / 2, ylabel);
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
    for (std::size_t s = 0; s < series.size(); ++s) {
        os << fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"", colors[s % 5]);
        for (std::size_t i = 0; i < series[s].x.size(); ++i)
            if (std::isfinite(series[s].x[i]) && std::isfinite(series[s].y[i]))
                os << fmt::format("{:.2f},{:.2f} ", px(series[s].x[i]), py(series[s].y[i]));
        os << "\"/>\n";
        os << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{}\">{}</text>\n", W - R - 150,
                          T + 14 * (s + 1), colors[s % 5], series[s].label);
    }
    os << "</svg>\n";
}

namespace {

Json opt(std::optional<double> v) { return v ? Json(*v) : Json(nullptr); }

// All files of one run. Replica outputs are produced in memory and written
// here in replica order, so the bytes never depend on thread scheduling.
class Output {
public:
    explicit Output(const ExperimentConfig& cfg) : cfg_(cfg), dir_(cfg.out), hash_(config_hash(cfg)) {
        std::filesystem::create_directories(dir_);
    }

    std::vector<std::string> header(std::optional<std::uint64_t> replica, const std::string& prefix) const {
        std::vector<std::string> h;
        std::string first = fmt::format("{}treetasep seed={} config_hash={}", prefix, cfg_.seed, hash_);
        if (replica) first += fmt::format(" replica={} replica_seed={}", *replica, derive_seed(cfg_.seed, *replica));
        h.push_back(first);
        for (const auto& line : config_echo(cfg_)) h.push_back(prefix + line);
        return h;
    }

    void text(const std::string& name, const std::function<void(std::ostream&)>& body,
              std::optional<std::uint64_t> replica = std::nullopt) {
        std::ofstream os(dir_ / name, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + (dir_ / name).string());
        for (const auto& line : header(replica, "# ")) os << line << '\n';
        body(os);
        files_.push_back(name);
    }

    void csv(const std::string& name, const std::function<void(std::ostream&)>& body,
             std::optional<std::uint64_t> replica = std::nullopt) {
        if (cfg_.wants("csv")) text(name, body, replica);
    }

    void json(const std::string& name, Json report) {
        if (!cfg_.wants("json")) return;
        Json doc;
        Json meta;
        meta["seed"] = cfg_.seed;
        meta["config_hash"] = hash_;
        Json c;
        for (const auto& line : config_echo(cfg_)) {
            auto eq = line.find(" = ");
            c[line.substr(0, eq)] = line.substr(eq + 3);
        }
        meta["config"] = c;
        doc["treetasep"] = meta;
        for (auto& [k, v] : report.items()) doc[k] = v;
        std::ofstream os(dir_ / name, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + (dir_ / name).string());
        os << doc.dump(2) << '\n';
        files_.push_back(name);
    }

    void svg(const std::string& name, const std::string& title, const std::string& xl, const std::string& yl,
             const std::vector<SvgSeries>& series) {
        if (!cfg_.wants("svg")) return;
        std::ofstream os(dir_ / name, std::ios::binary);
        write_svg_chart(os, title, xl, yl, series, header(std::nullopt, ""));
        files_.push_back(name);
    }

    std::vector<std::string> files() const { return files_; }

private:
    const ExperimentConfig& cfg_;
    std::filesystem::path dir_;
    std::string hash_;
    std::vector<std::string> files_;
};

struct Context {
    const ExperimentConfig& cfg;
    OffspringLaw law;
    std::shared_ptr<Tree> tree;  // the quenched tree for single-tree subcommands
    RateFamily family;
    Output out;
};

std::shared_ptr<Tree> make_tree(const ExperimentConfig& cfg, const OffspringLaw& law) {
    return std::make_shared<Tree>(law, cfg.tree_seed);
}

BoundsModel make_model(const Context& ctx) {
    if (ctx.family.symbolic()) return BoundsModel(ctx.family, ctx.law, ctx.cfg.delta);
    return BoundsModel(ctx.family, *ctx.tree, std::max<std::uint32_t>(ctx.cfg.depth, 1), ctx.cfg.delta);
}

// Each replica grows its own copy of the tree: ids follow materialization
// order, so a shared lazily grown tree would make logs depend on scheduling.
struct Replica {
    std::shared_ptr<Tree> tree;
    RateFamily family;
};
Replica replica_tree(const Context& ctx) {
    auto tree = make_tree(ctx.cfg, ctx.law);
    return {tree, make_family(ctx.cfg, *tree)};
}

SimConfig sim_config(const Context& ctx, const RateFamily& family, std::uint64_t k) {
    SimConfig sc;
    sc.law = ctx.law;
    sc.tree_seed = ctx.cfg.tree_seed;
    sc.family = family;
    sc.lambda = ctx.cfg.lambda;
    sc.stop = ctx.cfg.stop;
    sc.seed = derive_seed(ctx.cfg.seed, k);
    sc.clock = ctx.cfg.clock;
    return sc;
}

std::uint32_t capped_depth(const Tree& tree, std::uint32_t want) {
    std::uint32_t g = 0;
    while (g < want) {
        tree.materialize_to_depth(g + 1);
        if (tree.generation_vertices(g + 1).size() > 65536) break;
        ++g;
    }
    return g;
}

std::string yes(bool b) { return b ? "PASS" : "FAIL"; }

ExperimentOutcome simulate(Context& ctx) {
    const auto& cfg = ctx.cfg;
    struct R {
        RunResult run;
        std::vector<double> grid, current, density;
    };
    std::vector<R> res(cfg.replicas);
    parallel_for(cfg.replicas, [&](std::uint64_t k) {
        Replica rep = replica_tree(ctx);
        R& r = res[k];
        r.run = run(sim_config(ctx, rep.family, k), rep.tree);
        LogIndex idx(r.run.log);
        double end = r.run.log.end_time;
        for (int i = 0; i <= 100; ++i) {
            double t = end * i / 100.0;
            r.grid.push_back(t);
            r.current.push_back(double(idx.current_vertex(Tree::root(), t)));
        }
        if (end > 0) {
            std::uint32_t depth = capped_depth(*r.run.tree, std::min<std::uint32_t>(idx.deepest(), 20));
            r.density = density_profile(r.run.log, *r.run.tree, depth, 0, end);
        }
    });
    ExperimentOutcome o;
    Json reps = Json::array();
    for (std::uint64_t k = 0; k < cfg.replicas; ++k) {
        const R& r = res[k];
        ctx.out.csv(fmt::format("events_r{}.log", k), [&](std::ostream& os) { write_event_log(os, r.run.log); }, k);
        ctx.out.csv(fmt::format("current_r{}.csv", k), [&](std::ostream& os) { write_series_csv(os, r.grid, r.current); }, k);
        ctx.out.csv(fmt::format("density_r{}.csv", k), [&](std::ostream& os) { write_density_csv(os, r.density); }, k);
        Json j;
        j["replica"] = k;
        j["seed"] = derive_seed(cfg.seed, k);
        j["entered"] = r.run.entered;
        j["events"] = r.run.log.events.size();
        j["end_time"] = r.run.log.end_time;
        j["max_generation"] = max_generation(r.run.log, r.run.log.end_time).generation;
        j["truncated"] = r.run.truncated;
        reps.push_back(j);
        if (r.run.truncated) o.ok = false;
    }
    std::vector<double> gens(res[0].density.size());
    for (std::size_t g = 0; g < gens.size(); ++g) gens[g] = double(g);
    ctx.out.svg("current.svg", "root current", "t", "J_o(t)", {{"replica 0", res[0].grid, res[0].current}});
    ctx.out.svg("density.svg", "time-averaged density", "generation", "density", {{"replica 0", gens, res[0].density}});
    Json rep;
    rep["family"] = ctx.family.describe();
    rep["replicas"] = reps;
    rep["all_reached_stop_rule"] = o.ok;
    ctx.out.json("simulate.json", rep);
    o.summary = fmt::format("simulate: {} replica(s), stop rule reached in all: {}", cfg.replicas, o.ok ? "yes" : "no");
    return o;
}

ExperimentOutcome disentangle(Context& ctx) {
    const auto& cfg = ctx.cfg;
    BoundsModel model = make_model(ctx);
    DisentanglementBound b = model.M_n(double(cfg.n));
    if (!(b.M_n < 1e5)) throw std::runtime_error(fmt::format("disentangle: M_n = {} is too deep to simulate", b.M_n));
    std::uint32_t stop_at = static_cast<std::uint32_t>(std::floor(b.M_n)) + 1;
    std::vector<std::optional<std::uint32_t>> gen(cfg.replicas);
    parallel_for(cfg.replicas, [&](std::uint64_t k) {
        Replica rep = replica_tree(ctx);
        SimConfig sc = sim_config(ctx, rep.family, k);
        sc.max_particles = cfg.n;  // later particles never touch the first n
        sc.stop = StopRule::past(cfg.n, stop_at);
        RunResult r = run(sc, rep.tree);
        gen[k] = disentanglement_generation(r.log, cfg.n);
    });
    std::uint64_t within = 0;
    for (auto& g : gen)
        if (g && *g <= b.M_n) ++within;
    double frac = double(within) / double(cfg.replicas);
    ExperimentOutcome o;
    o.ok = frac >= 1 - cfg.delta;
    ctx.out.csv("disentangle.csv", [&](std::ostream& os) {
        os << "replica,seed,generation\n";
        for (std::uint64_t k = 0; k < cfg.replicas; ++k)
            os << fmt::format("{},{},{}\n", k, derive_seed(cfg.seed, k), gen[k] ? std::to_string(*gen[k]) : "");
    });
    Json rep;
    rep["n"] = cfg.n;
    rep["D_n"] = opt(b.D_n);
    rep["M_n"] = b.M_n;
    rep["case"] = b.case_used;
    rep["fraction_within_M_n"] = frac;
    rep["required"] = 1 - cfg.delta;
    rep["pass"] = o.ok;
    ctx.out.json("disentangle.json", rep);
    o.summary = fmt::format("disentangle: n={} M_n={:.4g} within={:.4f} (need {:.4f}) {}", cfg.n, b.M_n, frac,
                            1 - cfg.delta, yes(o.ok));
    return o;
}

ExperimentOutcome current_window(Context& ctx) {
    const auto& cfg = ctx.cfg;
    BoundsModel model = make_model(ctx);
    double n = double(cfg.n);
    std::uint64_t ell = EllRule{}(model, n);
    TimeWindow w = compute_time_window(model, n, ell);
    if (!std::isfinite(w.t_up)) throw std::runtime_error("current-window: t_up is not finite");
    struct R {
        std::uint64_t low = 0, up = 0;
    };
    std::vector<R> res(cfg.replicas);
    parallel_for(cfg.replicas, [&](std::uint64_t k) {
        Replica rep = replica_tree(ctx);
        SimConfig sc = sim_config(ctx, rep.family, k);
        // Fewer particles can only lower J, so the upper check stays honest.
        sc.max_particles = cfg.n;
        sc.stop = StopRule::time(w.t_up);
        RunResult r = run(sc, rep.tree);
        LogIndex idx(r.log);
        res[k] = {idx.current_generation(static_cast<std::uint32_t>(ell), w.t_low),
                  idx.current_generation(static_cast<std::uint32_t>(ell), w.t_up)};
    });
    std::uint64_t low_ok = 0, up_ok = 0;
    for (auto& r : res) {
        low_ok += r.low == 0;
        up_ok += double(r.up) >= (1 - cfg.delta) * n;
    }
    double fl = double(low_ok) / double(cfg.replicas), fu = double(up_ok) / double(cfg.replicas);
    ExperimentOutcome o;
    o.ok = fl >= 1 - cfg.delta && fu >= 1 - cfg.delta;
    ctx.out.csv("current_window.csv", [&](std::ostream& os) {
        os << "replica,seed,J_low,J_up\n";
        for (std::uint64_t k = 0; k < cfg.replicas; ++k)
            os << fmt::format("{},{},{},{}\n", k, derive_seed(cfg.seed, k), res[k].low, res[k].up);
    });
    Json rep;
    rep["n"] = cfg.n;
    rep["ell_n"] = ell;
    rep["M_n"] = w.M_n;
    rep["t_low"] = w.t_low;
    rep["t1_low"] = w.t1_low;
    rep["t2_low"] = w.t2_low;
    rep["t_up"] = w.t_up;
    rep["fraction_J_low_zero"] = fl;
    rep["fraction_J_up_full"] = fu;
    rep["pass"] = o.ok;
    ctx.out.json("current_window.json", rep);
    o.summary = fmt::format("current-window: n={} ell={} J(t_low)=0 in {:.4f}, J(t_up)>=(1-delta)n in {:.4f} {}", cfg.n,
                            ell, fl, fu, yes(o.ok));
    return o;
}

ExperimentOutcome generation_window(Context& ctx) {
    const auto& cfg = ctx.cfg;
    BoundsModel model = make_model(ctx);
    GenerationWindow w = compute_generation_window(model, cfg.time);
    std::vector<std::uint32_t> gen(cfg.replicas);
    parallel_for(cfg.replicas, [&](std::uint64_t k) {
        Replica rep = replica_tree(ctx);
        SimConfig sc = sim_config(ctx, rep.family, k);
        sc.stop = StopRule::time(cfg.time);
        RunResult r = run(sc, rep.tree);
        gen[k] = max_generation(r.log, cfg.time).generation;
    });
    std::uint64_t inside = 0;
    for (auto g : gen) inside += g >= w.L_low && g <= w.L_up;
    double frac = double(inside) / double(cfg.replicas);
    ExperimentOutcome o;
    o.ok = frac >= 1 - cfg.delta;
    ctx.out.csv("generation_window.csv", [&](std::ostream& os) {
        os << "replica,seed,max_generation\n";
        for (std::uint64_t k = 0; k < cfg.replicas; ++k)
            os << fmt::format("{},{},{}\n", k, derive_seed(cfg.seed, k), gen[k]);
    });
    Json rep;
    rep["t"] = w.t;
    rep["n_t"] = w.n_t;
    rep["L_low"] = w.L_low;
    rep["L_up"] = w.L_up;
    rep["L1_up"] = w.L1_up;
    rep["L2_up"] = w.L2_up;
    rep["fraction_inside"] = frac;
    rep["pass"] = o.ok;
    ctx.out.json("generation_window.json", rep);
    o.summary = fmt::format("generation-window: t={} window=[{:.4g}, {}] inside={:.4f} {}", cfg.time, w.L_low, w.L_up,
                            frac, yes(o.ok));
    return o;
}

// Compared on the cells of actual moves (row >= column); the DP also fills the
// zero-weight cells above the diagonal, which the slowed system never visits.
bool same_table(const PassageTable& dp, const PassageTable& des) {
    if (dp.rows != des.rows || dp.cols != des.cols) return false;
    for (std::size_t i = 1; i <= dp.rows; ++i)
        for (std::size_t j = 1; j <= std::min(i, dp.cols); ++j) {
            double a = dp(i, j), b = des(i, j);
            if (std::isnan(a) != std::isnan(b)) return false;
            if (!std::isnan(a) && a != b) return false;
        }
    return true;
}

// Max over all up-right paths from (1,1) to (rows, cols), by explicit enumeration.
double enumerate_paths(const LppEnvironment& env) {
    double best = -INFINITY;
    std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
        acc += env(i, j);
        if (i == env.rows && j == env.cols) {
            best = std::max(best, acc);
            return;
        }
        if (i < env.rows) walk(i + 1, j, acc);
        if (j < env.cols) walk(i, j + 1, acc);
    };
    walk(1, 1, 0.0);
    return best;
}

ExperimentOutcome lpp(Context& ctx) {
    const auto& cfg = ctx.cfg;
    BoundsModel model = make_model(ctx);
    const GenerationProfile& profile = model.profile();
    struct R {
        LppEnvironment env;
        PassageTable table;
        bool des_match = false;
        std::optional<bool> enum_match;
    };
    std::vector<R> res(cfg.replicas);
    const bool small = cfg.n + cfg.m + cfg.n <= 18;
    parallel_for(cfg.replicas, [&](std::uint64_t k) {
        R& r = res[k];
        r.env = build_env(cfg.n, cfg.m, cfg.lambda, profile, derive_seed(cfg.seed, k));
        r.table = passage_table(r.env, PathRegion{cfg.m});
        r.des_match = same_table(r.table, slowed_passage_times(r.env, cfg.m));
        if (small) r.enum_match = enumerate_paths(r.env) == passage_time(r.env, r.env.rows, r.env.cols);
    });
    TailCheckResult tail = tail_check(profile, cfg.n, cfg.m, cfg.alpha, cfg.samples, cfg.lambda, cfg.seed);
    ExperimentOutcome o;
    std::uint64_t des_bad = 0, enum_bad = 0;
    for (auto& r : res) {
        des_bad += !r.des_match;
        enum_bad += r.enum_match && !*r.enum_match;
    }
    o.ok = des_bad == 0 && enum_bad == 0;
    for (std::uint64_t k = 0; k < cfg.replicas; ++k) {
        ctx.out.csv(fmt::format("env_r{}.csv", k), [&](std::ostream& os) { write_env_csv(os, res[k].env); }, k);
        ctx.out.csv(fmt::format("table_r{}.csv", k), [&](std::ostream& os) { write_table_csv(os, res[k].table); }, k);
    }
    Json rep;
    rep["n"] = cfg.n;
    rep["m"] = cfg.m;
    rep["G_restricted_r0"] = res[0].table(res[0].env.rows, res[0].env.cols);
    rep["des_mismatches"] = des_bad;
    rep["enumeration_checked"] = small;
    rep["enumeration_mismatches"] = enum_bad;
    Json t;
    t["threshold"] = tail.threshold;
    t["samples"] = tail.samples;
    t["exceed"] = tail.exceed;
    t["exceedance"] = tail.exceedance;
    t["mean_G"] = tail.mean_G;
    rep["tail"] = t;
    rep["pass"] = o.ok;
    ctx.out.json("lpp.json", rep);
    o.summary = fmt::format("lpp: n={} m={} slowed-vs-DP mismatches={} enumeration mismatches={} tail exceedance={:.4f} {}",
                            cfg.n, cfg.m, des_bad, enum_bad, tail.exceedance, yes(o.ok));
    return o;
}

ExperimentOutcome couple(Context& ctx) {
    const auto& cfg = ctx.cfg;
    BoundsModel model = make_model(ctx);
    double T = cfg.stop.kind == StopRule::Kind::Time ? cfg.stop.T : cfg.time;
    struct R {
        Certificate canonical, irw, slowed;
    };
    std::vector<R> res(cfg.replicas);
    parallel_for(cfg.replicas, [&](std::uint64_t k) {
        Replica rep = replica_tree(ctx);
        std::uint64_t s = derive_seed(cfg.seed, k);
        CanonicalOptions co;
        co.throw_on_violation = false;
        res[k].canonical = canonical_pair(*rep.tree, rep.family, cfg.lambda, cfg.lambda2, derive_seed(s, 0), T, co).certificate;
        IrwOptions io;
        io.throw_on_violation = false;
        res[k].irw = irw_pair(*rep.tree, rep.family, model.profile(), cfg.lambda, derive_seed(s, 1), T, io).certificate;
        res[k].slowed = slowed_pair(*rep.tree, rep.family, model.profile(), cfg.lambda, cfg.n, T, derive_seed(s, 2), false)
                            .certificate;
    });
    std::uint64_t vc = 0, vi = 0, vs = 0;
    Json reps = Json::array();
    for (std::uint64_t k = 0; k < cfg.replicas; ++k) {
        const R& r = res[k];
        vc += r.canonical.violations();
        vi += r.irw.violations();
        vs += r.slowed.violations();
        ctx.out.csv(fmt::format("canonical_r{}.csv", k), [&](std::ostream& os) { write_certificate_csv(os, r.canonical); }, k);
        ctx.out.csv(fmt::format("irw_r{}.csv", k), [&](std::ostream& os) { write_certificate_csv(os, r.irw); }, k);
        ctx.out.csv(fmt::format("slowed_r{}.csv", k), [&](std::ostream& os) { write_certificate_csv(os, r.slowed); }, k);
        Json j;
        j["replica"] = k;
        j["canonical_events"] = r.canonical.holds.size();
        j["canonical_violations"] = r.canonical.violations();
        j["irw_events"] = r.irw.holds.size();
        j["irw_violations"] = r.irw.violations();
        j["slowed_events"] = r.slowed.holds.size();
        j["slowed_violations"] = r.slowed.violations();
        reps.push_back(j);
    }
    ExperimentOutcome o;
    o.ok = vc + vi + vs == 0;
    Json rep;
    rep["T"] = T;
    rep["violations"] = {{"canonical", vc}, {"irw", vi}, {"slowed", vs}};
    rep["replicas"] = reps;
    rep["pass"] = o.ok;
    ctx.out.json("couple.json", rep);
    o.summary = fmt::format("couple: {} replica(s), violations canonical={} irw={} slowed={} {}", cfg.replicas, vc, vi, vs,
                            yes(o.ok));
    return o;
}

ExperimentOutcome equilibrium(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const Tree& tree = *ctx.tree;
    ExperimentOutcome o;
    Json rep;
    FlowReport flow = classify_flow(ctx.family, tree, cfg.depth + 1);
    double q_o = flow.q.at(Tree::root());
    bool matched = std::abs(cfg.lambda - cfg.rho * q_o) <= 1e-12 * std::max(1.0, cfg.lambda);
    rep["flow_class"] = to_string(flow.cls);
    rep["q_o"] = q_o;
    rep["lambda_equals_rho_q_o"] = matched;

    Truncation tr = make_truncation(tree, ctx.family, cfg.depth, cfg.lambda);
    std::vector<std::string> checks;
    if (tr.sites() <= kMaxExactSites) {
        StationaryDist pi = exact_stationary(tr);
        bool res_ok = pi.residual <= 1e-10;
        o.ok &= res_ok;
        Json ex;
        ex["sites"] = tr.sites();
        ex["method"] = pi.method;
        ex["residual"] = pi.residual;
        auto fns = sample_upsets(tr.sites(), cfg.functions, derive_seed(cfg.seed, 0x6d6f6e));
        Truncation tr1 = make_truncation(tree, ctx.family, cfg.depth + 1, cfg.lambda);
        if (tr1.sites() <= kMaxExactSites) {
            StationaryDist pi1 = exact_stationary(tr1);
            MonotoneCertificate mc = monotone_check(pi, pi1, fns);
            ex["monotone_checked"] = mc.checked;
            ex["monotone_holds"] = mc.holds;
            ex["monotone_worst_gap"] = mc.worst_gap;
            o.ok &= mc.holds && pi1.residual <= 1e-10;
        }
        if (matched && (flow.cls == FlowClass::Flow || flow.cls == FlowClass::Superflow)) {
            MonotoneCertificate bc = bernoulli_domination(pi, cfg.rho, fns);
            ex["bernoulli_holds"] = bc.holds;
            ex["bernoulli_worst_gap"] = bc.worst_gap;
            o.ok &= bc.holds;
        }
        auto dens = density_profile(pi, tr);
        ctx.out.csv("density_exact.csv", [&](std::ostream& os) { write_density_csv(os, dens); });
        ctx.out.csv("marginals.csv", [&](std::ostream& os) { write_marginals_csv(os, pi, tr); });
        std::vector<double> gens(dens.size());
        for (std::size_t g = 0; g < gens.size(); ++g) gens[g] = double(g);
        ctx.out.svg("density_exact.svg", "stationary density of the truncation", "generation", "density",
                    {{"exact", gens, dens}});
        rep["exact"] = ex;
        checks.push_back(fmt::format("residual={:.3g}", pi.residual));
    } else {
        rep["exact"] = nullptr;
    }

    // Generator pairing on every vertex set of size <= 3 among the first 64 sites.
    std::vector<VertexId> pool(tr.vertices.begin(), tr.vertices.begin() + std::min<std::size_t>(tr.sites(), 64));
    double worst = 0;
    std::uint64_t sets = 0;
    auto pairing = [&](std::vector<VertexId> A) {
        worst = std::max(worst, std::abs(flow_generator_identity(tree, ctx.family, A, cfg.rho, cfg.lambda)));
        ++sets;
    };
    for (std::size_t a = 0; a < pool.size(); ++a) {
        pairing({pool[a]});
        for (std::size_t b = a + 1; b < pool.size(); ++b) {
            pairing({pool[a], pool[b]});
            for (std::size_t c = b + 1; c < pool.size(); ++c) pairing({pool[a], pool[b], pool[c]});
        }
    }
    rep["flow_identity_sets"] = sets;
    rep["flow_identity_max_abs"] = worst;
    if (flow.cls == FlowClass::Flow && matched) o.ok &= worst <= 1e-12;

    // Empirical profile on the same truncation.
    double T = cfg.stop.kind == StopRule::Kind::Time ? cfg.stop.T : cfg.time;
    std::vector<std::vector<double>> emp(cfg.replicas);
    parallel_for(cfg.replicas, [&](std::uint64_t k) {
        Replica r = replica_tree(ctx);
        SimConfig sc = sim_config(ctx, r.family, k);
        sc.truncation_depth = cfg.depth;
        sc.stop = StopRule::time(T);
        RunResult run_k = run(sc, r.tree);
        emp[k] = density_profile(run_k.log, *run_k.tree, cfg.depth, T / 4, T);
    });
    std::vector<double> mean(cfg.depth + 1, 0.0);
    for (auto& e : emp)
        for (std::size_t g = 0; g < mean.size(); ++g) mean[g] += e[g] / double(cfg.replicas);
    ctx.out.csv("density_empirical.csv", [&](std::ostream& os) { write_density_csv(os, mean); });
    rep["empirical_density"] = mean;
    rep["pass"] = o.ok;
    ctx.out.json("equilibrium.json", rep);
    o.summary = fmt::format("equilibrium: depth={} class={} flow identity max={:.3g} {}", cfg.depth, to_string(flow.cls),
                            worst, yes(o.ok));
    return o;
}

ExperimentOutcome classify_rates(Context& ctx) {
    const auto& cfg = ctx.cfg;
    std::uint32_t horizon = std::max<std::uint32_t>(cfg.depth, 1);
    FlowReport f = classify_flow(ctx.family, *ctx.tree, horizon);
    std::string line = to_string(f.cls);
    if (f.cls == FlowClass::Flow) line += fmt::format(", strength {}", f.strength);
    UEResult ue = check_UE(ctx.family, *ctx.tree, horizon);
    EDResult ed = check_ED(ctx.family, horizon, ctx.tree.get());
    ctx.out.csv("flow.csv", [&](std::ostream& os) {
        os << "vertex,generation,q\n";
        for (auto [v, q] : f.q) os << fmt::format("{},{},{}\n", v, ctx.tree->generation(v), q);
    });
    Json rep;
    rep["family"] = ctx.family.describe();
    rep["summary"] = line;
    rep["class"] = to_string(f.cls);
    rep["strength"] = f.strength;
    rep["horizon"] = f.horizon;
    rep["tolerance"] = f.tolerance;
    rep["UE"] = {{"holds", ue.holds}, {"epsilon", ue.epsilon}};
    rep["ED"] = {{"holds", ed.holds}, {"kappa", ed.kappa}, {"c_low", ed.c_low}};
    ctx.out.json("classify.json", rep);
    return {true, {}, "classify-rates: " + line};
}

ExperimentOutcome bounds(Context& ctx) {
    const auto& cfg = ctx.cfg;
    BoundsModel model = make_model(ctx);
    double n = double(cfg.n);
    DisentanglementBound b = model.M_n(n);
    Json rep;
    rep["family"] = ctx.family.describe();
    rep["n"] = cfg.n;
    rep["delta"] = cfg.delta;
    rep["D_n"] = opt(b.D_n);
    rep["M_n"] = b.M_n;
    rep["c_o"] = model.c_o();
    rep["epsilon"] = model.epsilon();
    rep["c_low"] = model.c_low();
    rep["kappa"] = model.kappa();
    rep["case"] = b.case_used;
    try {
        std::uint64_t ell = EllRule{}(model, n);
        TimeWindow w = compute_time_window(model, n, ell);
        rep["time_window"] = {{"ell_n", ell}, {"t_low", w.t_low}, {"t_up", w.t_up}};
    } catch (const std::exception& e) {
        rep["time_window"] = {{"error", e.what()}};
    }
    try {
        GenerationWindow g = compute_generation_window(model, cfg.time);
        rep["generation_window"] = {{"t", g.t}, {"n_t", g.n_t}, {"L_low", g.L_low}, {"L_up", g.L_up}};
    } catch (const std::exception& e) {
        rep["generation_window"] = {{"error", e.what()}};
    }
    ctx.out.json("bounds.json", rep);
    std::string dn = b.D_n ? fmt::format("{:.6g}", *b.D_n) : std::string("none");
    return {true, {}, fmt::format("bounds: n={} D_n={} M_n={:.6g} c_o={:.6g}", cfg.n, dn, b.M_n, model.c_o())};
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    OffspringLaw law = make_law(cfg);
    auto tree = make_tree(cfg, law);
    RateFamily family = make_family(cfg, *tree);
    Context ctx{cfg, law, tree, family, Output(cfg)};
    ExperimentOutcome o;
    switch (cfg.subcommand) {
        case Subcommand::Simulate: o = simulate(ctx); break;
        case Subcommand::Disentangle: o = disentangle(ctx); break;
        case Subcommand::CurrentWindow: o = current_window(ctx); break;
        case Subcommand::GenerationWindow: o = generation_window(ctx); break;
        case Subcommand::Lpp: o = lpp(ctx); break;
        case Subcommand::Couple: o = couple(ctx); break;
        case Subcommand::Equilibrium: o = equilibrium(ctx); break;
        case Subcommand::ClassifyRates: o = classify_rates(ctx); break;
        case Subcommand::Bounds: o = bounds(ctx); break;
    }
    o.files = ctx.out.files();
    return o;
}

}  // namespace treetasep
