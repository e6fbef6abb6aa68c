#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <sstream>

#include "treetasep/bounds.hpp"
#include "treetasep/cli.hpp"
#include "treetasep/couplings.hpp"
#include "treetasep/engine.hpp"
#include "treetasep/equilibrium.hpp"
#include "treetasep/lpp.hpp"

namespace py = pybind11;
using namespace treetasep;

namespace {

using Matrix = py::array_t<double, py::array::c_style | py::array::forcecast>;

LppEnvironment env_from(const Matrix& a) {
    if (a.ndim() != 2) throw std::invalid_argument("environment must be a 2-d array");
    auto rows = std::size_t(a.shape(0)), cols = std::size_t(a.shape(1));
    return make_env(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Matrix to_array(std::size_t rows, std::size_t cols, const std::vector<double>& v) {
    Matrix out({rows, cols});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

const char* kind_name(EventKind k) {
    switch (k) {
        case EventKind::Entry: return "entry";
        case EventKind::Jump: return "jump";
        case EventKind::Exit: return "exit";
    }
    return "?";
}

ClockMode clock_from(const std::string& s) {
    if (s == "next-reaction") return ClockMode::NextReaction;
    if (s == "shared-stream") return ClockMode::SharedStream;
    throw std::invalid_argument("clock must be next-reaction or shared-stream");
}

ExperimentConfig config_from(const std::string& text) {
    std::istringstream is(text);
    return parse_config(is);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "TASEP on rooted trees: simulation, bounds, couplings, last passage percolation, equilibrium";

    py::class_<OffspringLaw>(m, "OffspringLaw")
        .def_static("dirac", &OffspringLaw::dirac, py::arg("k"))
        .def_static("general", &OffspringLaw::general, py::arg("weights"))
        .def_property_readonly("weights", &OffspringLaw::weights);

    py::class_<Tree>(m, "Tree")
        .def(py::init<const OffspringLaw&, std::uint64_t>(), py::arg("law"), py::arg("seed") = 0)
        .def_static("from_parents", &Tree::from_parents, py::arg("parents"))
        .def("size", &Tree::size)
        .def("materialize_to_depth", &Tree::materialize_to_depth, py::arg("depth"))
        .def("generation", &Tree::generation)
        .def("parent", [](const Tree& t, VertexId v) -> std::optional<VertexId> {
            VertexId p = t.parent(v);
            if (p == kNoVertex) return std::nullopt;
            return p;
        })
        .def("children", [](const Tree& t, VertexId v) {
            auto r = t.ensure_children(v);
            return std::vector<VertexId>(r.begin(), r.end());
        })
        .def("generation_vertices", &Tree::generation_vertices, py::arg("g"));

    py::class_<RateFamily>(m, "RateFamily")
        .def_static("constant", &RateFamily::constant)
        .def_static("exponential", &RateFamily::exponential, py::arg("d"))
        .def_static("polynomial", &RateFamily::polynomial, py::arg("p"))
        .def_static(
            "slowed",
            [](unsigned d, const std::string& g, double param) {
                DecayFunction f;
                if (g == "exp")
                    f.kind = DecayFunction::Kind::Exponential;
                else if (g == "power")
                    f.kind = DecayFunction::Kind::Power;
                else
                    throw std::invalid_argument("g must be 'exp' or 'power'");
                f.param = param;
                return RateFamily::slowed(d, f);
            },
            py::arg("d"), py::arg("g") = "exp", py::arg("param") = 2.0)
        .def("generation_rate", &RateFamily::generation_rate)
        .def("edge_rate", &RateFamily::edge_rate, py::arg("tree"), py::arg("child"))
        .def("out_rate", &RateFamily::out_rate, py::arg("tree"), py::arg("x"))
        .def("__repr__", &RateFamily::describe);

    py::class_<EventLog>(m, "EventLog")
        .def_readonly("initial", &EventLog::initial)
        .def_readonly("end_time", &EventLog::end_time)
        .def_property_readonly("events",
                               [](const EventLog& log) {
                                   py::list out;
                                   auto vid = [](VertexId v) -> py::object {
                                       return v == kNoVertex ? py::none() : py::cast(v);
                                   };
                                   for (const Event& e : log.events)
                                       out.append(py::make_tuple(e.time, kind_name(e.kind), e.particle, vid(e.from),
                                                                 vid(e.to)));
                                   return out;
                               })
        .def("__len__", [](const EventLog& log) { return log.events.size(); })
        .def("current", [](const EventLog& log, VertexId x, double t) { return current(log, x, t); })
        .def("current_generation",
             [](const EventLog& log, std::uint32_t l, double t) { return current_generation(log, l, t); })
        .def("tau", [](const EventLog& log, std::uint32_t mm, std::uint64_t n) { return tau(log, mm, n); })
        .def("disentanglement_generation",
             [](const EventLog& log, std::uint64_t n) { return disentanglement_generation(log, n); })
        .def("max_generation", [](const EventLog& log, double t) {
            auto g = max_generation(log, t);
            return g.any ? std::optional<std::uint32_t>(g.generation) : std::nullopt;
        });

    m.def(
        "simulate",
        [](const OffspringLaw& law, const RateFamily& family, double lambda, std::optional<double> T,
           std::optional<std::uint64_t> entered, std::uint64_t seed, std::uint64_t tree_seed,
           std::optional<std::uint64_t> max_particles, std::optional<std::uint32_t> truncation_depth,
           const std::string& clock) {
            if (T.has_value() == entered.has_value()) throw std::invalid_argument("give exactly one of T, entered");
            SimConfig c;
            c.law = law;
            c.tree_seed = tree_seed;
            c.family = family;
            c.lambda = lambda;
            c.stop = T ? StopRule::time(*T) : StopRule::entered(*entered);
            c.seed = seed;
            c.clock = clock_from(clock);
            c.max_particles = max_particles;
            c.truncation_depth = truncation_depth;
            py::gil_scoped_release unlock;
            return run(c).log;
        },
        py::arg("law"), py::arg("family"), py::arg("lam"), py::arg("T") = py::none(), py::arg("entered") = py::none(),
        py::arg("seed") = 0, py::arg("tree_seed") = 0, py::arg("max_particles") = py::none(),
        py::arg("truncation_depth") = py::none(), py::arg("clock") = "next-reaction",
        "Runs the process from an empty tree and returns its event log.");

    py::class_<BoundsModel>(m, "BoundsModel")
        .def(py::init<const RateFamily&, const OffspringLaw&, double>(), py::arg("family"), py::arg("law"),
             py::arg("delta") = 0.1)
        .def_property_readonly("c_o", &BoundsModel::c_o)
        .def_property_readonly("c_low", &BoundsModel::c_low)
        .def_property_readonly("epsilon", &BoundsModel::epsilon)
        .def("D_n", &BoundsModel::D_n, py::arg("n"))
        .def("M_n", [](const BoundsModel& b, double n) { return b.M_n(n).M_n; }, py::arg("n"))
        .def(
            "time_window",
            [](const BoundsModel& b, double n, std::optional<std::uint64_t> ell) {
                std::uint64_t l = ell ? *ell : EllRule{}(b, n);
                TimeWindow w = compute_time_window(b, n, l);
                py::dict d;
                d["ell_n"] = w.ell_n;
                d["M_n"] = w.M_n;
                d["t_low"] = w.t_low;
                d["t_up"] = w.t_up;
                return d;
            },
            py::arg("n"), py::arg("ell") = py::none())
        .def("generation_window", [](const BoundsModel& b, double t) {
            GenerationWindow w = compute_generation_window(b, t);
            py::dict d;
            d["n_t"] = w.n_t;
            d["L_low"] = w.L_low;
            d["L_up"] = w.L_up;
            return d;
        });

    m.def(
        "passage_table",
        [](const Matrix& env, std::optional<std::uint64_t> region_m) {
            auto e = env_from(env);
            std::optional<PathRegion> r;
            if (region_m) r = PathRegion{*region_m};
            auto t = passage_table(e, r);
            return to_array(t.rows, t.cols, t.g);
        },
        py::arg("env"), py::arg("m") = py::none(), "Last passage times from (1,1); NaN where no path exists.");
    m.def(
        "build_env",
        [](std::uint64_t n, std::uint64_t mm, double lambda, const RateFamily& family, const OffspringLaw& law,
           std::uint64_t seed) {
            auto e = build_env(n, mm, lambda, GenerationProfile::analytic(family, law), seed);
            return to_array(e.rows, e.cols, e.w);
        },
        py::arg("n"), py::arg("m"), py::arg("lam"), py::arg("family"), py::arg("law"), py::arg("seed") = 0);
    m.def(
        "slowed_passage_times",
        [](const Matrix& env, std::uint64_t M) {
            auto t = slowed_passage_times(env_from(env), M);
            return to_array(t.rows, t.cols, t.g);
        },
        py::arg("env"), py::arg("M"));

    m.def(
        "exp_sum_tail",
        [](const std::vector<double>& c, double t, double delta) {
            auto r = exp_sum_tail(c, t, delta);
            py::dict d;
            d["lower"] = r.lower;
            d["upper1"] = r.upper1;
            d["upper2"] = r.upper2;
            d["S"] = r.S;
            return d;
        },
        py::arg("c"), py::arg("t"), py::arg("delta"));

    m.def(
        "stationary_marginals",
        [](const Tree& tree, const RateFamily& family, std::uint32_t depth, double lambda) {
            auto tr = make_truncation(tree, family, depth, lambda);
            auto pi = exact_stationary(tr);
            std::vector<double> marg(pi.sites);
            for (std::size_t k = 0; k < pi.sites; ++k) marg[k] = pi.marginal(k);
            return py::make_tuple(tr.vertices, marg, pi.residual);
        },
        py::arg("tree"), py::arg("family"), py::arg("depth"), py::arg("lam"),
        "Exact stationary occupation probabilities of a truncation: (vertices, marginals, residual).");
    m.def("flow_generator_identity", &flow_generator_identity, py::arg("tree"), py::arg("family"), py::arg("A"),
          py::arg("rho"), py::arg("lam"));

    m.def(
        "run_experiment",
        [](const std::string& config_text, const std::string& out) {
            auto cfg = config_from(config_text);
            cfg.out = out;
            ExperimentOutcome o;
            {
                py::gil_scoped_release unlock;
                o = run_experiment(cfg);
            }
            py::dict d;
            d["ok"] = o.ok;
            d["files"] = o.files;
            d["summary"] = o.summary;
            return d;
        },
        py::arg("config"), py::arg("out"), "Runs a config file's text, writing into `out`.");
    m.def("config_hash", [](const std::string& text) { return config_hash(config_from(text)); }, py::arg("config"));
}
