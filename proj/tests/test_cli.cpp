#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "treetasep/bounds.hpp"
#include "treetasep/cli.hpp"

using namespace treetasep;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& body) {
    std::istringstream is(std::string(kConfigHeader) + "\n" + body);
    return parse_config(is);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("treetasep_test_cli_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("minimal config is accepted") {
    auto c = parse("subcommand = simulate\ntree.law = dirac:2\nrates.family = constant\nlambda = 1\nstop = time:10\nseed = 1\n");
    CHECK(c.subcommand == Subcommand::Simulate);
    CHECK(c.law == std::map<unsigned, double>{{2, 1.0}});
    CHECK(c.rate_kind == RateKind::Constant);
    CHECK(c.lambda == 1.0);
    CHECK(c.stop.kind == StopRule::Kind::Time);
    CHECK(c.stop.T == 10.0);
    CHECK(c.seed == 1);
    CHECK_NOTHROW(validate(c));
    // Every key has a default.
    CHECK(parse("") == ExperimentConfig{});
}

TEST_CASE("leaves in the offspring law are rejected") {
    try {
        validate(parse("tree.law = 0:0.2,2:0.8\n"));
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.key == "tree.law");
        CHECK(std::string(e.what()).find("leaves") != std::string::npos);
    }
}

TEST_CASE("schema violations name their key") {
    auto key_of = [](const std::string& body) {
        try {
            auto c = parse(body);
            validate(c);
        } catch (const ConfigError& e) {
            return e.key;
        }
        return std::string("<accepted>");
    };
    CHECK(key_of("bogus = 1\n") == "bogus");
    CHECK(key_of("lambda = 1\nlambda = 2\n") == "lambda");
    CHECK(key_of("lambda = fast\n") == "lambda");
    CHECK(key_of("seed = -3\n") == "seed");
    CHECK(key_of("rates.family = zigzag\n") == "rates.family");
    CHECK(key_of("stop = forever\n") == "stop");
    CHECK(key_of("format = pdf\n") == "format");
    CHECK(key_of("tree.law = 2:0.5,3:0.4\n") == "tree.law");
    CHECK(key_of("subcommand = dance\n") == "subcommand");
    CHECK(key_of("rates.family = table\n") == "rates.table");
    std::istringstream no_header("lambda = 1\n");
    CHECK_THROWS_AS(parse_config(no_header), ConfigError);
}

TEST_CASE("parse, serialize, parse is the identity") {
    std::vector<std::string> bodies = {
        "",
        "subcommand = couple\ntree.law = 1:0.25,2:0.5,3:0.25\nrates.family = polynomial\nrates.p = 0.75\n"
        "rates.decay = superlog\nlambda = 0.3\nlambda2 = 0.9\nstop = past:12:4\nclock = shared-stream\n",
        "subcommand = lpp\nrates.family = slowed\nrates.g = power:1.5\nn = 40\nm = 7\nalpha = 0.25\nformat = json\n",
        "subcommand = equilibrium\nrates.family = exponential\nrates.d = 4\nrho = 0.1\ndelta = 0.30000000000000004\n",
    };
    for (const auto& b : bodies) {
        auto c = parse(b);
        std::istringstream again(serialize(c));
        auto d = parse_config(again);
        CHECK(c == d);
        CHECK(serialize(d) == serialize(c));
    }
}

TEST_CASE("config hash ignores the output directory only") {
    ExperimentConfig a;
    auto b = a;
    b.out = "elsewhere";
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    b.seed = a.seed + 1;
    CHECK(config_hash(a) != config_hash(b));
    set_config_value(b, "seed", std::to_string(a.seed));
    CHECK(config_hash(a) == config_hash(b));
}

TEST_CASE("subcommand names round-trip") {
    for (auto s : {Subcommand::Simulate, Subcommand::Disentangle, Subcommand::CurrentWindow, Subcommand::GenerationWindow,
                   Subcommand::Lpp, Subcommand::Couple, Subcommand::Equilibrium, Subcommand::ClassifyRates,
                   Subcommand::Bounds})
        CHECK(parse_subcommand(to_string(s)) == s);
    CHECK(!parse_subcommand("nope"));
}

TEST_CASE("classify-rates on exponential rates reports a flow of strength 1") {
    auto cfg = parse("subcommand = classify-rates\nrates.family = exponential\nrates.d = 3\n");
    cfg.out = scratch("classify").string();
    auto o = run_experiment(cfg);
    CHECK(o.ok);
    CHECK(o.summary.find("Flow, strength 1") != std::string::npos);
}

TEST_CASE("bounds report on exponential rates, n = 100") {
    auto cfg = parse("subcommand = bounds\nrates.family = exponential\nrates.d = 3\nn = 100\n");
    cfg.out = scratch("bounds").string();
    auto o = run_experiment(cfg);
    REQUIRE(o.ok);
    auto j = nlohmann::json::parse(slurp(fs::path(cfg.out) / "bounds.json"));
    CHECK(j["treetasep"]["config_hash"] == config_hash(cfg));
    CHECK(j["treetasep"]["seed"] == cfg.seed);
    // Dirac(2): c_o = 1/log 2 and (E) has c_low = log 2.
    double c_o = j["c_o"], c_low = j["c_low"];
    CHECK(c_o == doctest::Approx(1 / std::log(2.0)));
    CHECK(c_low * c_o == doctest::Approx(1.0));
    // D_n by scanning r^max_l = 2^{-l-1} against n^{-3} (log n)^{-3}.
    double thr = std::pow(100.0, -3.0) * std::pow(std::log(100.0), -3.0);
    int scan = 1;
    while (std::pow(2.0, -scan - 1) > thr) ++scan;
    CHECK(j["D_n"] == double(scan));
    auto prof = GenerationProfile::analytic(RateFamily::exponential(3), OffspringLaw::dirac(2));
    BoundInputs in;
    in.n = 100;
    in.D_n = compute_D_n(prof, 100, c_low, c_o);
    in.d_min = 2;
    in.c_o = c_o;
    in.epsilon = j["epsilon"];
    in.delta = 0.1;
    in.decay_class = DecayClass::LogOrderDn;
    CHECK(double(j["M_n"]) == doctest::Approx(compute_M_n(in).M_n).epsilon(1e-14));
}

TEST_CASE("simulate twice gives byte-identical files") {
    auto cfg = parse("subcommand = simulate\nrates.family = exponential\nlambda = 0.7\nstop = time:30\nseed = 4\nreplicas = 3\n");
    cfg.out = scratch("sim_a").string();
    auto a = run_experiment(cfg);
    auto dir_a = cfg.out;
    cfg.out = scratch("sim_b").string();
    auto b = run_experiment(cfg);
    REQUIRE(a.files == b.files);
    REQUIRE(!a.files.empty());
    for (const auto& f : a.files) {
        auto x = slurp(fs::path(dir_a) / f), y = slurp(fs::path(cfg.out) / f);
        CHECK(!x.empty());
        CHECK(x == y);
        // Every file carries the seed and the hash.
        CHECK(x.find(config_hash(cfg)) != std::string::npos);
    }
    cfg.seed = 5;
    cfg.out = scratch("sim_c").string();
    auto c = run_experiment(cfg);
    bool any_diff = false;
    for (const auto& f : c.files)
        if (f.find(".csv") != std::string::npos && slurp(fs::path(dir_a) / f) != slurp(fs::path(cfg.out) / f)) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("parallel_for visits every index once") {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), [&](std::uint64_t i) { hits[i] += 1; }, 4);
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("svg chart is a standalone document") {
    std::ostringstream os;
    write_svg_chart(os, "density", "generation", "density", {{"run", {0, 1, 2}, {0.5, 0.25, 0.1}}}, {"seed = 1"});
    auto s = os.str();
    CHECK(s.find("<svg") != std::string::npos);
    CHECK(s.find("</svg>") != std::string::npos);
    CHECK(s.find("<polyline") != std::string::npos);
}
