#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <set>
#include <sstream>
#include <string_view>

#include <fmt/format.h>

#include "treetasep/cli.hpp"

namespace treetasep {

namespace {

const std::vector<std::pair<Subcommand, const char*>> kSubcommands = {
    {Subcommand::Simulate, "simulate"},
    {Subcommand::Disentangle, "disentangle"},
    {Subcommand::CurrentWindow, "current-window"},
    {Subcommand::GenerationWindow, "generation-window"},
    {Subcommand::Lpp, "lpp"},
    {Subcommand::Couple, "couple"},
    {Subcommand::Equilibrium, "equilibrium"},
    {Subcommand::ClassifyRates, "classify-rates"},
    {Subcommand::Bounds, "bounds"},
};

const std::vector<std::pair<RateKind, const char*>> kFamilies = {
    {RateKind::Constant, "constant"},
    {RateKind::ExponentialHomogeneous, "exponential"},
    {RateKind::Slowed, "slowed"},
    {RateKind::Polynomial, "polynomial"},
    {RateKind::CustomTable, "table"},
};

const std::set<std::string> kFormats = {"csv", "json", "svg"};

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    return out;
}

double to_double(const std::string& key, const std::string& s) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ConfigError(key, fmt::format("'{}' is not a number", s));
    return v;
}

std::uint64_t to_uint(const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ConfigError(key, fmt::format("'{}' is not a non-negative integer", s));
    return v;
}

std::string num(double v) { return fmt::format("{}", v); }

std::string law_string(const std::map<unsigned, double>& law) {
    if (law.size() == 1 && law.begin()->second == 1.0) return fmt::format("dirac:{}", law.begin()->first);
    std::string s;
    for (auto [k, w] : law) s += fmt::format("{}{}:{}", s.empty() ? "" : ",", k, num(w));
    return s;
}

std::map<unsigned, double> parse_law(const std::string& key, const std::string& v) {
    std::map<unsigned, double> law;
    if (v.rfind("dirac:", 0) == 0) {
        law[static_cast<unsigned>(to_uint(key, v.substr(6)))] = 1.0;
        return law;
    }
    for (const std::string& item : split(v, ',')) {
        auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError(key, fmt::format("expected k:weight, got '{}'", item));
        unsigned k = static_cast<unsigned>(to_uint(key, trim(item.substr(0, colon))));
        if (law.count(k)) throw ConfigError(key, fmt::format("offspring count {} listed twice", k));
        law[k] = to_double(key, trim(item.substr(colon + 1)));
    }
    if (law.empty()) throw ConfigError(key, "empty offspring law");
    return law;
}

std::string stop_string(const StopRule& s) {
    switch (s.kind) {
        case StopRule::Kind::Time: return "time:" + num(s.T);
        case StopRule::Kind::ParticlesEntered: return fmt::format("entered:{}", s.n);
        case StopRule::Kind::ParticlesPastGeneration: return fmt::format("past:{}:{}", s.n, s.m);
    }
    return {};
}

StopRule parse_stop(const std::string& key, const std::string& v) {
    auto parts = split(v, ':');
    if (parts.size() == 2 && parts[0] == "time") return StopRule::time(to_double(key, parts[1]));
    if (parts.size() == 2 && parts[0] == "entered") return StopRule::entered(to_uint(key, parts[1]));
    if (parts.size() == 3 && parts[0] == "past")
        return StopRule::past(to_uint(key, parts[1]), static_cast<std::uint32_t>(to_uint(key, parts[2])));
    throw ConfigError(key, fmt::format("expected time:T, entered:N or past:N:M, got '{}'", v));
}

struct Field {
    const char* key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        {"subcommand",
         [](ExperimentConfig& c, const std::string& v) {
             auto s = parse_subcommand(v);
             if (!s) throw ConfigError("subcommand", fmt::format("unknown subcommand '{}'", v));
             c.subcommand = *s;
         },
         [](const ExperimentConfig& c) { return to_string(c.subcommand); }},
        {"tree.law", [](ExperimentConfig& c, const std::string& v) { c.law = parse_law("tree.law", v); },
         [](const ExperimentConfig& c) { return law_string(c.law); }},
        {"tree.seed", [](ExperimentConfig& c, const std::string& v) { c.tree_seed = to_uint("tree.seed", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.tree_seed); }},
        {"rates.family",
         [](ExperimentConfig& c, const std::string& v) {
             for (auto [k, name] : kFamilies)
                 if (v == name) {
                     c.rate_kind = k;
                     return;
                 }
             throw ConfigError("rates.family", fmt::format("unknown family '{}'", v));
         },
         [](const ExperimentConfig& c) {
             for (auto [k, name] : kFamilies)
                 if (k == c.rate_kind) return std::string(name);
             return std::string();
         }},
        {"rates.d", [](ExperimentConfig& c, const std::string& v) { c.d = static_cast<unsigned>(to_uint("rates.d", v)); },
         [](const ExperimentConfig& c) { return std::to_string(c.d); }},
        {"rates.p", [](ExperimentConfig& c, const std::string& v) { c.p = to_double("rates.p", v); },
         [](const ExperimentConfig& c) { return num(c.p); }},
        {"rates.g",
         [](ExperimentConfig& c, const std::string& v) {
             auto parts = split(v, ':');
             if (parts.size() != 2 || (parts[0] != "exp" && parts[0] != "power"))
                 throw ConfigError("rates.g", fmt::format("expected exp:B or power:P, got '{}'", v));
             c.g.kind = parts[0] == "exp" ? DecayFunction::Kind::Exponential : DecayFunction::Kind::Power;
             c.g.param = to_double("rates.g", parts[1]);
         },
         [](const ExperimentConfig& c) {
             return (c.g.kind == DecayFunction::Kind::Exponential ? "exp:" : "power:") + num(c.g.param);
         }},
        {"rates.table", [](ExperimentConfig& c, const std::string& v) { c.rate_table = v; },
         [](const ExperimentConfig& c) { return c.rate_table; }},
        {"rates.decay",
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "none")
                 c.decay.reset();
             else if (v == "log")
                 c.decay = DecayClass::LogOrderDn;
             else if (v == "superlog")
                 c.decay = DecayClass::SuperLogOrderDn;
             else
                 throw ConfigError("rates.decay", fmt::format("expected none, log or superlog, got '{}'", v));
         },
         [](const ExperimentConfig& c) {
             if (!c.decay) return std::string("none");
             return std::string(*c.decay == DecayClass::LogOrderDn ? "log" : "superlog");
         }},
        {"lambda", [](ExperimentConfig& c, const std::string& v) { c.lambda = to_double("lambda", v); },
         [](const ExperimentConfig& c) { return num(c.lambda); }},
        {"lambda2", [](ExperimentConfig& c, const std::string& v) { c.lambda2 = to_double("lambda2", v); },
         [](const ExperimentConfig& c) { return num(c.lambda2); }},
        {"delta", [](ExperimentConfig& c, const std::string& v) { c.delta = to_double("delta", v); },
         [](const ExperimentConfig& c) { return num(c.delta); }},
        {"seed", [](ExperimentConfig& c, const std::string& v) { c.seed = to_uint("seed", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
        {"replicas", [](ExperimentConfig& c, const std::string& v) { c.replicas = to_uint("replicas", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.replicas); }},
        {"stop", [](ExperimentConfig& c, const std::string& v) { c.stop = parse_stop("stop", v); },
         [](const ExperimentConfig& c) { return stop_string(c.stop); }},
        {"clock",
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "next-reaction")
                 c.clock = ClockMode::NextReaction;
             else if (v == "shared-stream")
                 c.clock = ClockMode::SharedStream;
             else
                 throw ConfigError("clock", fmt::format("expected next-reaction or shared-stream, got '{}'", v));
         },
         [](const ExperimentConfig& c) {
             return std::string(c.clock == ClockMode::NextReaction ? "next-reaction" : "shared-stream");
         }},
        {"n", [](ExperimentConfig& c, const std::string& v) { c.n = to_uint("n", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.n); }},
        {"m", [](ExperimentConfig& c, const std::string& v) { c.m = to_uint("m", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.m); }},
        {"depth", [](ExperimentConfig& c, const std::string& v) { c.depth = static_cast<std::uint32_t>(to_uint("depth", v)); },
         [](const ExperimentConfig& c) { return std::to_string(c.depth); }},
        {"rho", [](ExperimentConfig& c, const std::string& v) { c.rho = to_double("rho", v); },
         [](const ExperimentConfig& c) { return num(c.rho); }},
        {"time", [](ExperimentConfig& c, const std::string& v) { c.time = to_double("time", v); },
         [](const ExperimentConfig& c) { return num(c.time); }},
        {"alpha", [](ExperimentConfig& c, const std::string& v) { c.alpha = to_double("alpha", v); },
         [](const ExperimentConfig& c) { return num(c.alpha); }},
        {"samples", [](ExperimentConfig& c, const std::string& v) { c.samples = to_uint("samples", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.samples); }},
        {"functions", [](ExperimentConfig& c, const std::string& v) { c.functions = to_uint("functions", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.functions); }},
        {"out", [](ExperimentConfig& c, const std::string& v) { c.out = v; },
         [](const ExperimentConfig& c) { return c.out; }},
        {"format",
         [](ExperimentConfig& c, const std::string& v) {
             std::vector<std::string> fs;
             for (const std::string& f : split(v, ',')) {
                 if (!kFormats.count(f)) throw ConfigError("format", fmt::format("unknown format '{}'", f));
                 if (std::find(fs.begin(), fs.end(), f) == fs.end()) fs.push_back(f);
             }
             if (fs.empty()) throw ConfigError("format", "no output format");
             c.formats = fs;
         },
         [](const ExperimentConfig& c) {
             std::string s;
             for (const auto& f : c.formats) s += (s.empty() ? "" : ",") + f;
             return s;
         }},
    };
    return f;
}

const Field* find_field(const std::string& key) {
    for (const Field& f : fields())
        if (key == f.key) return &f;
    return nullptr;
}

}  // namespace

std::string to_string(Subcommand s) {
    for (auto [k, name] : kSubcommands)
        if (k == s) return name;
    return "?";
}

std::optional<Subcommand> parse_subcommand(const std::string& s) {
    for (auto [k, name] : kSubcommands)
        if (s == name) return k;
    return std::nullopt;
}

bool ExperimentConfig::wants(const std::string& format) const {
    return std::find(formats.begin(), formats.end(), format) != formats.end();
}

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
    auto stop_eq = stop.kind == o.stop.kind && stop.T == o.stop.T && stop.n == o.stop.n && stop.m == o.stop.m;
    return stop_eq && subcommand == o.subcommand && law == o.law && tree_seed == o.tree_seed &&
           rate_kind == o.rate_kind && d == o.d && p == o.p && g == o.g && rate_table == o.rate_table &&
           decay == o.decay && lambda == o.lambda && lambda2 == o.lambda2 && delta == o.delta && seed == o.seed &&
           replicas == o.replicas && clock == o.clock && n == o.n && m == o.m && depth == o.depth && rho == o.rho &&
           time == o.time && alpha == o.alpha && samples == o.samples && functions == o.functions && out == o.out &&
           formats == o.formats;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError(key, "unknown key");
    f->set(cfg, value);
}

ExperimentConfig parse_config(std::istream& is) {
    ExperimentConfig cfg;
    std::string line;
    bool header = false;
    std::set<std::string> seen;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        if (!header) {
            if (s != kConfigHeader)
                throw ConfigError("<header>", fmt::format("line {}: expected '{}', got '{}'", lineno, kConfigHeader, s));
            header = true;
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("<line " + std::to_string(lineno) + ">", "expected key = value");
        std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
        if (!seen.insert(key).second) throw ConfigError(key, "given twice");
        set_config_value(cfg, key, value);
    }
    if (!header) throw ConfigError("<header>", fmt::format("missing '{}'", kConfigHeader));
    validate(cfg);
    return cfg;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open " + path.string());
    return parse_config(in);
}

void validate(const ExperimentConfig& c) {
    auto require = [](bool ok, const char* key, const std::string& msg) {
        if (!ok) throw ConfigError(key, msg);
    };
    double total = 0, mean = 0;
    for (auto [k, w] : c.law) {
        require(w >= 0 && std::isfinite(w), "tree.law", "weights must be finite and non-negative");
        total += w;
        mean += k * w;
    }
    require(c.law.count(0) == 0 || c.law.at(0) == 0, "tree.law",
            "p_0 > 0 is not allowed: the tree must have no leaves");
    require(std::abs(total - 1) <= 1e-12, "tree.law", fmt::format("weights sum to {}, not 1", total));
    require(mean > 1, "tree.law", "mean offspring must exceed 1");
    require(c.d >= 2, "rates.d", "must be at least 2");
    require(c.p > 0 && std::isfinite(c.p), "rates.p", "must be positive");
    require(c.g.kind == DecayFunction::Kind::Exponential ? c.g.param > 1 : c.g.param > 0, "rates.g",
            "exp:B needs B > 1 and power:P needs P > 0");
    require(c.rate_kind != RateKind::CustomTable || !c.rate_table.empty(), "rates.table",
            "required for rates.family = table");
    require(c.lambda > 0 && std::isfinite(c.lambda), "lambda", "must be positive");
    require(c.lambda2 >= c.lambda && std::isfinite(c.lambda2), "lambda2", "must be at least lambda");
    require(c.delta > 0 && c.delta < 1, "delta", "must lie in (0, 1)");
    require(c.replicas >= 1, "replicas", "must be at least 1");
    switch (c.stop.kind) {
        case StopRule::Kind::Time: require(c.stop.T > 0 && std::isfinite(c.stop.T), "stop", "time must be positive"); break;
        default: require(c.stop.n >= 1, "stop", "particle count must be at least 1"); break;
    }
    require(c.n >= 1, "n", "must be at least 1");
    require(c.rho > 0 && c.rho < 1, "rho", "must lie in (0, 1)");
    require(c.time > 0 && std::isfinite(c.time), "time", "must be positive");
    require(c.alpha > 0, "alpha", "must be positive");
    require(c.samples >= 1, "samples", "must be at least 1");
    require(c.functions >= 1, "functions", "must be at least 1");
    require(!c.out.empty(), "out", "must not be empty");
}

std::string serialize(const ExperimentConfig& cfg) {
    std::string s = std::string(kConfigHeader) + "\n";
    for (const Field& f : fields()) s += fmt::format("{} = {}\n", f.key, f.get(cfg));
    return s;
}

std::vector<std::string> config_echo(const ExperimentConfig& cfg) {
    std::vector<std::string> lines;
    for (const Field& f : fields())
        if (std::string_view(f.key) != "out") lines.push_back(fmt::format("{} = {}", f.key, f.get(cfg)));
    return lines;
}

std::string config_hash(const ExperimentConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const std::string& line : config_echo(cfg))
        for (char ch : line + "\n") {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001b3ULL;
        }
    return fmt::format("{:016x}", h);
}

OffspringLaw make_law(const ExperimentConfig& cfg) {
    try {
        if (cfg.law.size() == 1 && cfg.law.begin()->second == 1.0) return OffspringLaw::dirac(cfg.law.begin()->first);
        return OffspringLaw::general(cfg.law);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("tree.law", e.what());
    }
}

RateFamily make_family(const ExperimentConfig& cfg, const Tree& tree) {
    switch (cfg.rate_kind) {
        case RateKind::Constant: return RateFamily::constant();
        case RateKind::ExponentialHomogeneous: return RateFamily::exponential(cfg.d);
        case RateKind::Slowed: return RateFamily::slowed(cfg.d, cfg.g);
        case RateKind::Polynomial: return RateFamily::polynomial(cfg.p);
        case RateKind::CustomTable: {
            std::ifstream in(cfg.rate_table);
            if (!in) throw ConfigError("rates.table", "cannot open " + cfg.rate_table);
            return read_rate_table(in, tree, cfg.decay);
        }
    }
    throw ConfigError("rates.family", "unsupported");
}

}  // namespace treetasep
