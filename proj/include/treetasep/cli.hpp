#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "treetasep/engine.hpp"
#include "treetasep/rate_field.hpp"

namespace treetasep {

enum class Subcommand {
    Simulate,
    Disentangle,
    CurrentWindow,
    GenerationWindow,
    Lpp,
    Couple,
    Equilibrium,
    ClassifyRates,
    Bounds
};

std::string to_string(Subcommand s);
std::optional<Subcommand> parse_subcommand(const std::string& s);

// Flat key = value config. Every key has a default, so a file may list any
// subset; serialize() always writes all of them. See README for the schema.
struct ExperimentConfig {
    Subcommand subcommand = Subcommand::Simulate;
    std::map<unsigned, double> law{{2, 1.0}};  // tree.law
    std::uint64_t tree_seed = 0;

    RateKind rate_kind = RateKind::Constant;
    unsigned d = 3;
    double p = 1.0;
    DecayFunction g;
    std::string rate_table;  // path, for rates.family = table
    std::optional<DecayClass> decay;

    double lambda = 1.0;
    double lambda2 = 2.0;  // second reservoir of the canonical coupling
    double delta = 0.1;
    std::uint64_t seed = 1;
    std::uint64_t replicas = 1;
    StopRule stop = StopRule::time(10);
    ClockMode clock = ClockMode::NextReaction;

    std::uint64_t n = 16;
    std::uint64_t m = 0;
    std::uint32_t depth = 2;
    double rho = 0.5;
    double time = 10;
    double alpha = 1.0;
    std::uint64_t samples = 100;
    std::uint64_t functions = 200;

    std::string out = "out";
    std::vector<std::string> formats{"csv", "json"};

    bool wants(const std::string& format) const;
    bool operator==(const ExperimentConfig& o) const;
};

inline constexpr const char* kConfigHeader = "treetasep-config 1";

class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& key, const std::string& message)
        : std::invalid_argument("config: " + key + ": " + message), key(key) {}
    std::string key;
};

ExperimentConfig parse_config(std::istream& is);
ExperimentConfig parse_config_file(const std::filesystem::path& path);
// Applies one "key=value" (or key, value) on top of a config; same validation as a file.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
void validate(const ExperimentConfig& cfg);
std::string serialize(const ExperimentConfig& cfg);

// FNV-1a over the serialized config without the `out` line, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);
// The lines echoed at the top of every output file.
std::vector<std::string> config_echo(const ExperimentConfig& cfg);

OffspringLaw make_law(const ExperimentConfig& cfg);
// Custom tables are read from cfg.rate_table against `tree`.
RateFamily make_family(const ExperimentConfig& cfg, const Tree& tree);

struct ExperimentOutcome {
    bool ok = true;                   // every check of the run passed
    std::vector<std::string> files;   // written, relative to cfg.out
    std::string summary;              // one line for the terminal
};

// Writes into cfg.out (created if missing). Module errors propagate as exceptions.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg);

// Runs f(0..count-1) on up to `threads` workers (0 = hardware concurrency).
void parallel_for(std::uint64_t count, const std::function<void(std::uint64_t)>& f, unsigned threads = 0);

struct SvgSeries {
    std::string label;
    std::vector<double> x, y;
};
void write_svg_chart(std::ostream& os, const std::string& title, const std::string& xlabel, const std::string& ylabel,
                     const std::vector<SvgSeries>& series, const std::vector<std::string>& header);

}  // namespace treetasep
