#include <iostream>

#include <CLI11.hpp>

#include "treetasep/cli.hpp"

int main(int argc, char** argv) {
    using namespace treetasep;
    CLI::App app{"TASEP on trees: simulation, bounds, couplings and equilibrium checks"};
    std::string subcommand, config_path, out, format;
    std::optional<std::uint64_t> seed, replicas;
    std::vector<std::string> sets;
    bool print_config = false;
    app.add_option("subcommand", subcommand,
                   "simulate | disentangle | current-window | generation-window | lpp | couple | equilibrium | "
                   "classify-rates | bounds (overrides the config)");
    app.add_option("--config", config_path, "config file (first line: treetasep-config 1)");
    app.add_option("--seed", seed, "base seed");
    app.add_option("--replicas", replicas, "replica count");
    app.add_option("--out", out, "output directory");
    app.add_option("--format", format, "comma list of csv, json, svg");
    app.add_option("--set", sets, "extra key=value, applied after the config file");
    app.add_flag("--print-config", print_config, "print the resolved config and exit");
    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : parse_config_file(config_path);
        for (const std::string& kv : sets) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError(kv, "expected key=value");
            set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (!subcommand.empty()) set_config_value(cfg, "subcommand", subcommand);
        if (seed) cfg.seed = *seed;
        if (replicas) cfg.replicas = *replicas;
        if (!out.empty()) cfg.out = out;
        if (!format.empty()) set_config_value(cfg, "format", format);
        validate(cfg);
        if (print_config) {
            std::cout << serialize(cfg);
            return 0;
        }
        ExperimentOutcome o = run_experiment(cfg);
        std::cout << o.summary << '\n';
        for (const auto& f : o.files) std::cout << "  " << cfg.out << '/' << f << '\n';
        return o.ok ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
