// Command-line front end: every verb takes a JSON config and emits a JSON
// report (stdout or --out), with optional CSV tables for the sweep and game
// verbs.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include <mldebug/experiments.hpp>

namespace {

int exit_code_for(const std::exception& e) {
    using namespace mldebug;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
        dynamic_cast<const MissingLabelColumn*>(&e))
        return 2;
    if (dynamic_cast<const SingularDesign*>(&e) ||
        dynamic_cast<const SingularSubmatrix*>(&e) ||
        dynamic_cast<const DegenerateDirection*>(&e))
        return 3;
    if (dynamic_cast<const BudgetExceeded*>(&e) ||
        dynamic_cast<const InsufficientRows*>(&e) ||
        dynamic_cast<const NonPositiveLambdaU*>(&e))
        return 4;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lasso-based label debugging for regression datasets"};
    app.require_subcommand(1);

    std::string config_path, out_path, csv_path;
    long seed = -1;
    int threads = 0;

    for (const char* verb : {"debug", "tune", "conditions", "game", "sweep"}) {
        auto* sub = app.add_subcommand(verb);
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--out", out_path, "report path (default: stdout)");
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--threads", threads, "worker threads (default: hardware)");
        if (std::string(verb) == "sweep" || std::string(verb) == "game")
            sub->add_option("--csv", csv_path, "also write a flat CSV table");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        std::ifstream f(config_path);
        if (!f.is_open()) throw mldebug::ConfigError("cannot open " + config_path);
        mldebug::json cfg = mldebug::json::parse(f);
        if (seed >= 0) {
            if (cfg.contains("data") && cfg.at("data").contains("synth"))
                cfg["data"]["synth"]["seed"] = seed;
            else
                cfg["seed"] = seed;
        }
        mldebug::json report = mldebug::run_experiment(command, cfg, threads);
        if (out_path.empty()) {
            std::cout << report.dump(2) << std::endl;
        } else {
            std::ofstream out(out_path);
            if (!out.is_open())
                throw mldebug::Error("cannot open " + out_path + " for writing");
            out << report.dump(2) << std::endl;
        }
        if (!csv_path.empty()) mldebug::write_table_csv(report, csv_path);
        return 0;
    } catch (const mldebug::json::exception& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return exit_code_for(e);
    }
}
