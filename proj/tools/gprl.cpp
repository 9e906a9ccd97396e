// gprl: command-line driver for the policy-search pipeline.
//
// Exit status: 0 success, 1 usage or configuration error, 2 stage failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "gprl/pipeline.hpp"

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    std::string out = "run";
    std::optional<std::size_t> complexity;
    std::optional<std::string> policy;
    double setpoint = 358;
};

gprl::RunConfig resolve_config(const Options& o) {
    gprl::RunConfig c = o.config.empty() ? gprl::RunConfig{} : gprl::load_run_config(o.config);
    if (o.seed) c.seed = o.seed;
    c.validate();
    if (!c.seed) throw gprl::Error("a seed is required (config \"seed\" or --seed)");
    return c;
}

std::optional<std::filesystem::path> policy_path(const Options& o) {
    if (!o.policy) return std::nullopt;
    return std::filesystem::path(*o.policy);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interpretable setpoint policies for a semi-batch reactor via genetic programming"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config, "JSON run configuration (defaults: desk scale)")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "master seed, overrides the config");
    app.add_option("--workers", o.workers, "worker threads; results do not depend on this")
        ->check(CLI::PositiveNumber);
    app.add_option("--out", o.out, "output directory");

    auto* simulate = app.add_subcommand("simulate", "run one batch and dump its trajectory");
    simulate->add_option("--setpoint", o.setpoint, "intended setpoint S in K")->check(CLI::Range(352.0, 365.0));
    simulate->add_option("--policy", o.policy, "policy file; default policy T^ = S when omitted");
    auto* gen = app.add_subcommand("gen-data", "simulate exploration batches into a dataset");
    auto* trainc = app.add_subcommand("train-surrogate", "fit the recurrent surrogate");
    auto* evolvec = app.add_subcommand("evolve", "evolve policies against the surrogate");
    auto* select = app.add_subcommand("select", "extract one policy from the Pareto archive");
    select->add_option("--complexity", o.complexity, "archive level; default: best front point within the limit");
    auto* codegen = app.add_subcommand("codegen", "emit structured text for the selected policy");
    codegen->add_option("--policy", o.policy, "policy file instead of the selected one");
    auto* evaluate = app.add_subcommand("evaluate", "compare the policy with T^ = S on the simulator");
    evaluate->add_option("--policy", o.policy, "policy file instead of the selected one");
    auto* all = app.add_subcommand("all", "run every stage in order");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    gprl::RunConfig cfg;
    try {
        cfg = resolve_config(o);
    } catch (const std::exception& e) {
        std::cerr << "gprl: " << e.what() << '\n';
        return 1;
    }

    const gprl::Workspace ws{o.out};
    auto& log = std::cerr;
    try {
        if (*simulate) gprl::stage_simulate(cfg, ws, o.setpoint, policy_path(o), log);
        else if (*gen) gprl::stage_gen_data(cfg, ws, log);
        else if (*trainc) gprl::stage_train(cfg, ws, o.workers, log);
        else if (*evolvec) gprl::stage_evolve(cfg, ws, o.workers, log);
        else if (*select) gprl::stage_select(cfg, ws, o.complexity, log);
        else if (*codegen) gprl::stage_codegen(cfg, ws, policy_path(o), log);
        else if (*evaluate) gprl::stage_evaluate(cfg, ws, policy_path(o), o.workers, log);
        else if (*all) gprl::stage_all(cfg, ws, o.workers, log);
    } catch (const std::exception& e) {
        std::cerr << "gprl: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
