#include "ivr/experiments.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Offline RL lab: exact regularized solver, in-sample learners and experiment protocols"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir = "out";
    std::int64_t seed = -1;
    int jobs = 1;
    app.add_option("--config", config_path, "config file with [section] key = value entries");
    app.add_option("--out", out_dir, "output directory")->capture_default_str();
    app.add_option("--seed", seed, "root seed; replaces the configured seed list")->check(CLI::NonNegativeNumber);
    app.add_option("--jobs", jobs, "parallel runs")->check(CLI::PositiveNumber)->capture_default_str();

    const char* commands[][2] = {
        {"solve", "exact regularized solution with KKT report"},
        {"fourrooms", "Four Rooms comparison across seeds"},
        {"noisy", "expert/random mixtures at several expert ratios"},
        {"smalldata", "distance-discarded datasets at several hardness levels"},
        {"toy", "extrema estimation on noisy sine samples"},
        {"sweep", "temperature sweep with non-sparsity ratio"},
        {"train", "single training run with metrics trace"},
    };
    for (const auto& c : commands) app.add_subcommand(c[0], c[1]);

    CLI11_PARSE(app, argc, argv);

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        ivr::CommandOptions options;
        if (!config_path.empty()) options.config = ivr::Config::load(config_path);
        options.out = out_dir;
        if (seed >= 0) options.seed = static_cast<std::uint64_t>(seed);
        options.jobs = jobs;
        return ivr::run_command(name, options, std::cout);
    } catch (const ivr::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const ivr::ConvergenceError& e) {
        std::cerr << "convergence error: " << e.what() << "\n";
        return 3;
    } catch (const ivr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
