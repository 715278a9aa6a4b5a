#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedskd/config.hpp"
#include "fedskd/errors.hpp"
#include "fedskd/experiment.hpp"

namespace fs = std::filesystem;
using namespace fedskd;

namespace {

ExperimentConfig resolve(const std::string& path, const std::vector<std::string>& overrides) {
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
    apply_overrides(cfg, overrides);
    cfg.validate();
    return cfg;
}

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NonFiniteLossError& e) {
        std::cerr << "non-finite loss: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated similarity-distillation lab"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::size_t workers = 1;
    bool quiet = false;

    auto* run = app.add_subcommand("run", "Run one experiment");
    run->add_option("config", config_path, "Config file (key = value)");
    run->add_option("--set", overrides, "Override a key: --set key=value")->take_all();
    run->add_option("--workers", workers, "Parallel client workers")->check(CLI::PositiveNumber);
    run->add_flag("--quiet", quiet, "No per-round progress");

    std::string axis;
    auto* ablate = app.add_subcommand("ablate", "Sweep one ablation axis");
    ablate->add_option("axis", axis, "components | layers | timing")->required();
    ablate->add_option("config", config_path, "Base config file");
    ablate->add_option("--set", overrides, "Override a key: --set key=value")->take_all();
    ablate->add_option("--workers", workers, "Parallel client workers")->check(CLI::PositiveNumber);
    ablate->add_flag("--quiet", quiet, "No per-round progress");

    std::string run_dir;
    std::string scope = "all";
    auto* evaluate = app.add_subcommand("evaluate", "Recompute metrics from a run directory");
    evaluate->add_option("run_dir", run_dir, "Run directory")->required();
    evaluate->add_option("--scope", scope, "all | local | global");

    CLI11_PARSE(app, argc, argv);

    if (*run) {
        return guarded([&] {
            const auto cfg = resolve(config_path, overrides);
            RunOptions opts;
            opts.workers = workers;
            opts.log = quiet ? nullptr : &std::cerr;
            const auto dir = make_run_dir(output_root(cfg), cfg);
            const auto result = run_experiment(cfg, opts);
            write_run(dir, cfg, result);
            print_summary(std::cout, result.rows);
            std::cout << "run directory: " << dir.string() << "\n";
            return 0;
        });
    }
    if (*ablate) {
        return guarded([&] {
            const auto a = parse_axis(axis);
            const auto cfg = resolve(config_path, overrides);
            RunOptions opts;
            opts.workers = workers;
            opts.log = quiet ? nullptr : &std::cerr;
            const auto dir = make_run_dir(output_root(cfg), cfg);
            run_ablation(dir, a, cfg, opts);
            std::cout << "ablation directory: " << dir.string() << "\n";
            return 0;
        });
    }
    return guarded([&] {
        const auto rows = evaluate_run(run_dir, parse_scope(scope));
        std::cout << metrics_csv_header() << "\n";
        for (const auto& r : rows) std::cout << format_metric_row(r) << "\n";
        return 0;
    });
}
