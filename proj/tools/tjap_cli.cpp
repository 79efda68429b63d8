// tjap: run transfer joint assortment-pricing experiments.
//
//   tjap run <config.json> [--parallel N] [--out DIR] [--quiet]
//   tjap verify <outdir>
//   tjap print-default-config

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tjap/harness.hpp"

namespace {

int env_threads() {
    const char* v = std::getenv("TJAP_THREADS");
    if (!v || !*v) return 0;
    try {
        return std::max(0, std::stoi(v));
    } catch (...) {
        return 0;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transfer joint assortment-pricing experiment harness"};
    app.require_subcommand(1);
    app.set_version_flag("--version", TJAP_VERSION_STRING);

    std::string config_path, out_override, verify_dir;
    int parallel = 0;
    bool quiet = false;

    auto* run = app.add_subcommand("run", "Run every (algorithm, H, repetition) cell of a config");
    run->add_option("config", config_path, "JSON config file")->required();
    run->add_option("--parallel", parallel, "Worker threads (TJAP_THREADS overrides)")->check(CLI::PositiveNumber);
    run->add_option("--out", out_override, "Output directory (overrides output_dir)");
    run->add_flag("--quiet", quiet, "No per-cell progress");

    auto* verify = app.add_subcommand("verify", "Recompute aggregate.csv from the per-run CSVs");
    verify->add_option("outdir", verify_dir, "Result directory")->required();

    app.add_subcommand("print-default-config", "Print the default config as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (app.got_subcommand("print-default-config")) {
        std::cout << tjap::default_config_json().dump(2) << '\n';
        return 0;
    }

    if (app.got_subcommand("verify")) {
        const auto report = tjap::verify_results(verify_dir);
        for (const auto& p : report.problems) std::cerr << "verify: " << p << '\n';
        if (report.ok) std::cout << "verify: aggregate matches per-run CSVs\n";
        return report.ok ? 0 : 1;
    }

    tjap::RunConfig cfg;
    try {
        cfg = tjap::load_run_config(config_path);
    } catch (const tjap::ConfigError& e) {
        std::cerr << config_path << ": " << e.what() << '\n';
        return 2;
    }
    int workers = cfg.parallelism;
    if (parallel > 0) workers = parallel;
    if (const int env = env_threads(); env > 0) workers = env;
    const std::filesystem::path out = out_override.empty() ? cfg.output_dir : out_override;

    std::function<void(const std::string&)> log;
    if (!quiet) log = [](const std::string& line) { std::cerr << line << '\n'; };
    try {
        const auto res = tjap::run_experiment(cfg, out, workers, log);
        if (!quiet)
            std::cerr << res.cells.size() << " cells in " << tjap::format_g9(res.wall_clock_seconds) << " s, output in "
                      << out.string() << '\n';
        return res.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
