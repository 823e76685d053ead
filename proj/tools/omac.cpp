// Command-line front end: benchmark runs, invariant check suites, and
// plot-data export.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "omac/checks.hpp"
#include "omac/harness.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::vector<std::uint64_t>& seeds,
            const std::string& out_dir) {
    omac::ExperimentConfig cfg = omac::load_config(config_path);
    if (!seeds.empty()) cfg.seeds = seeds;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    cfg.validate();

    const omac::BenchmarkReport report = omac::run_benchmark(cfg);
    omac::write_report(report, cfg.output_dir);

    std::printf("%-22s %12s %12s %6s\n", "controller", "ACE mean", "ACE std", "seeds");
    for (const auto& s : report.summaries) {
        std::printf("%-22s %12.6f %12.6f %3d/%zu\n", s.name.c_str(), s.ace_mean, s.ace_std,
                    s.completed_seeds, cfg.seeds.size());
        if (s.diverged_seeds > 0)
            std::printf("%-22s   (%d diverged seed(s) recorded as failures)\n", "",
                        s.diverged_seeds);
    }
    const bool ok = omac::print_check_ledger(report.checks, std::cout);
    std::printf("report written to %s\n", cfg.output_dir.c_str());
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OMAC meta-adaptive control benchmark suite"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run a benchmark from a config file");
    std::string config_path;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    run->add_option("--config", config_path, "experiment config (JSON)")->required();
    run->add_option("--seeds", seeds, "override seed list")->delimiter(',');
    run->add_option("--out", out_dir, "override output directory");

    auto* check = app.add_subcommand("check", "run an invariant check suite");
    std::string suite = "all";
    check->add_option("--suite", suite, "all|lemma1|regret|ridge")->required();

    auto* exp = app.add_subcommand("export", "export plot data from a report directory");
    std::string report_dir;
    std::string export_path;
    exp->add_option("--report", report_dir, "directory written by `run`")->required();
    exp->add_option("--out", export_path, "output CSV path (default <report>/plot_data.csv)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, seeds, out_dir);
        if (check->parsed()) {
            const auto results = omac::run_check_suite(suite);
            return omac::print_check_ledger(results, std::cout) ? 0 : 1;
        }
        if (exp->parsed()) {
            if (export_path.empty()) export_path = report_dir + "/plot_data.csv";
            omac::export_plot_data(report_dir, export_path);
            std::printf("plot data written to %s\n", export_path.c_str());
            return 0;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
