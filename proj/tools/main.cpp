#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "subbench/error.hpp"
#include "subbench/pipeline.hpp"
#include "subbench/toy.hpp"

namespace fs = std::filesystem;
using namespace subbench;

namespace {

enum ExitCode { kClean = 0, kFailed = 1, kUsage = 2, kWarnings = 3 };

struct Options {
    std::string config;
    std::string preset;
    std::string out_dir = "out";
    long long seed = -1;
    bool quiet = false;
};

ExperimentConfig resolve(const Options& o) {
    ExperimentConfig cfg = o.config.empty() ? preset_config(o.preset.empty() ? "desk" : o.preset)
                                            : load_experiment_config(o.config, o.preset);
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic-for-real substitution benchmark"};
    app.require_subcommand(1);
    Options opt;
    app.add_option("-c,--config", opt.config, "Experiment config file (YAML)")->check(CLI::ExistingFile);
    app.add_option("--preset", opt.preset, "Built-in defaults")->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--seed", opt.seed, "Override the experiment seed")->check(CLI::NonNegativeNumber);
    app.add_option("--out-dir", opt.out_dir, "Output directory");
    app.add_flag("-q,--quiet", opt.quiet, "Only print warnings and errors");

    std::string format = "both";
    auto* ingest = app.add_subcommand("ingest", "Catalog the source images (or write the procedural corpus)");
    auto* preprocess = app.add_subcommand("preprocess", "Normalise, tile and resize; assign splits");
    auto* train = app.add_subcommand("train-gan", "Train the generators, one checkpoint per epoch");
    auto* montage = app.add_subcommand("montage", "Write a sample grid for every checkpoint");
    auto* generate = app.add_subcommand("generate", "Sample synthetic training images from the chosen checkpoints");
    auto* triage = app.add_subcommand("triage", "Reject degenerate samples by average-hash distance");
    auto* features = app.add_subcommand("features", "Export LBP descriptors as CSV");
    auto* benchmark = app.add_subcommand("benchmark", "Train on real vs synthetic, score on real test images");
    auto* report = app.add_subcommand("report", "Render the results table");
    report->add_option("--format", format, "Output format")->check(CLI::IsMember({"markdown", "csv", "both"}));
    auto* run = app.add_subcommand("run", "Every stage in order");
    auto* show = app.add_subcommand("show-config", "Print the resolved configuration as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kClean : kUsage;
    }

    Diagnostics diag;
    const auto t0 = std::chrono::steady_clock::now();
    diag.sink = [&](const std::string& msg) {
        const bool warning = msg.rfind("warning:", 0) == 0;
        if (opt.quiet && !warning) return;
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::fprintf(stderr, "[%7.1fs] %s\n", s, msg.c_str());
    };

    try {
        const ExperimentConfig cfg = resolve(opt);
        const fs::path out = opt.out_dir;
        if (show->parsed()) {
            std::cout << cfg.to_json().dump(2) << "\n";
            return kClean;
        }
        fs::create_directories(out);
        if (ingest->parsed()) stage_ingest(cfg, out, diag);
        if (preprocess->parsed()) stage_preprocess(cfg, out, diag);
        if (train->parsed()) stage_train_gan(cfg, out, diag);
        if (montage->parsed()) stage_montage(cfg, out, diag);
        if (generate->parsed()) stage_generate(cfg, out, diag);
        if (triage->parsed()) stage_triage(cfg, out, diag);
        if (features->parsed()) stage_features(cfg, out, diag);
        if (benchmark->parsed()) stage_benchmark(cfg, out, diag);
        if (report->parsed()) {
            const auto paths = stage_report(cfg, out, diag);
            if (format != "csv") std::cout << read_file(paths[0]);
            if (format == "csv") std::cout << read_file(paths[1]);
        }
        if (run->parsed()) {
            const Report r = run_pipeline(cfg, out, diag);
            std::cout << render_report(r, ReportFormat::Markdown);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kUsage;
    } catch (const LeakageError& e) {
        std::fprintf(stderr, "leakage error: %s\n", e.what());
        return kFailed;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailed;
    }
    if (!diag.clean()) {
        std::fprintf(stderr, "finished with %zu warning(s)\n", diag.warnings().size());
        return kWarnings;
    }
    return kClean;
}
