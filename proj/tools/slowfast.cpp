// Command-line front end: wires the library modules into config-driven
// experiments and the bundled reproduction presets, and writes plot-ready
// CSV plus a run manifest.
//
// Exit codes: 0 success, 2 config parse error, 3 validation error,
// 4 runtime blow-up (diagnostics written next to the outputs).

#include "slowfast/experiments.hpp"
#include "slowfast/version.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_override;
    std::optional<std::uint64_t> seed_override;
    unsigned threads = 0;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
    auto* opt = cmd->add_option("--config", flags.config_path, "experiment config file");
    if (config_required) opt->required();
    cmd->add_option("--out", flags.out_override, "output directory (overrides [output] dir)");
    cmd->add_option("--seed", flags.seed_override, "seed override (64-bit)");
    cmd->add_option("--threads", flags.threads, "worker threads for ensembles (0 = all cores)");
}

void write_error_diagnostics(const std::string& out_dir, const std::string& message) {
    try {
        std::filesystem::create_directories(out_dir);
        std::ofstream out(std::filesystem::path(out_dir) / "error.txt", std::ios::trunc);
        out << message << '\n';
    } catch (...) {
        // diagnostics are best effort
    }
}

int run_config_command(slowfast::ExperimentKind kind, const CommonFlags& flags) {
    using namespace slowfast;
    ExperimentConfig cfg;
    try {
        cfg = load_experiment_config(flags.config_path, kind);
        if (!flags.out_override.empty()) cfg.out_dir = flags.out_override;
        if (flags.seed_override) cfg.integrator.seed = *flags.seed_override;
        if (flags.threads != 0) cfg.threads = flags.threads;
        validate_experiment_config(cfg);
    } catch (const ParseError& e) {
        std::cerr << "config parse error: " << e.what() << '\n';
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "config validation error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        const RunManifest manifest = run_experiment(cfg);
        std::cout << "wrote " << manifest.files.size() << " file(s) to " << cfg.out_dir << " in "
                  << manifest.wall_seconds << " s\n";
        return 0;
    } catch (const BlowUpError& e) {
        const std::string msg = std::string("blow-up: ") + e.what() + " (step " +
                                std::to_string(e.step) + ", t=" + std::to_string(e.time) + ")";
        std::cerr << msg << '\n';
        write_error_diagnostics(cfg.out_dir, msg);
        return 4;
    } catch (const ExperimentError& e) {
        std::cerr << "experiment failed: " << e.what() << '\n';
        write_error_diagnostics(cfg.out_dir, e.what());
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        write_error_diagnostics(cfg.out_dir, e.what());
        return 4;
    }
}

}  // namespace

int main(int argc, char** argv) {
    using namespace slowfast;

    CLI::App app{"two-scale Lorenz laboratory"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    CommonFlags flags;
    std::string preset_name, scale_name = "desk";

    auto* c_calibrate = app.add_subcommand("calibrate", "rescaling constants of uncoupled L96");
    auto* c_simulate = app.add_subcommand("simulate", "sampled two-scale trajectory");
    auto* c_divergence = app.add_subcommand("divergence", "ensemble divergence experiment");
    auto* c_response = app.add_subcommand("response", "quasi-Gaussian response diagnostic");
    auto* c_stats = app.add_subcommand("stats", "moments, PDFs and autocorrelations");
    auto* c_energy = app.add_subcommand("energy-check", "conservation of E = E_x + eps E_y");
    auto* c_reproduce = app.add_subcommand("reproduce", "bundled parameter-set reproductions");

    for (auto* cmd : {c_calibrate, c_simulate, c_divergence, c_response, c_stats, c_energy})
        add_common_flags(cmd, flags);

    c_reproduce->add_option("preset", preset_name, "table1 | table2 | fig2 | fig4")->required();
    c_reproduce->add_option("--scale", scale_name, "paper | desk (default desk)");
    c_reproduce->add_option("--out", flags.out_override, "output directory")->required();
    c_reproduce->add_option("--seed", flags.seed_override, "seed override (64-bit)");
    c_reproduce->add_option("--threads", flags.threads, "worker threads (0 = all cores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        std::cerr << e.what() << '\n';
        return 2;
    }

    if (c_calibrate->parsed()) return run_config_command(ExperimentKind::calibrate, flags);
    if (c_simulate->parsed()) return run_config_command(ExperimentKind::simulate, flags);
    if (c_divergence->parsed()) return run_config_command(ExperimentKind::divergence, flags);
    if (c_response->parsed()) return run_config_command(ExperimentKind::response, flags);
    if (c_stats->parsed()) return run_config_command(ExperimentKind::stats, flags);
    if (c_energy->parsed()) return run_config_command(ExperimentKind::energy_check, flags);

    // reproduce
    const auto preset = preset_from(preset_name);
    if (!preset) {
        std::cerr << "unknown preset '" << preset_name << "'\n";
        return 3;
    }
    const auto scale = scale_from(scale_name);
    if (!scale) {
        std::cerr << "unknown scale '" << scale_name << "'\n";
        return 3;
    }
    const unsigned threads = flags.threads == 0 ? default_threads() : flags.threads;
    try {
        const RunManifest manifest = run_reproduce(*preset, *scale, flags.out_override,
                                                   flags.seed_override.value_or(0), threads);
        std::cout << "wrote " << manifest.files.size() << " file(s) to " << flags.out_override
                  << " in " << manifest.wall_seconds << " s\n";
        return 0;
    } catch (const BlowUpError& e) {
        std::cerr << "blow-up: " << e.what() << '\n';
        write_error_diagnostics(flags.out_override, e.what());
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        write_error_diagnostics(flags.out_override, e.what());
        return 4;
    }
}
