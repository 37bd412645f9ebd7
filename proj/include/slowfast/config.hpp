#pragma once

#include "slowfast/calibrate.hpp"
#include "slowfast/common.hpp"
#include "slowfast/integrate.hpp"
#include "slowfast/stats.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace slowfast {

// ---------------------------------------------------------------------------
// Flat key=value config with [section] headers. Grammar:
//   line    := blank | '#' comment | '[' section ']' | key '=' value
//   section := model | integrator | experiment | output
//   key     := [a-z0-9_]+          value := rest of line, trimmed
// No nesting, no quoting. Unknown sections or keys are parse errors that
// name the offender; semantic problems are validation errors.
// ---------------------------------------------------------------------------

enum class ExperimentKind { calibrate, simulate, divergence, response, stats, energy_check };

inline std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::calibrate: return "calibrate";
        case ExperimentKind::simulate: return "simulate";
        case ExperimentKind::divergence: return "divergence";
        case ExperimentKind::response: return "response";
        case ExperimentKind::stats: return "stats";
        case ExperimentKind::energy_check: return "energy-check";
    }
    return "?";
}

inline std::optional<ExperimentKind> experiment_kind_from(const std::string& s) {
    if (s == "calibrate") return ExperimentKind::calibrate;
    if (s == "simulate") return ExperimentKind::simulate;
    if (s == "divergence") return ExperimentKind::divergence;
    if (s == "response") return ExperimentKind::response;
    if (s == "stats") return ExperimentKind::stats;
    if (s == "energy-check") return ExperimentKind::energy_check;
    return std::nullopt;
}

struct ModelBlock {
    int n_x = 10;
    int j = 4;
    double f_x = 6.0;
    double f_y = 6.0;
    double lambda_x = 0.25;
    double lambda_y = 0.25;
    double epsilon = 0.01;
    /// Calibration cache path; empty means "<out_dir>/calibration_cache.txt".
    std::string calib_cache;
    CalibrationSettings calib;
};

struct CalibrateExp {
    double f = 6.0;
    int n = 10;
    double dt = 1e-3;
    double t_total = 5000.0;
    double t_spinup = 100.0;
    std::uint64_t seed = 1;
};

struct SimulateExp {
    double t_len = 100.0;
    double t_spinup = 200.0;
    bool store_fast = false;
};

struct DivergenceExp {
    DivergenceProtocol proto;
    std::vector<double> f_y_values;  // empty = use model.f_y only
    bool include_uncoupled = false;
};

struct ResponseExp {
    double t_run = 2000.0;
    double t_spinup = 100.0;
    double dt_sample = 1e-3;
    double max_lag_cap = 50.0;
    double norm_threshold = 0.02;
    Index origin_stride = 0;
    /// coupled-mean | zero | a numeric value applied to all coordinates
    std::string base_x = "coupled-mean";
    double t_mean_run = 500.0;
};

struct StatsExp {
    double t_len = 2000.0;
    double t_spinup = 200.0;
    int n_bins = 100;
    double pdf_lo = -5.0;
    double pdf_hi = 5.0;
    double acf_max_lag = 10.0;
};

struct EnergyExp {
    double t_len = 1.0;
};

struct ExperimentConfig {
    ModelBlock model;
    IntegratorConfig integrator;
    unsigned threads = 0;  // 0 = hardware default
    ExperimentKind kind = ExperimentKind::simulate;
    CalibrateExp calibrate;
    SimulateExp simulate;
    DivergenceExp divergence;
    ResponseExp response;
    StatsExp stats;
    EnergyExp energy;
    std::string out_dir = "out";
};

namespace detail {

struct ConfigEntry {
    std::string section;
    std::string key;
    std::string value;
    std::size_t line;
};

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::vector<ConfigEntry> tokenize_config(const std::string& text) {
    std::vector<ConfigEntry> entries;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ParseError(line_no, "unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section != "model" && section != "integrator" && section != "experiment" &&
                section != "output")
                throw ParseError(line_no, "unknown section [" + section + "]");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ParseError(line_no, "expected key=value, got '" + t + "'");
        if (section.empty()) throw ParseError(line_no, "key outside of any [section]");
        ConfigEntry e;
        e.section = section;
        e.key = trim(t.substr(0, eq));
        e.value = trim(t.substr(eq + 1));
        e.line = line_no;
        if (e.key.empty()) throw ParseError(line_no, "empty key");
        entries.push_back(std::move(e));
    }
    return entries;
}

inline double parse_double(const ConfigEntry& e) {
    char* end = nullptr;
    const double v = std::strtod(e.value.c_str(), &end);
    if (end == e.value.c_str() || *end != '\0')
        throw ParseError(e.line, "key '" + e.key + "': not a number: '" + e.value + "'");
    return v;
}

inline long long parse_int(const ConfigEntry& e) {
    char* end = nullptr;
    const long long v = std::strtoll(e.value.c_str(), &end, 10);
    if (end == e.value.c_str() || *end != '\0')
        throw ParseError(e.line, "key '" + e.key + "': not an integer: '" + e.value + "'");
    return v;
}

inline std::uint64_t parse_u64(const ConfigEntry& e) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(e.value.c_str(), &end, 10);
    if (end == e.value.c_str() || *end != '\0')
        throw ParseError(e.line, "key '" + e.key + "': not an unsigned integer");
    return v;
}

inline bool parse_bool(const ConfigEntry& e) {
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    throw ParseError(e.line, "key '" + e.key + "': expected true/false");
}

inline std::vector<double> parse_double_list(const ConfigEntry& e) {
    std::vector<double> out;
    std::istringstream in(e.value);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        const std::string t = trim(tok);
        char* end = nullptr;
        const double v = std::strtod(t.c_str(), &end);
        if (end == t.c_str() || *end != '\0')
            throw ParseError(e.line, "key '" + e.key + "': bad list element '" + t + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ParseError(e.line, "key '" + e.key + "': empty list");
    return out;
}

inline const std::set<std::string>& experiment_keys(ExperimentKind kind) {
    static const std::map<ExperimentKind, std::set<std::string>> keys = {
        {ExperimentKind::calibrate, {"kind", "f", "n", "dt", "t_total", "t_spinup", "seed"}},
        {ExperimentKind::simulate, {"kind", "t_len", "t_spinup", "store_fast"}},
        {ExperimentKind::divergence,
         {"kind", "n_members", "t_spinup", "t_spacing", "t_horizon", "delta", "window",
          "dt_profile", "f_y_values", "include_uncoupled"}},
        {ExperimentKind::response,
         {"kind", "t_run", "t_spinup", "dt_sample", "max_lag", "norm_threshold", "origin_stride",
          "base_x", "t_mean_run"}},
        {ExperimentKind::stats,
         {"kind", "t_len", "t_spinup", "n_bins", "pdf_lo", "pdf_hi", "acf_max_lag"}},
        {ExperimentKind::energy_check, {"kind", "t_len"}},
    };
    return keys.at(kind);
}

}  // namespace detail

inline void validate_experiment_config(const ExperimentConfig& cfg);

/// Parses and validates a config. `expected_kind` comes from the CLI
/// subcommand; a config whose experiment.kind disagrees is a validation
/// error. Unknown keys anywhere are parse errors naming the key.
inline ExperimentConfig parse_experiment_config(
    const std::string& text, std::optional<ExperimentKind> expected_kind = std::nullopt) {
    const auto entries = detail::tokenize_config(text);

    // The experiment key set depends on the kind, so resolve it first.
    ExperimentKind kind = expected_kind.value_or(ExperimentKind::simulate);
    bool kind_seen = false;
    for (const auto& e : entries) {
        if (e.section == "experiment" && e.key == "kind") {
            const auto k = experiment_kind_from(e.value);
            if (!k) throw ParseError(e.line, "unknown experiment kind '" + e.value + "'");
            kind = *k;
            kind_seen = true;
        }
    }
    if (!expected_kind && !kind_seen)
        throw ValidationError("config does not name an experiment kind");
    if (expected_kind && kind_seen && kind != *expected_kind)
        throw ValidationError("config experiment kind '" + to_string(kind) +
                              "' does not match the requested '" + to_string(*expected_kind) + "'");

    static const std::set<std::string> model_keys = {
        "n_x",      "j",           "f_x",      "f_y",           "lambda_x",
        "lambda_y", "epsilon",     "calib_cache", "calib_dt",   "calib_t_total",
        "calib_t_spinup", "calib_seed"};
    static const std::set<std::string> integrator_keys = {"dt", "sample_stride", "seed", "threads"};
    static const std::set<std::string> output_keys = {"dir"};

    ExperimentConfig cfg;
    cfg.kind = kind;
    const auto& exp_keys = detail::experiment_keys(kind);

    for (const auto& e : entries) {
        if (e.section == "model") {
            if (!model_keys.count(e.key))
                throw ParseError(e.line, "unknown key '" + e.key + "' in [model]");
            if (e.key == "n_x") cfg.model.n_x = static_cast<int>(detail::parse_int(e));
            else if (e.key == "j") cfg.model.j = static_cast<int>(detail::parse_int(e));
            else if (e.key == "f_x") cfg.model.f_x = detail::parse_double(e);
            else if (e.key == "f_y") cfg.model.f_y = detail::parse_double(e);
            else if (e.key == "lambda_x") cfg.model.lambda_x = detail::parse_double(e);
            else if (e.key == "lambda_y") cfg.model.lambda_y = detail::parse_double(e);
            else if (e.key == "epsilon") cfg.model.epsilon = detail::parse_double(e);
            else if (e.key == "calib_cache") cfg.model.calib_cache = e.value;
            else if (e.key == "calib_dt") cfg.model.calib.dt = detail::parse_double(e);
            else if (e.key == "calib_t_total") cfg.model.calib.t_total = detail::parse_double(e);
            else if (e.key == "calib_t_spinup") cfg.model.calib.t_spinup = detail::parse_double(e);
            else if (e.key == "calib_seed") cfg.model.calib.seed = detail::parse_u64(e);
        } else if (e.section == "integrator") {
            if (!integrator_keys.count(e.key))
                throw ParseError(e.line, "unknown key '" + e.key + "' in [integrator]");
            if (e.key == "dt") cfg.integrator.dt = detail::parse_double(e);
            else if (e.key == "sample_stride")
                cfg.integrator.sample_stride = static_cast<int>(detail::parse_int(e));
            else if (e.key == "seed") cfg.integrator.seed = detail::parse_u64(e);
            else if (e.key == "threads") cfg.threads = static_cast<unsigned>(detail::parse_int(e));
        } else if (e.section == "output") {
            if (!output_keys.count(e.key))
                throw ParseError(e.line, "unknown key '" + e.key + "' in [output]");
            cfg.out_dir = e.value;
        } else if (e.section == "experiment") {
            if (!exp_keys.count(e.key))
                throw ParseError(e.line, "unknown key '" + e.key + "' in [experiment] for kind '" +
                                             to_string(kind) + "'");
            if (e.key == "kind") continue;
            switch (kind) {
                case ExperimentKind::calibrate:
                    if (e.key == "f") cfg.calibrate.f = detail::parse_double(e);
                    else if (e.key == "n") cfg.calibrate.n = static_cast<int>(detail::parse_int(e));
                    else if (e.key == "dt") cfg.calibrate.dt = detail::parse_double(e);
                    else if (e.key == "t_total") cfg.calibrate.t_total = detail::parse_double(e);
                    else if (e.key == "t_spinup") cfg.calibrate.t_spinup = detail::parse_double(e);
                    else if (e.key == "seed") cfg.calibrate.seed = detail::parse_u64(e);
                    break;
                case ExperimentKind::simulate:
                    if (e.key == "t_len") cfg.simulate.t_len = detail::parse_double(e);
                    else if (e.key == "t_spinup") cfg.simulate.t_spinup = detail::parse_double(e);
                    else if (e.key == "store_fast") cfg.simulate.store_fast = detail::parse_bool(e);
                    break;
                case ExperimentKind::divergence:
                    if (e.key == "n_members")
                        cfg.divergence.proto.n_members = static_cast<int>(detail::parse_int(e));
                    else if (e.key == "t_spinup")
                        cfg.divergence.proto.t_spinup = detail::parse_double(e);
                    else if (e.key == "t_spacing")
                        cfg.divergence.proto.t_spacing = detail::parse_double(e);
                    else if (e.key == "t_horizon")
                        cfg.divergence.proto.t_horizon = detail::parse_double(e);
                    else if (e.key == "delta") cfg.divergence.proto.delta = detail::parse_double(e);
                    else if (e.key == "window")
                        cfg.divergence.proto.window = detail::parse_double(e);
                    else if (e.key == "dt_profile")
                        cfg.divergence.proto.dt_profile = detail::parse_double(e);
                    else if (e.key == "f_y_values")
                        cfg.divergence.f_y_values = detail::parse_double_list(e);
                    else if (e.key == "include_uncoupled")
                        cfg.divergence.include_uncoupled = detail::parse_bool(e);
                    break;
                case ExperimentKind::response:
                    if (e.key == "t_run") cfg.response.t_run = detail::parse_double(e);
                    else if (e.key == "t_spinup") cfg.response.t_spinup = detail::parse_double(e);
                    else if (e.key == "dt_sample") cfg.response.dt_sample = detail::parse_double(e);
                    else if (e.key == "max_lag") cfg.response.max_lag_cap = detail::parse_double(e);
                    else if (e.key == "norm_threshold")
                        cfg.response.norm_threshold = detail::parse_double(e);
                    else if (e.key == "origin_stride")
                        cfg.response.origin_stride = detail::parse_int(e);
                    else if (e.key == "base_x") cfg.response.base_x = e.value;
                    else if (e.key == "t_mean_run")
                        cfg.response.t_mean_run = detail::parse_double(e);
                    break;
                case ExperimentKind::stats:
                    if (e.key == "t_len") cfg.stats.t_len = detail::parse_double(e);
                    else if (e.key == "t_spinup") cfg.stats.t_spinup = detail::parse_double(e);
                    else if (e.key == "n_bins")
                        cfg.stats.n_bins = static_cast<int>(detail::parse_int(e));
                    else if (e.key == "pdf_lo") cfg.stats.pdf_lo = detail::parse_double(e);
                    else if (e.key == "pdf_hi") cfg.stats.pdf_hi = detail::parse_double(e);
                    else if (e.key == "acf_max_lag")
                        cfg.stats.acf_max_lag = detail::parse_double(e);
                    break;
                case ExperimentKind::energy_check:
                    if (e.key == "t_len") cfg.energy.t_len = detail::parse_double(e);
                    break;
            }
        }
    }
    validate_experiment_config(cfg);
    return cfg;
}

inline void validate_experiment_config(const ExperimentConfig& cfg) {
    if (cfg.model.n_x < 4) throw ValidationError("model.n_x must be >= 4");
    if (cfg.model.j < 1) throw ValidationError("model.j must be >= 1");
    if (cfg.model.epsilon <= 0.0) throw ValidationError("model.epsilon must be > 0");
    if (!(cfg.integrator.dt > 0.0)) throw ValidationError("integrator.dt must be > 0");
    if (cfg.integrator.sample_stride < 1)
        throw ValidationError("integrator.sample_stride must be >= 1");
    if (cfg.out_dir.empty()) throw ValidationError("output.dir must not be empty");
    switch (cfg.kind) {
        case ExperimentKind::calibrate:
            if (cfg.calibrate.n < 4) throw ValidationError("calibrate.n must be >= 4");
            if (!(cfg.calibrate.t_total > cfg.calibrate.t_spinup) || !(cfg.calibrate.t_spinup > 0))
                throw ValidationError("calibrate needs t_total > t_spinup > 0");
            break;
        case ExperimentKind::simulate:
            if (!(cfg.simulate.t_len > 0)) throw ValidationError("simulate.t_len must be > 0");
            break;
        case ExperimentKind::divergence:
            cfg.divergence.proto.validate();
            break;
        case ExperimentKind::response:
            if (!(cfg.response.t_run > 0) || !(cfg.response.dt_sample > 0))
                throw ValidationError("response needs t_run > 0 and dt_sample > 0");
            if (cfg.response.base_x != "coupled-mean" && cfg.response.base_x != "zero") {
                char* end = nullptr;
                std::strtod(cfg.response.base_x.c_str(), &end);
                if (end == cfg.response.base_x.c_str() || *end != '\0')
                    throw ValidationError("response.base_x must be coupled-mean, zero, or a number");
            }
            break;
        case ExperimentKind::stats:
            if (cfg.stats.n_bins < 2) throw ValidationError("stats.n_bins must be >= 2");
            if (!(cfg.stats.t_len > 0)) throw ValidationError("stats.t_len must be > 0");
            break;
        case ExperimentKind::energy_check:
            if (!(cfg.energy.t_len > 0)) throw ValidationError("energy-check.t_len must be > 0");
            break;
    }
}

inline ExperimentConfig load_experiment_config(
    const std::filesystem::path& path, std::optional<ExperimentKind> expected_kind = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_experiment_config(buf.str(), expected_kind);
}

/// Canonical serialization; parsing it back yields an identical config.
inline std::string serialize(const ExperimentConfig& cfg) {
    std::ostringstream os;
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    os << "[model]\n";
    os << "n_x=" << cfg.model.n_x << "\nj=" << cfg.model.j << "\nf_x=" << num(cfg.model.f_x)
       << "\nf_y=" << num(cfg.model.f_y) << "\nlambda_x=" << num(cfg.model.lambda_x)
       << "\nlambda_y=" << num(cfg.model.lambda_y) << "\nepsilon=" << num(cfg.model.epsilon)
       << '\n';
    if (!cfg.model.calib_cache.empty()) os << "calib_cache=" << cfg.model.calib_cache << '\n';
    os << "calib_dt=" << num(cfg.model.calib.dt) << "\ncalib_t_total=" << num(cfg.model.calib.t_total)
       << "\ncalib_t_spinup=" << num(cfg.model.calib.t_spinup)
       << "\ncalib_seed=" << cfg.model.calib.seed << '\n';
    os << "[integrator]\n";
    os << "dt=" << num(cfg.integrator.dt) << "\nsample_stride=" << cfg.integrator.sample_stride
       << "\nseed=" << cfg.integrator.seed << "\nthreads=" << cfg.threads << '\n';
    os << "[experiment]\nkind=" << to_string(cfg.kind) << '\n';
    switch (cfg.kind) {
        case ExperimentKind::calibrate:
            os << "f=" << num(cfg.calibrate.f) << "\nn=" << cfg.calibrate.n
               << "\ndt=" << num(cfg.calibrate.dt) << "\nt_total=" << num(cfg.calibrate.t_total)
               << "\nt_spinup=" << num(cfg.calibrate.t_spinup) << "\nseed=" << cfg.calibrate.seed
               << '\n';
            break;
        case ExperimentKind::simulate:
            os << "t_len=" << num(cfg.simulate.t_len) << "\nt_spinup=" << num(cfg.simulate.t_spinup)
               << "\nstore_fast=" << (cfg.simulate.store_fast ? "true" : "false") << '\n';
            break;
        case ExperimentKind::divergence: {
            const auto& d = cfg.divergence;
            os << "n_members=" << d.proto.n_members << "\nt_spinup=" << num(d.proto.t_spinup)
               << "\nt_spacing=" << num(d.proto.t_spacing)
               << "\nt_horizon=" << num(d.proto.t_horizon) << "\ndelta=" << num(d.proto.delta)
               << "\nwindow=" << num(d.proto.window) << "\ndt_profile=" << num(d.proto.dt_profile)
               << '\n';
            if (!d.f_y_values.empty()) {
                os << "f_y_values=";
                for (std::size_t i = 0; i < d.f_y_values.size(); ++i)
                    os << (i ? "," : "") << num(d.f_y_values[i]);
                os << '\n';
            }
            os << "include_uncoupled=" << (d.include_uncoupled ? "true" : "false") << '\n';
            break;
        }
        case ExperimentKind::response:
            os << "t_run=" << num(cfg.response.t_run) << "\nt_spinup=" << num(cfg.response.t_spinup)
               << "\ndt_sample=" << num(cfg.response.dt_sample)
               << "\nmax_lag=" << num(cfg.response.max_lag_cap)
               << "\nnorm_threshold=" << num(cfg.response.norm_threshold)
               << "\norigin_stride=" << cfg.response.origin_stride
               << "\nbase_x=" << cfg.response.base_x
               << "\nt_mean_run=" << num(cfg.response.t_mean_run) << '\n';
            break;
        case ExperimentKind::stats:
            os << "t_len=" << num(cfg.stats.t_len) << "\nt_spinup=" << num(cfg.stats.t_spinup)
               << "\nn_bins=" << cfg.stats.n_bins << "\npdf_lo=" << num(cfg.stats.pdf_lo)
               << "\npdf_hi=" << num(cfg.stats.pdf_hi)
               << "\nacf_max_lag=" << num(cfg.stats.acf_max_lag) << '\n';
            break;
        case ExperimentKind::energy_check:
            os << "t_len=" << num(cfg.energy.t_len) << '\n';
            break;
    }
    os << "[output]\ndir=" << cfg.out_dir << '\n';
    return os.str();
}

}  // namespace slowfast
