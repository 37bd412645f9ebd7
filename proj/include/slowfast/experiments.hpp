#pragma once

#include "slowfast/calibrate.hpp"
#include "slowfast/config.hpp"
#include "slowfast/csv.hpp"
#include "slowfast/response.hpp"
#include "slowfast/stats.hpp"
#include "slowfast/version.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace slowfast {

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t file_checksum(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot checksum " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return fnv1a(buf.str());
}

/// Records what a run produced. Re-running with an identical config and
/// seeds reproduces the per-file checksums (the wall clock of course moves).
struct RunManifest {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string version = kVersion;
    double wall_seconds = 0.0;
    std::vector<std::pair<std::string, std::string>> files;  // name, checksum (hex)

    void add_file(const std::filesystem::path& dir, const std::string& name) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(file_checksum(dir / name)));
        files.emplace_back(name, buf);
    }

    void write(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
        out << "# tool_version=" << version << '\n';
        out << "# config_hash=" << config_hash << '\n';
        out << "# seed=" << seed << '\n';
        out << "# wall_seconds=" << wall_seconds << '\n';
        out << "file,checksum\n";
        for (const auto& [name, sum] : files) out << name << ',' << sum << '\n';
    }
};

namespace detail {

class WallTimer {
public:
    WallTimer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

inline std::string hash_hex(const std::string& text) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(text)));
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model resolution
// ---------------------------------------------------------------------------

inline std::filesystem::path calib_cache_path(const ExperimentConfig& cfg) {
    if (!cfg.model.calib_cache.empty()) return cfg.model.calib_cache;
    return std::filesystem::path(cfg.out_dir) / "calibration_cache.txt";
}

/// Builds full ModelParams from a config block, calibrating the two
/// uncoupled models (at sizes n_x and n_y) through the cache.
inline ModelParams resolve_model(const ModelBlock& block, const CalibrationCache& cache,
                                 std::optional<double> f_y_override = std::nullopt) {
    ModelParams p;
    p.n_x = block.n_x;
    p.j = block.j;
    p.f_x = block.f_x;
    p.f_y = f_y_override.value_or(block.f_y);
    p.lambda_x = block.lambda_x;
    p.lambda_y = block.lambda_y;
    p.epsilon = block.epsilon;
    p.calib_x = calibrate_cached(cache, p.f_x, p.n_x, block.calib);
    p.calib_y = calibrate_cached(cache, p.f_y, p.n_x * p.j, block.calib);
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// Reference statistics from the published study (used for side-by-side
// comparison columns; regenerated quantities are never read from here).
// ---------------------------------------------------------------------------

struct ReferenceMoments {
    double f_y;
    double x_mean;
    double x_var;
    double y_mean;
    double y_var;
};

/// N_x=10, N_y=40, F_x=6, lambda=0.25, epsilon=0.01.
inline const std::vector<ReferenceMoments>& table1_reference() {
    static const std::vector<ReferenceMoments> rows = {
        {6.0, 9.64e-3, 0.9451, -2.38e-3, 1.066},   {8.0, 2.817e-2, 0.9514, -1.466e-2, 1.098},
        {12.0, 2.05e-2, 0.9336, -2.719e-2, 1.139}, {16.0, -1.353e-2, 0.9006, -4.028e-2, 1.153},
        {24.0, -6.972e-2, 0.8434, -6.075e-2, 1.167}};
    return rows;
}

/// N_x=20, N_y=80, F_x=6, lambda=0.35, epsilon=0.01.
inline const std::vector<ReferenceMoments>& table2_reference() {
    static const std::vector<ReferenceMoments> rows = {{6.0, 6.216e-3, 0.8878, -9.982e-3, 1.119},
                                                       {8.0, 2.34e-2, 0.8728, -2.791e-2, 1.19},
                                                       {12.0, -0.1363, 0.6927, -5.553e-2, 1.168},
                                                       {16.0, -0.1444, 0.6703, -8.669e-2, 1.199}};
    return rows;
}

// ---------------------------------------------------------------------------
// Shared measurement drivers
// ---------------------------------------------------------------------------

struct CoupledMoments {
    double x_mean = 0.0;
    double x_var = 0.0;
    double y_mean = 0.0;
    double y_var = 0.0;
    Vector x_mean_state;  // per-coordinate slow mean
};

/// Long coupled run pooled moments (spin-up discarded); streaming, nothing
/// stored.
inline CoupledMoments coupled_moments(const ModelParams& p, const IntegratorConfig& cfg,
                                      double t_len, double t_spinup) {
    const TwoScaleSystem sys(p);
    Rng rng(cfg.seed, 0x51a7e);
    Vector s0(sys.dim());
    for (Index i = 0; i < s0.size(); ++i) s0[i] = rng.uniform(-1e-3, 1e-3);

    IntegratorConfig run_cfg = cfg;
    run_cfg.sample_stride = 1 << 20;
    Vector s = integrate(sys, s0, t_spinup, run_cfg).final_state();

    class SplitMoments final : public StepObserver {
    public:
        SplitMoments(Index n_x, Index dim) : n_x_(n_x), x_sum_(Vector::Zero(n_x)), dim_(dim) {}
        void observe(std::size_t, double, const Vector& s) override {
            const auto x = s.head(n_x_);
            const auto y = s.tail(dim_ - n_x_);
            x_count_ += static_cast<double>(x.size());
            x_sum_scalar_ += x.sum();
            x_sum_sq_ += x.squaredNorm();
            x_sum_ += x;
            y_count_ += static_cast<double>(y.size());
            y_sum_ += y.sum();
            y_sum_sq_ += y.squaredNorm();
            ++steps_;
        }
        CoupledMoments finish() const {
            CoupledMoments m;
            m.x_mean = x_sum_scalar_ / x_count_;
            m.x_var = x_sum_sq_ / x_count_ - m.x_mean * m.x_mean;
            m.y_mean = y_sum_ / y_count_;
            m.y_var = y_sum_sq_ / y_count_ - m.y_mean * m.y_mean;
            m.x_mean_state = x_sum_ / static_cast<double>(steps_);
            return m;
        }

    private:
        Index n_x_, dim_;
        double x_count_ = 0, x_sum_scalar_ = 0, x_sum_sq_ = 0;
        double y_count_ = 0, y_sum_ = 0, y_sum_sq_ = 0;
        std::size_t steps_ = 0;
        Vector x_sum_;
    };

    SplitMoments obs(p.n_x, sys.dim());
    StepObserver* list[] = {&obs};
    integrate(sys, s, t_len, run_cfg, list);
    return obs.finish();
}

struct ResponseRun {
    ResponseCurve curve;
    ResponseOperator op;
    SuppressionDiagnostic diag;
    Vector base_x;
};

/// The response diagnostic at a frozen slow state: fast limiting run of
/// t_run fast time units, quasi-Gaussian curve with auto-truncated integral,
/// and the H-matrix eigenvalue summary.
inline ResponseRun response_at_base(const ModelParams& p, const Vector& base_x,
                                    const ResponseExp& r, std::uint64_t seed) {
    const FastLimitingSystem fast(p, base_x);
    IntegratorConfig fast_cfg;
    fast_cfg.dt = r.dt_sample;  // the lag grid doubles as the integration step
    fast_cfg.sample_stride = 1;
    fast_cfg.seed = seed;

    Rng rng(seed, 0xfa57);
    Vector z0(fast.dim());
    for (Index i = 0; i < z0.size(); ++i) z0[i] = rng.uniform(-1e-3, 1e-3);
    const Vector z_start = integrate(fast, z0, r.t_spinup, fast_cfg).final_state();
    const Trajectory traj = integrate(fast, z_start, r.t_run, fast_cfg);

    QuasiGaussianOptions qg;
    qg.origin_stride = r.origin_stride;
    TruncationRule rule;
    rule.t_cap = r.max_lag_cap;
    rule.norm_threshold = r.norm_threshold;

    ResponseRun out;
    auto truncated = quasi_gaussian_operator(traj, r.dt_sample, qg, rule, base_x);
    out.curve = std::move(truncated.curve);
    out.op = std::move(truncated.op);
    out.diag = h_matrix(out.op, p);
    out.base_x = base_x;
    return out;
}

/// Resolves the response base point: the coupled-run slow mean (pooled to a
/// uniform vector, which translational invariance justifies), zero, or an
/// explicit uniform value.
inline Vector resolve_base_x(const ModelParams& p, const ResponseExp& r,
                             const IntegratorConfig& cfg) {
    if (r.base_x == "zero") return Vector::Zero(p.n_x);
    if (r.base_x == "coupled-mean") {
        const CoupledMoments m = coupled_moments(p, cfg, r.t_mean_run, r.t_mean_run * 0.1);
        return Vector::Constant(p.n_x, m.x_mean);
    }
    return Vector::Constant(p.n_x, std::strtod(r.base_x.c_str(), nullptr));
}

// ---------------------------------------------------------------------------
// Energy conservation check
// ---------------------------------------------------------------------------

struct EnergyCheckResult {
    double e0 = 0.0;
    double max_rel_drift = 0.0;
    Vector t;
    Vector e, e_x, e_y;
};

/// Integrates the advection-plus-coupling two-scale flow (all constant and
/// linear terms removed) and records the relative drift of E = E_x + eps E_y.
inline EnergyCheckResult energy_check(const ModelParams& p, const IntegratorConfig& cfg,
                                      double t_len, int n_report = 100) {
    const TwoScaleSystem sys(p, /*advection_only=*/true);
    Rng rng(cfg.seed, 0xe0e0);
    Vector s0(sys.dim());
    for (Index i = 0; i < s0.size(); ++i) s0[i] = rng.normal();

    class EnergyObserver final : public StepObserver {
    public:
        EnergyObserver(const ModelParams& p, std::size_t stride) : p_(p), stride_(stride) {}
        void observe(std::size_t step, double t, const Vector& s) override {
            if (step % stride_ != 0) return;
            const State st = unpack(s, p_.n_x);
            const EnergyBreakdown e = total_energy(st, p_);
            t_.push_back(t);
            e_.push_back(e.e);
            ex_.push_back(e.e_x);
            ey_.push_back(e.e_y);
        }
        std::vector<double> t_, e_, ex_, ey_;

    private:
        const ModelParams& p_;
        std::size_t stride_;
    };

    const auto n_steps = static_cast<std::size_t>(std::ceil(t_len / cfg.dt - 1e-9));
    EnergyObserver obs(p, std::max<std::size_t>(1, n_steps / n_report));
    StepObserver* list[] = {&obs};
    integrate(sys, s0, t_len, cfg, list);

    EnergyCheckResult res;
    res.e0 = obs.e_.front();
    res.t = Eigen::Map<Vector>(obs.t_.data(), static_cast<Index>(obs.t_.size()));
    res.e = Eigen::Map<Vector>(obs.e_.data(), static_cast<Index>(obs.e_.size()));
    res.e_x = Eigen::Map<Vector>(obs.ex_.data(), static_cast<Index>(obs.ex_.size()));
    res.e_y = Eigen::Map<Vector>(obs.ey_.data(), static_cast<Index>(obs.ey_.size()));
    res.max_rel_drift = ((res.e.array() - res.e0).abs() / std::abs(res.e0)).maxCoeff();
    return res;
}

// ---------------------------------------------------------------------------
// Experiment runners (one per CLI subcommand)
// ---------------------------------------------------------------------------

inline RunManifest run_experiment(const ExperimentConfig& cfg) {
    detail::WallTimer timer;
    const std::filesystem::path out_dir(cfg.out_dir);
    std::filesystem::create_directories(out_dir);
    const unsigned threads = cfg.threads == 0 ? default_threads() : cfg.threads;

    RunManifest manifest;
    manifest.config_hash = detail::hash_hex(serialize(cfg));
    manifest.seed = cfg.integrator.seed;

    {
        std::ofstream cfg_copy(out_dir / "config_used.txt", std::ios::trunc);
        cfg_copy << serialize(cfg);
    }

    const CalibrationCache cache(calib_cache_path(cfg));
    const std::vector<std::string> meta = {"tool_version=" + std::string(kVersion),
                                           "config_hash=" + manifest.config_hash,
                                           "seed=" + std::to_string(cfg.integrator.seed)};

    switch (cfg.kind) {
        case ExperimentKind::calibrate: {
            CalibrationSettings s;
            s.dt = cfg.calibrate.dt;
            s.t_total = cfg.calibrate.t_total;
            s.t_spinup = cfg.calibrate.t_spinup;
            s.seed = cfg.calibrate.seed;
            const CalibrationRecord rec = calibrate(cfg.calibrate.f, cfg.calibrate.n, s);
            cache.store(rec);
            std::ofstream out(out_dir / "calibration.txt", std::ios::trunc);
            out << format_calibration_line(rec) << '\n';
            out.close();
            manifest.add_file(out_dir, "calibration.txt");
            break;
        }
        case ExperimentKind::simulate: {
            const ModelParams p = resolve_model(cfg.model, cache);
            const TwoScaleSystem sys(p);
            Rng rng(cfg.integrator.seed, 0x51a7e);
            Vector s0(sys.dim());
            for (Index i = 0; i < s0.size(); ++i) s0[i] = rng.uniform(-1e-3, 1e-3);
            IntegratorConfig spin_cfg = cfg.integrator;
            spin_cfg.sample_stride = 1 << 20;
            const Vector s = integrate(sys, s0, cfg.simulate.t_spinup, spin_cfg).final_state();
            const Trajectory traj = integrate(sys, s, cfg.simulate.t_len, cfg.integrator);
            write_trajectory_csv(out_dir / "trajectory.csv", traj,
                                 cfg.simulate.store_fast ? traj.dim() : p.n_x, meta);
            const Matrix slow = traj.states.topRows(p.n_x);
            const Matrix fast = traj.states.bottomRows(p.n_y());
            const MomentSummary mx = moments(slow);
            const MomentSummary my = moments(fast);
            write_moments_csv(out_dir / "moments.csv",
                              {{"x", mx.mean, mx.variance}, {"y", my.mean, my.variance}}, meta);
            manifest.add_file(out_dir, "trajectory.csv");
            manifest.add_file(out_dir, "moments.csv");
            break;
        }
        case ExperimentKind::divergence: {
            DivergenceProtocol proto = cfg.divergence.proto;
            proto.threads = threads;
            std::vector<double> f_values = cfg.divergence.f_y_values;
            const bool multi = !f_values.empty() || cfg.divergence.include_uncoupled;
            if (f_values.empty()) f_values.push_back(cfg.model.f_y);
            for (const double f_y : f_values) {
                const ModelParams p = resolve_model(cfg.model, cache, f_y);
                const DivergenceProfile prof = divergence_experiment(p, cfg.integrator, proto);
                std::string name = "divergence.csv";
                if (multi) {
                    std::ostringstream n;
                    n << "divergence_fy" << f_y << ".csv";
                    name = n.str();
                }
                auto m = meta;
                m.push_back("f_y=" + std::to_string(f_y));
                write_divergence_csv(out_dir / name, prof, m);
                manifest.add_file(out_dir, name);
            }
            if (cfg.divergence.include_uncoupled) {
                const CalibrationRecord calib =
                    calibrate_cached(cache, cfg.model.f_x, cfg.model.n_x, cfg.model.calib);
                const DivergenceProfile prof = divergence_experiment_uncoupled(
                    calib, cfg.model.n_x, cfg.integrator, proto);
                auto m = meta;
                m.push_back("model=uncoupled");
                write_divergence_csv(out_dir / "divergence_uncoupled.csv", prof, m);
                manifest.add_file(out_dir, "divergence_uncoupled.csv");
            }
            break;
        }
        case ExperimentKind::response: {
            const ModelParams p = resolve_model(cfg.model, cache);
            const Vector base_x = resolve_base_x(p, cfg.response, cfg.integrator);
            const ResponseRun run = response_at_base(p, base_x, cfg.response, cfg.integrator.seed);
            write_response_curve_csv(out_dir / "response_curve.csv", run.curve, meta);
            write_response_operator_csv(out_dir / "response_operator.csv", run.op, meta);
            write_diagnostic_csv(out_dir / "diagnostic.csv",
                                 {{p.f_y, run.diag.min_sym_eig_c, run.diag.max_sym_eig_h}}, meta);
            manifest.add_file(out_dir, "response_curve.csv");
            manifest.add_file(out_dir, "response_operator.csv");
            manifest.add_file(out_dir, "diagnostic.csv");
            break;
        }
        case ExperimentKind::stats: {
            const ModelParams p = resolve_model(cfg.model, cache);
            const TwoScaleSystem sys(p);
            Rng rng(cfg.integrator.seed, 0x51a7e);
            Vector s0(sys.dim());
            for (Index i = 0; i < s0.size(); ++i) s0[i] = rng.uniform(-1e-3, 1e-3);
            IntegratorConfig spin_cfg = cfg.integrator;
            spin_cfg.sample_stride = 1 << 20;
            const Vector s = integrate(sys, s0, cfg.stats.t_spinup, spin_cfg).final_state();
            // Store slow samples densely enough for the ACF, stream the rest.
            IntegratorConfig run_cfg = cfg.integrator;
            run_cfg.sample_stride =
                std::max(1, static_cast<int>(std::llround(0.01 / cfg.integrator.dt)));
            const Trajectory traj = integrate(sys, s, cfg.stats.t_len, run_cfg);
            const Matrix slow = traj.states.topRows(p.n_x);
            const Matrix fast = traj.states.bottomRows(p.n_y());
            const MomentSummary mx = moments(slow);
            const MomentSummary my = moments(fast);
            write_moments_csv(out_dir / "moments.csv",
                              {{"x", mx.mean, mx.variance}, {"y", my.mean, my.variance}}, meta);
            write_pdf_csv(out_dir / "pdf.csv",
                          pdf(slow, cfg.stats.n_bins, cfg.stats.pdf_lo, cfg.stats.pdf_hi), meta);
            write_acf_csv(out_dir / "acf.csv",
                          acf_pooled(slow, cfg.stats.acf_max_lag, traj.dt_sample), meta);
            manifest.add_file(out_dir, "moments.csv");
            manifest.add_file(out_dir, "pdf.csv");
            manifest.add_file(out_dir, "acf.csv");
            break;
        }
        case ExperimentKind::energy_check: {
            const ModelParams p = resolve_model(cfg.model, cache);
            const EnergyCheckResult res = energy_check(p, cfg.integrator, cfg.energy.t_len);
            IntegratorConfig half = cfg.integrator;
            half.dt *= 0.5;
            const EnergyCheckResult res_half = energy_check(p, half, cfg.energy.t_len);
            auto m = meta;
            m.push_back("max_rel_drift=" + detail::csv_num(res.max_rel_drift));
            m.push_back("max_rel_drift_half_dt=" + detail::csv_num(res_half.max_rel_drift));
            m.push_back("drift_ratio=" + detail::csv_num(res.max_rel_drift /
                                                         std::max(res_half.max_rel_drift, 1e-300)));
            auto out = detail::open_csv(out_dir / "energy.csv", m);
            out << "t,e,e_x,e_y\n";
            for (Index k = 0; k < res.t.size(); ++k)
                out << detail::csv_num(res.t[k]) << ',' << detail::csv_num(res.e[k]) << ','
                    << detail::csv_num(res.e_x[k]) << ',' << detail::csv_num(res.e_y[k]) << '\n';
            out.close();
            manifest.add_file(out_dir, "energy.csv");
            break;
        }
    }

    manifest.wall_seconds = timer.seconds();
    manifest.write(out_dir / "manifest.csv");
    return manifest;
}

// ---------------------------------------------------------------------------
// Bundled reproduction presets
// ---------------------------------------------------------------------------

enum class Preset { table1, table2, fig2, fig4 };
enum class Scale { desk, paper };

inline std::optional<Preset> preset_from(const std::string& s) {
    if (s == "table1") return Preset::table1;
    if (s == "table2") return Preset::table2;
    if (s == "fig2") return Preset::fig2;
    if (s == "fig4") return Preset::fig4;
    return std::nullopt;
}

inline std::optional<Scale> scale_from(const std::string& s) {
    if (s == "desk") return Scale::desk;
    if (s == "paper") return Scale::paper;
    return std::nullopt;
}

struct PresetNumbers {
    double dt;
    double window;     // averaging window for moments
    int n_members;
    double t_spinup;   // divergence spin-up
};

inline PresetNumbers preset_numbers(Scale scale) {
    if (scale == Scale::paper) return {1e-5, 10000.0, 500, 1000.0};
    return {1e-4, 2000.0, 100, 200.0};
}

inline ModelBlock table1_model() {
    ModelBlock m;
    m.n_x = 10;
    m.j = 4;
    m.f_x = 6.0;
    m.lambda_x = m.lambda_y = 0.25;
    m.epsilon = 0.01;
    return m;
}

inline ModelBlock table2_model() {
    ModelBlock m;
    m.n_x = 20;
    m.j = 4;
    m.f_x = 6.0;
    m.lambda_x = m.lambda_y = 0.35;
    m.epsilon = 0.01;
    return m;
}

/// Runs a bundled parameter set and emits comparison CSVs (the moments
/// tables carry the published values side by side).
inline RunManifest run_reproduce(Preset preset, Scale scale, const std::string& out,
                                 std::uint64_t seed, unsigned threads) {
    detail::WallTimer timer;
    const std::filesystem::path out_dir(out);
    std::filesystem::create_directories(out_dir);
    const PresetNumbers nums = preset_numbers(scale);

    RunManifest manifest;
    manifest.seed = seed;
    manifest.config_hash = detail::hash_hex("reproduce:" + std::to_string(int(preset)) + ":" +
                                            std::to_string(int(scale)) + ":" +
                                            std::to_string(seed));
    const std::vector<std::string> meta = {"tool_version=" + std::string(kVersion),
                                           "scale=" + std::string(scale == Scale::paper ? "paper"
                                                                                        : "desk"),
                                           "seed=" + std::to_string(seed)};
    const CalibrationCache cache(out_dir / "calibration_cache.txt");

    IntegratorConfig icfg;
    icfg.dt = nums.dt;
    icfg.seed = seed;

    switch (preset) {
        case Preset::table1:
        case Preset::table2: {
            const bool t1 = preset == Preset::table1;
            const ModelBlock block = t1 ? table1_model() : table2_model();
            const auto& reference = t1 ? table1_reference() : table2_reference();
            auto out_csv = detail::open_csv(out_dir / "moments.csv", meta);
            out_csv << "F_y,x_mean,x_var,y_mean,y_var,paper_x_mean,paper_x_var,paper_y_mean,"
                       "paper_y_var\n";
            for (const auto& ref : reference) {
                const ModelParams p = resolve_model(block, cache, ref.f_y);
                const CoupledMoments m = coupled_moments(p, icfg, nums.window, nums.t_spinup);
                out_csv << detail::csv_num(ref.f_y) << ',' << detail::csv_num(m.x_mean) << ','
                        << detail::csv_num(m.x_var) << ',' << detail::csv_num(m.y_mean) << ','
                        << detail::csv_num(m.y_var) << ',' << detail::csv_num(ref.x_mean) << ','
                        << detail::csv_num(ref.x_var) << ',' << detail::csv_num(ref.y_mean) << ','
                        << detail::csv_num(ref.y_var) << '\n';
            }
            out_csv.close();
            manifest.add_file(out_dir, "moments.csv");
            break;
        }
        case Preset::fig2: {
            const ModelBlock block = table1_model();
            DivergenceProtocol proto;
            proto.n_members = nums.n_members;
            proto.t_spinup = nums.t_spinup;
            proto.threads = threads;
            for (const double f_y : {6.0, 8.0, 12.0, 16.0, 24.0}) {
                const ModelParams p = resolve_model(block, cache, f_y);
                const DivergenceProfile prof = divergence_experiment(p, icfg, proto);
                std::ostringstream name;
                name << "divergence_fy" << f_y << ".csv";
                auto m = meta;
                m.push_back("f_y=" + std::to_string(f_y));
                write_divergence_csv(out_dir / name.str(), prof, m);
                manifest.add_file(out_dir, name.str());
            }
            break;
        }
        case Preset::fig4: {
            const ModelBlock block = table1_model();
            ResponseExp r;  // defaults: 2000 fast units, dt_sample 1e-3
            std::vector<DiagnosticRow> rows;
            for (const double f_y : {6.0, 8.0, 12.0, 16.0, 24.0}) {
                const ModelParams p = resolve_model(block, cache, f_y);
                const Vector base_x = resolve_base_x(p, r, icfg);
                const ResponseRun run = response_at_base(p, base_x, r, seed);
                rows.push_back({f_y, run.diag.min_sym_eig_c, run.diag.max_sym_eig_h});
                std::ostringstream name;
                name << "response_operator_fy" << f_y << ".csv";
                write_response_operator_csv(out_dir / name.str(), run.op, meta);
                manifest.add_file(out_dir, name.str());
            }
            write_diagnostic_csv(out_dir / "diagnostic.csv", rows, meta);
            manifest.add_file(out_dir, "diagnostic.csv");
            break;
        }
    }

    manifest.wall_seconds = timer.seconds();
    manifest.write(out_dir / "manifest.csv");
    return manifest;
}

}  // namespace slowfast
