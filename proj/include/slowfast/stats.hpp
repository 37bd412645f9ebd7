#pragma once

#include "slowfast/common.hpp"
#include "slowfast/dynamics.hpp"
#include "slowfast/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <vector>

namespace slowfast {

// ---------------------------------------------------------------------------
// Moments
// ---------------------------------------------------------------------------

struct MomentSummary {
    double mean = 0.0;
    double variance = 0.0;
    std::size_t count = 0;
    bool pooled = false;
};

inline MomentSummary moments(const Vector& series) {
    if (series.size() < 2) throw DegenerateInputError("moments needs at least 2 samples");
    MomentSummary m;
    m.count = static_cast<std::size_t>(series.size());
    m.mean = series.mean();
    m.variance = series.squaredNorm() / static_cast<double>(series.size()) - m.mean * m.mean;
    m.variance = std::max(0.0, m.variance);
    return m;
}

/// Pooled over channels (rows) and samples (columns).
inline MomentSummary moments(const Matrix& series) {
    if (series.size() < 2) throw DegenerateInputError("moments needs at least 2 samples");
    MomentSummary m;
    m.count = static_cast<std::size_t>(series.size());
    m.mean = series.mean();
    m.variance = series.squaredNorm() / static_cast<double>(series.size()) - m.mean * m.mean;
    m.variance = std::max(0.0, m.variance);
    m.pooled = series.rows() > 1;
    return m;
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

/// Uniform-bin density estimate; the density integrates to 1 over the range
/// (out-of-range samples are dropped before normalization).
struct Histogram {
    Vector edges;    // n_bins + 1
    Vector density;  // n_bins

    double bin_width() const { return edges[1] - edges[0]; }
    Vector centers() const {
        return 0.5 * (edges.head(edges.size() - 1) + edges.tail(edges.size() - 1));
    }
};

inline Histogram pdf(const Vector& series, int n_bins, double lo, double hi) {
    if (n_bins < 2) throw ValidationError("pdf needs n_bins >= 2");
    if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi))
        throw ValidationError("pdf needs a finite range with hi > lo");
    Histogram h;
    h.edges = Vector::LinSpaced(n_bins + 1, lo, hi);
    Eigen::VectorXd counts = Vector::Zero(n_bins);
    const double width = (hi - lo) / n_bins;
    std::size_t in_range = 0;
    for (Index i = 0; i < series.size(); ++i) {
        const double v = series[i];
        if (v < lo || v > hi || !std::isfinite(v)) continue;
        auto b = static_cast<Index>((v - lo) / width);
        b = std::min<Index>(b, n_bins - 1);
        counts[b] += 1.0;
        ++in_range;
    }
    if (in_range == 0) throw DegenerateInputError("pdf: all samples outside range");
    h.density = counts / (static_cast<double>(in_range) * width);
    return h;
}

inline Histogram pdf(const Matrix& series, int n_bins, double lo, double hi) {
    return pdf(Vector{series.reshaped()}, n_bins, lo, hi);
}

// ---------------------------------------------------------------------------
// Autocorrelation
// ---------------------------------------------------------------------------

/// Normalized ACF on a uniform lag grid: c(s) = <z'(t+s) z'(t)> / <z'^2>,
/// mean removed, biased (1/T) normalization, c(0) = 1 exactly.
struct AcfCurve {
    Vector lags;
    Vector values;
};

inline AcfCurve acf(const Vector& series, double max_lag, double dt_sample) {
    const Index n = series.size();
    if (n < 2) throw DegenerateInputError("acf needs at least 2 samples");
    const auto max_k = static_cast<Index>(std::floor(max_lag / dt_sample + 1e-9));
    if (max_k >= n) throw RangeError("acf: max_lag exceeds the series length");
    const double mean = series.mean();
    const Vector z = series.array() - mean;
    const double denom = z.squaredNorm();
    if (denom <= 0.0) throw DegenerateInputError("acf: zero-variance series");
    AcfCurve c;
    c.lags = Vector::LinSpaced(max_k + 1, 0.0, dt_sample * static_cast<double>(max_k));
    c.values.resize(max_k + 1);
    for (Index k = 0; k <= max_k; ++k) {
        c.values[k] = z.head(n - k).dot(z.tail(n - k)) / denom;
    }
    return c;
}

/// Pooled ACF of a multichannel series: per-channel autocovariances averaged,
/// then normalized by the pooled variance (channels share statistics by
/// translational invariance).
inline AcfCurve acf_pooled(const Matrix& series, double max_lag, double dt_sample) {
    const Index n = series.cols();
    const Index ch = series.rows();
    if (n < 2 || ch < 1) throw DegenerateInputError("acf_pooled needs samples");
    const auto max_k = static_cast<Index>(std::floor(max_lag / dt_sample + 1e-9));
    if (max_k >= n) throw RangeError("acf_pooled: max_lag exceeds the series length");
    const double mean = series.mean();
    const Matrix z = series.array() - mean;
    const double denom = z.squaredNorm();
    if (denom <= 0.0) throw DegenerateInputError("acf_pooled: zero-variance series");
    AcfCurve c;
    c.lags = Vector::LinSpaced(max_k + 1, 0.0, dt_sample * static_cast<double>(max_k));
    c.values.resize(max_k + 1);
    for (Index k = 0; k <= max_k; ++k) {
        double num = 0.0;
        for (Index r = 0; r < ch; ++r)
            num += z.row(r).head(n - k).dot(z.row(r).tail(n - k));
        c.values[k] = num / denom;
    }
    return c;
}

/// Integrated ACF: trapezoid over the curve (a scalar mixing-time measure).
inline double integrated_acf(const AcfCurve& c) {
    double acc = 0.0;
    for (Index k = 1; k < c.lags.size(); ++k)
        acc += 0.5 * (c.values[k] + c.values[k - 1]) * (c.lags[k] - c.lags[k - 1]);
    return acc;
}

// ---------------------------------------------------------------------------
// Running average
// ---------------------------------------------------------------------------

/// Trailing-window mean over all samples in [t - window, t]; the leading
/// edge uses the partial window. window = 0 is the identity. Commutes with
/// affine maps of the series exactly.
inline Vector running_average(const Vector& series, double window, double dt_sample) {
    if (window < 0.0) throw ValidationError("running_average window must be >= 0");
    const Index n = series.size();
    const auto w = static_cast<Index>(std::floor(window / dt_sample + 1e-9)) + 1;
    if (w <= 1) return series;
    Vector out(n);
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) {
        acc += series[i];
        if (i >= w) acc -= series[i - w];
        out[i] = acc / static_cast<double>(std::min(i + 1, w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ensemble divergence experiment
// ---------------------------------------------------------------------------

struct DivergenceProtocol {
    int n_members = 100;
    double t_spinup = 200.0;
    double t_spacing = 20.0;
    double t_horizon = 25.0;
    /// Perturbation norm; isotropic Gaussian direction over the full state.
    double delta = 0.01;
    /// Running-average window (slow time units).
    double window = 0.5;
    /// Profile sampling grid.
    double dt_profile = 0.02;
    unsigned threads = 1;
    bool keep_member_profiles = false;

    void validate() const {
        if (n_members < 1) throw ValidationError("n_members must be >= 1");
        if (!(t_spinup > 0.0) || !(t_spacing > 0.0) || !(t_horizon > 0.0))
            throw ValidationError("divergence protocol times must be > 0");
        if (delta < 0.0) throw ValidationError("delta must be >= 0");
        if (window < 0.0) throw ValidationError("window must be >= 0");
        if (!(dt_profile > 0.0)) throw ValidationError("dt_profile must be > 0");
    }
};

/// Ensemble-averaged divergence between running-averaged slow trajectories:
/// d(t) = || <x'>(t) - <x>(t) ||_2 over the slow coordinates, averaged over
/// members. `excluded` counts members dropped after a blow-up.
struct DivergenceProfile {
    Vector t;
    Vector divergence;
    int n_members = 0;
    int excluded = 0;
    double delta = 0.0;
    double window = 0.0;
    Matrix member_profiles;  // members x time, only if keep_member_profiles
};

namespace detail {

/// Trailing running-average accumulator over a fixed sample window.
class TrailingWindow {
public:
    TrailingWindow(Index dim, Index capacity)
        : capacity_(std::max<Index>(1, capacity)), sum_(Vector::Zero(dim)) {}

    void push(const Vector& v) {
        sum_ += v;
        buffer_.push_back(v);
        if (static_cast<Index>(buffer_.size()) > capacity_) {
            sum_ -= buffer_.front();
            buffer_.pop_front();
        }
    }

    Vector mean() const { return sum_ / static_cast<double>(buffer_.size()); }

private:
    Index capacity_;
    Vector sum_;
    std::deque<Vector> buffer_;
};

}  // namespace detail

/// Core protocol over any deterministic system with a slow-coordinate prefix:
/// spin up, take n_members snapshots along one long run spaced t_spacing
/// apart, perturb each by an isotropic deviation of norm delta, co-integrate
/// both copies for t_horizon, and average the running-average divergence.
template <class System>
DivergenceProfile divergence_experiment(const System& sys, Index n_slow, const Vector& s0,
                                        const IntegratorConfig& cfg,
                                        const DivergenceProtocol& proto) {
    cfg.validate();
    proto.validate();
    if (n_slow < 1 || n_slow > sys.dim()) throw InvalidDimensionError("bad slow prefix");

    const auto steps_per_profile =
        static_cast<std::size_t>(std::llround(proto.dt_profile / cfg.dt));
    if (steps_per_profile < 1 ||
        std::abs(steps_per_profile * cfg.dt - proto.dt_profile) > 1e-9 * proto.dt_profile)
        throw ValidationError("dt_profile must be an integer multiple of dt");

    // Snapshots along one long trajectory.
    IntegratorConfig run_cfg = cfg;
    run_cfg.sample_stride = 1 << 20;
    std::vector<Vector> snapshots;
    snapshots.reserve(proto.n_members);
    {
        Trajectory spin = integrate(sys, s0, proto.t_spinup, run_cfg);
        Vector s = spin.final_state();
        snapshots.push_back(s);
        for (int m = 1; m < proto.n_members; ++m) {
            Trajectory seg = integrate(sys, s, proto.t_spacing, run_cfg);
            s = seg.final_state();
            snapshots.push_back(s);
        }
    }

    const auto n_profile = static_cast<Index>(proto.t_horizon / proto.dt_profile + 1e-9) + 1;
    const auto window_samples =
        static_cast<Index>(std::floor(proto.window / proto.dt_profile + 1e-9)) + 1;
    const auto n_steps = static_cast<std::size_t>(n_profile - 1) * steps_per_profile;

    Matrix profiles = Matrix::Constant(proto.n_members, n_profile, std::nan(""));
    std::vector<char> ok(proto.n_members, 0);

    parallel_for(static_cast<std::size_t>(proto.n_members), proto.threads, [&](std::size_t m) {
        Rng rng(cfg.seed, m);
        Vector direction = rng.normal_vector(sys.dim());
        const double norm = direction.norm();
        Vector a = snapshots[m];
        Vector b = norm > 0.0 && proto.delta > 0.0 ? Vector(a + (proto.delta / norm) * direction)
                                                   : a;

        detail::TrailingWindow ra_a(n_slow, window_samples);
        detail::TrailingWindow ra_b(n_slow, window_samples);
        ra_a.push(a.head(n_slow));
        ra_b.push(b.head(n_slow));
        profiles(static_cast<Index>(m), 0) = (ra_b.mean() - ra_a.mean()).norm();

        Vector k1(sys.dim()), k2(sys.dim()), tmp(sys.dim());
        try {
            Index next_profile = 1;
            for (std::size_t step = 1; step <= n_steps; ++step) {
                detail::rk2_step_inplace(sys, a, cfg.dt, k1, k2, tmp);
                detail::rk2_step_inplace(sys, b, cfg.dt, k1, k2, tmp);
                if (step % steps_per_profile == 0) {
                    if (!all_finite(a) || !all_finite(b))
                        throw BlowUpError(step, cfg.dt * static_cast<double>(step),
                                          "divergence member blew up");
                    ra_a.push(a.head(n_slow));
                    ra_b.push(b.head(n_slow));
                    profiles(static_cast<Index>(m), next_profile++) =
                        (ra_b.mean() - ra_a.mean()).norm();
                }
            }
            ok[m] = 1;
        } catch (const BlowUpError&) {
            ok[m] = 0;
        }
    });

    DivergenceProfile result;
    result.t = Vector::LinSpaced(n_profile, 0.0, proto.dt_profile * (n_profile - 1));
    result.divergence = Vector::Zero(n_profile);
    int used = 0;
    for (int m = 0; m < proto.n_members; ++m) {
        if (!ok[m]) continue;
        result.divergence += profiles.row(m).transpose();
        ++used;
    }
    result.excluded = proto.n_members - used;
    if (used == 0 || result.excluded * 20 > proto.n_members)
        throw ExperimentError("more than 5% of divergence members blew up (" +
                              std::to_string(result.excluded) + "/" +
                              std::to_string(proto.n_members) + ")");
    result.divergence /= static_cast<double>(used);
    result.n_members = used;
    result.delta = proto.delta;
    result.window = proto.window;
    if (proto.keep_member_profiles) {
        result.member_profiles.resize(used, n_profile);
        Index r = 0;
        for (int m = 0; m < proto.n_members; ++m)
            if (ok[m]) result.member_profiles.row(r++) = profiles.row(m);
    }
    return result;
}

/// The two-scale Lorenz version: slow coordinates are the first n_x, and the
/// generic initial condition is a small uniform perturbation of the origin
/// (the rescaled model's mean state is near zero).
inline DivergenceProfile divergence_experiment(const ModelParams& p, const IntegratorConfig& cfg,
                                               const DivergenceProtocol& proto) {
    const TwoScaleSystem sys(p);
    Rng rng(cfg.seed, 0x5eed);
    Vector s0(sys.dim());
    for (Index i = 0; i < s0.size(); ++i) s0[i] = rng.uniform(-1e-3, 1e-3);
    return divergence_experiment(sys, p.n_x, s0, cfg, proto);
}

/// Uncoupled rescaled L96 baseline; every coordinate is slow.
inline DivergenceProfile divergence_experiment_uncoupled(const CalibrationRecord& calib, int n,
                                                         const IntegratorConfig& cfg,
                                                         const DivergenceProtocol& proto) {
    const RescaledL96System sys(calib, n);
    Rng rng(cfg.seed, 0x5eed);
    Vector s0(n);
    for (Index i = 0; i < s0.size(); ++i) s0[i] = rng.uniform(-1e-3, 1e-3);
    return divergence_experiment(sys, n, s0, cfg, proto);
}

}  // namespace slowfast
