#pragma once

#include "slowfast/common.hpp"
#include "slowfast/dynamics.hpp"
#include "slowfast/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace slowfast {

// ---------------------------------------------------------------------------
// Response curves and operators
// ---------------------------------------------------------------------------

/// Lagged response matrices C(x, s_k) on a uniform lag grid (fast time
/// units). C(0) is the identity: exactly for the tangent estimator, and to
/// the covariance-ridge level for the quasi-Gaussian one.
struct ResponseCurve {
    Vector lags;
    std::vector<Matrix> mats;
    Vector base_x;
    std::string estimator;

    Index n_lags() const { return lags.size(); }
    double lag_spacing() const { return lags.size() > 1 ? lags[1] - lags[0] : 0.0; }
    double extent() const { return lags.size() > 0 ? lags[lags.size() - 1] : 0.0; }
};

/// Time integral of a response curve over [0, t_max].
struct ResponseOperator {
    Matrix op;
    double t_max = 0.0;
    std::string quadrature;
    std::string estimator;
    std::string provenance;
};

/// First lag at which ||C(s)||_F falls below `threshold` (a mixing-time
/// measure); returns the curve extent if it never does.
inline double first_lag_below(const ResponseCurve& curve, double threshold) {
    for (Index k = 0; k < curve.n_lags(); ++k) {
        if (curve.mats[k].norm() < threshold) return curve.lags[k];
    }
    return curve.extent();
}

// ---------------------------------------------------------------------------
// Symmetric-part eigenvalues
// ---------------------------------------------------------------------------

inline double min_sym_eig(const Matrix& m) {
    if (m.rows() != m.cols()) throw InvalidDimensionError("min_sym_eig needs a square matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
    return eig.eigenvalues().minCoeff();
}

inline double max_sym_eig(const Matrix& m) {
    if (m.rows() != m.cols()) throw InvalidDimensionError("max_sym_eig needs a square matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
    return eig.eigenvalues().maxCoeff();
}

// ---------------------------------------------------------------------------
// Quasi-Gaussian estimator
// ---------------------------------------------------------------------------

struct QuasiGaussianOptions {
    /// Spacing between time-average origins, in trajectory samples;
    /// 0 picks roughly one origin per 0.05 time units.
    Index origin_stride = 0;
    double ridge_factor = 1e-10;
    double condition_limit = 1e12;
};

namespace detail {

using StridedMap = Eigen::Map<const Matrix, Eigen::Unaligned, Eigen::OuterStride<>>;

struct QgWorkspace {
    const Matrix* samples = nullptr;
    Index n = 0;          // state dimension
    Index lag_step = 0;   // samples per lag grid point
    Index stride = 0;     // samples between origins
    Index n_origins = 0;
    Vector mean0;         // origin-set mean (the z-bar of the estimator)
    Eigen::LLT<Matrix> sigma_llt;
    Matrix sigma;

    StridedMap block(Index lag_index) const {
        return StridedMap(samples->data() + lag_index * lag_step * n, n, n_origins,
                          Eigen::OuterStride<>(stride * n));
    }

    /// Raw lagged autocovariance (1/M) sum z'(t+s) z'(t)^T with the origin
    /// mean removed.
    Matrix raw(Index lag_index) const {
        const StridedMap z0 = block(0);
        const StridedMap zk = block(lag_index);
        Matrix r = (zk * z0.transpose()) / static_cast<double>(n_origins);
        const Vector mean_k = zk.rowwise().mean();
        r.noalias() -= mean_k * mean0.transpose();
        return r;
    }

    /// C(s) = raw(s) * Sigma^{-1} via the cached LLT.
    Matrix normalized(Index lag_index) const {
        return sigma_llt.solve(raw(lag_index).transpose()).transpose();
    }
};

inline QgWorkspace make_qg_workspace(const Trajectory& traj, double dt_lag, Index max_lag_points,
                                     const QuasiGaussianOptions& opt) {
    if (traj.n_samples() < 2) throw DegenerateInputError("trajectory too short");
    if (!(traj.dt_sample > 0.0)) throw ValidationError("trajectory has no sample spacing");
    const auto lag_step = static_cast<Index>(std::llround(dt_lag / traj.dt_sample));
    if (lag_step < 1 || std::abs(lag_step * traj.dt_sample - dt_lag) > 1e-9 * dt_lag)
        throw ValidationError("lag grid must be an integer multiple of the sample spacing");

    QgWorkspace ws;
    ws.samples = &traj.states;
    ws.n = traj.dim();
    ws.lag_step = lag_step;
    ws.stride = opt.origin_stride > 0
                    ? opt.origin_stride
                    : std::max<Index>(1, static_cast<Index>(std::llround(0.05 / traj.dt_sample)));
    const Index last_usable = traj.n_samples() - 1 - max_lag_points * lag_step;
    if (last_usable < 1)
        throw DegenerateInputError("trajectory shorter than the requested max lag");
    ws.n_origins = last_usable / ws.stride + 1;
    if (ws.n_origins < 2) throw DegenerateInputError("too few averaging origins");

    ws.mean0 = ws.block(0).rowwise().mean();
    ws.sigma = ws.raw(0);
    ws.sigma = 0.5 * (ws.sigma + ws.sigma.transpose());

    const double ridge = opt.ridge_factor * ws.sigma.trace() / static_cast<double>(ws.n);
    Matrix sigma_reg = ws.sigma + ridge * Matrix::Identity(ws.n, ws.n);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma_reg);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (lo <= 0.0 || hi / lo > opt.condition_limit)
        throw IllConditionedCovarianceError("sample covariance condition number " +
                                            std::to_string(lo > 0.0 ? hi / lo : -1.0) +
                                            " exceeds the limit");
    ws.sigma_llt.compute(sigma_reg);
    return ws;
}

}  // namespace detail

/// Quasi-Gaussian response curve from one long fast-limiting trajectory:
///   C_G(s) = [ time average of z'(t+s) z'(t)^T ] Sigma^{-1},
/// with z' = z - z_bar and Sigma the lag-0 autocovariance of the same
/// origin samples. The lag grid dt_lag must be a multiple of the trajectory
/// sample spacing.
inline ResponseCurve quasi_gaussian_curve(const Trajectory& traj, double max_lag, double dt_lag,
                                          const QuasiGaussianOptions& opt = {},
                                          Vector base_x = Vector()) {
    const auto n_lags = static_cast<Index>(std::floor(max_lag / dt_lag + 1e-9));
    auto ws = detail::make_qg_workspace(traj, dt_lag, n_lags, opt);

    ResponseCurve curve;
    curve.estimator = "quasi-gaussian";
    curve.base_x = std::move(base_x);
    curve.lags = Vector::LinSpaced(n_lags + 1, 0.0, dt_lag * static_cast<double>(n_lags));
    curve.mats.reserve(n_lags + 1);
    for (Index k = 0; k <= n_lags; ++k) curve.mats.push_back(ws.normalized(k));
    return curve;
}

// ---------------------------------------------------------------------------
// Tangent-map (exact) estimator
// ---------------------------------------------------------------------------

struct TangentCurveOptions {
    double t_spinup = 100.0;
    /// Spacing between base points along the sampling trajectory.
    double sample_spacing = 0.5;
    unsigned threads = 1;
};

/// Ergodic average of the tangent map of the fast limiting flow:
///   C(x, s) = lim (1/r) int_0^r T^s_{x, z(tau)} dtau,
/// estimated over n_samples base points drawn along one long trajectory.
/// Meant for small systems (n_y up to ~16); cost grows as n_y^2 per
/// integration step per sample. The lag grid is cfg.dt * cfg.sample_stride.
inline ResponseCurve tangent_exact_curve(const ModelParams& p, const Vector& x_fixed,
                                         double max_lag, int n_samples, const IntegratorConfig& cfg,
                                         const TangentCurveOptions& opt = {}) {
    cfg.validate();
    if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
    const FastLimitingSystem sys(p, x_fixed);
    const Index n = sys.dim();
    const double dt_lag = cfg.dt * cfg.sample_stride;
    const auto n_lags = static_cast<Index>(std::floor(max_lag / dt_lag + 1e-9));
    const auto steps_per_lag = static_cast<std::size_t>(cfg.sample_stride);
    const std::size_t n_steps = static_cast<std::size_t>(n_lags) * steps_per_lag;

    // Base points along one long run.
    IntegratorConfig run_cfg = cfg;
    run_cfg.sample_stride = 1 << 20;
    Rng rng(cfg.seed, 0xba5e);
    Vector s0(n);
    for (Index i = 0; i < n; ++i) s0[i] = rng.uniform(-1e-3, 1e-3);
    std::vector<Vector> base_points;
    base_points.reserve(n_samples);
    {
        Vector s = integrate(sys, s0, opt.t_spinup, run_cfg).final_state();
        base_points.push_back(s);
        for (int m = 1; m < n_samples; ++m) {
            s = integrate(sys, s, opt.sample_spacing, run_cfg).final_state();
            base_points.push_back(s);
        }
    }

    std::vector<Matrix> sum(n_lags + 1, Matrix::Zero(n, n));
    const int batch = 32;  // bounded scratch; members reduce in index order
    std::vector<std::vector<Matrix>> slots(batch);

    for (int b0 = 0; b0 < n_samples; b0 += batch) {
        const int b1 = std::min(n_samples, b0 + batch);
        parallel_for(static_cast<std::size_t>(b1 - b0), opt.threads, [&](std::size_t off) {
            const Vector& z0 = base_points[b0 + static_cast<int>(off)];
            auto& rec = slots[off];
            rec.assign(n_lags + 1, Matrix());
            rec[0] = Matrix::Identity(n, n);

            Vector s = z0;
            Matrix m = Matrix::Identity(n, n);
            Vector k1(n), k2(n), s_mid(n);
            Matrix jac(n, n), jac_mid(n, n), m1(n, n), m_mid(n, n), m2(n, n);
            Index next_lag = 1;
            for (std::size_t step = 1; step <= n_steps; ++step) {
                sys.eval(s, k1);
                sys.jacobian(s, jac);
                m1.noalias() = jac * m;
                s_mid = s + cfg.dt * k1;
                m_mid = m + cfg.dt * m1;
                sys.eval(s_mid, k2);
                sys.jacobian(s_mid, jac_mid);
                m2.noalias() = jac_mid * m_mid;
                s += (0.5 * cfg.dt) * (k1 + k2);
                m += (0.5 * cfg.dt) * (m1 + m2);
                if (step % steps_per_lag == 0) {
                    if (!m.allFinite())
                        throw BlowUpError(step, cfg.dt * static_cast<double>(step),
                                          "tangent sample blew up");
                    rec[next_lag++] = m;
                }
            }
        });
        for (int m = b0; m < b1; ++m) {
            const auto& rec = slots[m - b0];
            for (Index k = 0; k <= n_lags; ++k) sum[k] += rec[k];
        }
    }

    ResponseCurve curve;
    curve.estimator = "tangent-exact";
    curve.base_x = x_fixed;
    curve.lags = Vector::LinSpaced(n_lags + 1, 0.0, dt_lag * static_cast<double>(n_lags));
    curve.mats.reserve(n_lags + 1);
    for (Index k = 0; k <= n_lags; ++k)
        curve.mats.push_back(sum[k] / static_cast<double>(n_samples));
    return curve;
}

// ---------------------------------------------------------------------------
// Curve integration and truncation
// ---------------------------------------------------------------------------

/// Trapezoidal quadrature of the matrix curve over [0, t_max].
inline ResponseOperator integrate_curve(const ResponseCurve& curve, double t_max) {
    if (curve.n_lags() < 2) throw DegenerateInputError("curve needs at least two lag points");
    const double dl = curve.lag_spacing();
    const auto k_max = static_cast<Index>(std::floor(t_max / dl + 1e-9));
    if (k_max > curve.n_lags() - 1) throw RangeError("t_max exceeds the curve extent");
    const Index n = curve.mats[0].rows();
    Matrix acc = Matrix::Zero(n, n);
    for (Index k = 1; k <= k_max; ++k) acc += 0.5 * dl * (curve.mats[k] + curve.mats[k - 1]);
    ResponseOperator op;
    op.op = std::move(acc);
    op.t_max = dl * static_cast<double>(k_max);
    op.quadrature = "trapezoid";
    op.estimator = curve.estimator;
    return op;
}

struct TruncationRule {
    /// Stop once the maximum of ||C(s)||_F over a 1-unit lag block falls
    /// below this level.
    double norm_threshold = 0.02;
    double t_cap = 50.0;
};

struct TruncatedResponse {
    ResponseCurve curve;
    ResponseOperator op;
};

/// Grows the quasi-Gaussian curve one lag-time-unit block at a time and
/// stops at the first block whose running max of ||C||_F is below the
/// threshold; the operator integrates to that block's start. The infinite
/// upper limit of the lag integral has to be cut somewhere; the rule and the
/// resulting t_max are recorded in the operator provenance.
inline TruncatedResponse quasi_gaussian_operator(const Trajectory& traj, double dt_lag,
                                                 const QuasiGaussianOptions& qg_opt = {},
                                                 const TruncationRule& rule = {},
                                                 Vector base_x = Vector()) {
    const auto block_lags = std::max<Index>(1, static_cast<Index>(std::llround(1.0 / dt_lag)));
    const auto cap_lags = static_cast<Index>(std::floor(rule.t_cap / dt_lag + 1e-9));
    auto ws = detail::make_qg_workspace(traj, dt_lag, cap_lags, qg_opt);

    TruncatedResponse out;
    out.curve.estimator = "quasi-gaussian";
    out.curve.base_x = std::move(base_x);
    out.curve.mats.reserve(block_lags * 4);

    double t_max = rule.t_cap;
    Index k = 0;
    out.curve.mats.push_back(ws.normalized(0));
    while (k < cap_lags) {
        const Index k_end = std::min(cap_lags, k + block_lags);
        double block_max = 0.0;
        for (Index i = k + 1; i <= k_end; ++i) {
            out.curve.mats.push_back(ws.normalized(i));
            block_max = std::max(block_max, out.curve.mats.back().norm());
        }
        if (block_max < rule.norm_threshold) {
            t_max = dt_lag * static_cast<double>(k);
            k = k_end;
            break;
        }
        k = k_end;
    }
    const Index stored = static_cast<Index>(out.curve.mats.size());
    out.curve.lags = Vector::LinSpaced(stored, 0.0, dt_lag * static_cast<double>(stored - 1));

    out.op = integrate_curve(out.curve, std::min(t_max, out.curve.extent()));
    out.op.provenance = "truncation: first 1-unit block with max ||C||_F < " +
                        std::to_string(rule.norm_threshold) + ", cap " +
                        std::to_string(rule.t_cap) + "; t_max = " + std::to_string(out.op.t_max);
    return out;
}

// ---------------------------------------------------------------------------
// Damping matrix H and the suppression diagnostic
// ---------------------------------------------------------------------------

/// H and the extremal eigenvalues that decide chaos suppression: a positive
/// definite symmetric part of the response operator forces the symmetric
/// part of H negative definite.
struct SuppressionDiagnostic {
    Matrix h;
    double min_sym_eig_c = 0.0;
    double max_sym_eig_h = 0.0;
};

/// H = -(lambda_x lambda_y / J) L C L^T for the block-sum coupling
/// (L y)_i = -sum_j y_{ij}; x and y are already the canonical energy
/// variables up to these scalar factors, so no S^{1/2} transforms appear.
inline SuppressionDiagnostic h_matrix(const ResponseOperator& op, const ModelParams& p) {
    const Index n_y = p.n_y();
    if (op.op.rows() != n_y || op.op.cols() != n_y)
        throw InvalidDimensionError("response operator dimension != n_y");
    const Index j = p.j;
    Matrix block_sums(p.n_x, p.n_x);
    for (Index a = 0; a < p.n_x; ++a)
        for (Index b = 0; b < p.n_x; ++b)
            block_sums(a, b) = op.op.block(a * j, b * j, j, j).sum();
    SuppressionDiagnostic diag;
    diag.h = -(p.lambda_x * p.lambda_y / static_cast<double>(j)) * block_sums;
    diag.min_sym_eig_c = min_sym_eig(op.op);
    diag.max_sym_eig_h = max_sym_eig(diag.h);
    return diag;
}

// ---------------------------------------------------------------------------
// Averaged slow dynamics
// ---------------------------------------------------------------------------

struct FastBudget {
    double t_run = 1000.0;
    double t_spinup = 100.0;
    double dt = 1e-3;
    std::uint64_t seed = 7;
    int n_batches = 20;
};

struct AveragedRhs {
    Vector value;
    Vector std_error;  // batch-means estimate on the coupling term
    Vector fast_mean;
};

namespace detail {

/// Runs `advance(t)` n_batches times, collecting the per-coordinate mean via
/// the observer with one batch per segment.
template <class Advance>
inline MeanStateObserver batched_mean(Index dim, int n_batches, double t_total, Advance&& advance) {
    MeanStateObserver obs(dim, n_batches);
    const double t_batch = t_total / n_batches;
    for (int b = 0; b < n_batches; ++b) {
        advance(t_batch, obs);
        obs.close_batch();
    }
    return obs;
}

inline Vector coupling_from_fast_mean(const Vector& fast_mean, const ModelParams& p) {
    Vector coupling(p.n_x);
    for (Index i = 0; i < p.n_x; ++i)
        coupling[i] = -(p.lambda_y / static_cast<double>(p.j)) *
                      fast_mean.segment(i * static_cast<Index>(p.j), p.j).sum();
    return coupling;
}

}  // namespace detail

/// The averaged slow right-hand side <F>(x): the rescaled L96 term plus the
/// coupling evaluated at the time mean of the fast limiting run with x
/// frozen. The standard error comes from batch means of the fast run.
inline AveragedRhs averaged_slow_rhs(const Vector& x, const ModelParams& p, const FastBudget& b) {
    p.validate();
    if (x.size() != p.n_x) throw InvalidDimensionError("x dimension mismatch");
    const FastLimitingSystem sys(p, x);
    IntegratorConfig cfg;
    cfg.dt = b.dt;
    cfg.sample_stride = 1 << 20;
    cfg.seed = b.seed;
    Rng rng(b.seed, 0xfa57);
    Vector z(sys.dim());
    for (Index i = 0; i < z.size(); ++i) z[i] = rng.uniform(-1e-3, 1e-3);
    z = integrate(sys, z, b.t_spinup, cfg).final_state();

    auto obs = detail::batched_mean(sys.dim(), b.n_batches, b.t_run, [&](double t, auto& o) {
        StepObserver* list[] = {&o};
        z = integrate(sys, z, t, cfg, list).final_state();
    });

    AveragedRhs out;
    out.fast_mean = obs.mean();
    out.value = rescaled_l96_rhs(x, p.calib_x) + detail::coupling_from_fast_mean(out.fast_mean, p);
    const Vector se = obs.std_error();
    out.std_error.resize(p.n_x);
    for (Index i = 0; i < p.n_x; ++i)
        out.std_error[i] = (p.lambda_y / static_cast<double>(p.j)) *
                           std::sqrt(se.segment(i * static_cast<Index>(p.j), p.j).squaredNorm());
    return out;
}

/// Same assembly with an Ornstein-Uhlenbeck fast subsystem driven by the
/// Lorenz coupling pattern (forcing lambda_x x_i on each fast block).
inline AveragedRhs averaged_slow_rhs_ou(const Vector& x, const ModelParams& p, const OUParams& q,
                                        const FastBudget& b) {
    if (x.size() != p.n_x || q.dim() != p.n_y())
        throw InvalidDimensionError("averaged_slow_rhs_ou dimension mismatch");
    q.validate();
    Vector forcing(q.dim());
    for (Index k = 0; k < forcing.size(); ++k)
        forcing[k] = p.lambda_x * x[k / static_cast<Index>(p.j)];

    IntegratorConfig cfg;
    cfg.dt = b.dt;
    cfg.sample_stride = 1 << 20;
    cfg.seed = b.seed;
    Rng rng(b.seed, 0x0u);
    Vector z = q.gamma.fullPivLu().solve(q.h + forcing);  // start at the stationary mean
    {
        Trajectory spin = simulate_ou(q, z, forcing, b.t_spinup, cfg, rng);
        z = spin.final_state();
    }
    const double sqrt_dt = std::sqrt(b.dt);
    Vector noise(q.noise_dim());
    auto obs = detail::batched_mean(q.dim(), b.n_batches, b.t_run, [&](double t, auto& o) {
        const auto steps = static_cast<std::size_t>(std::ceil(t / b.dt - 1e-9));
        for (std::size_t s = 0; s < steps; ++s) {
            for (Index i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
            z += b.dt * (q.h - q.gamma * z + forcing);
            if (q.sigma.size() > 0) z += sqrt_dt * (q.sigma * noise);
            o.observe(s, 0.0, z);
        }
    });

    AveragedRhs out;
    out.fast_mean = obs.mean();
    out.value = rescaled_l96_rhs(x, p.calib_x) + detail::coupling_from_fast_mean(out.fast_mean, p);
    const Vector se = obs.std_error();
    out.std_error.resize(p.n_x);
    for (Index i = 0; i < p.n_x; ++i)
        out.std_error[i] = (p.lambda_y / static_cast<double>(p.j)) *
                           std::sqrt(se.segment(i * static_cast<Index>(p.j), p.j).squaredNorm());
    return out;
}

/// Closed form of the OU variant: the stationary mean is
/// Gamma^{-1}(h + forcing).
inline Vector averaged_slow_rhs_ou_analytic(const Vector& x, const ModelParams& p,
                                            const OUParams& q) {
    if (x.size() != p.n_x || q.dim() != p.n_y())
        throw InvalidDimensionError("averaged_slow_rhs_ou_analytic dimension mismatch");
    Vector forcing(q.dim());
    for (Index k = 0; k < forcing.size(); ++k)
        forcing[k] = p.lambda_x * x[k / static_cast<Index>(p.j)];
    const Vector fast_mean = q.gamma.fullPivLu().solve(q.h + forcing);
    return rescaled_l96_rhs(x, p.calib_x) + detail::coupling_from_fast_mean(fast_mean, p);
}

// ---------------------------------------------------------------------------
// Averaged slow tangent propagation
// ---------------------------------------------------------------------------

using HField = std::function<Matrix(const Vector&)>;

inline HField frozen_h(Matrix h) {
    return [h = std::move(h)](const Vector&) { return h; };
}

/// Propagates the averaged slow tangent map
///   dTX/dt = (df/dx(x(t)) + H(x(t))) TX
/// along a stored slow trajectory with the same Heun scheme, stepping on the
/// trajectory's sample grid.
inline TangentMap propagate_averaged_tangent(const Trajectory& x_traj, const HField& h_field,
                                             const ModelParams& p) {
    if (x_traj.dim() != p.n_x) throw InvalidDimensionError("trajectory dimension != n_x");
    if (x_traj.n_samples() < 2) throw DegenerateInputError("trajectory too short");
    const double dt = x_traj.dt_sample;
    const Index n = p.n_x;

    Matrix m = Matrix::Identity(n, n);
    Matrix jac(n, n), a0(n, n), a1(n, n), k1(n, n);
    for (Index step = 0; step + 1 < x_traj.n_samples(); ++step) {
        const Vector x0 = x_traj.states.col(step);
        const Vector x1 = x_traj.states.col(step + 1);
        rescaled_l96_jacobian(x0, p.calib_x, jac);
        a0 = jac + h_field(x0);
        rescaled_l96_jacobian(x1, p.calib_x, jac);
        a1 = jac + h_field(x1);
        k1.noalias() = a0 * m;
        m += (0.5 * dt) * (k1 + a1 * (m + dt * k1));
        if (!m.allFinite())
            throw BlowUpError(static_cast<std::size_t>(step), dt * static_cast<double>(step),
                              "averaged tangent propagation blew up");
    }
    TangentMap out;
    out.base_state = x_traj.final_state();
    out.elapsed = dt * static_cast<double>(x_traj.n_samples() - 1);
    out.m = std::move(m);
    return out;
}

// ---------------------------------------------------------------------------
// Mean-stability probe
// ---------------------------------------------------------------------------

struct MeanStabilityOptions {
    double member_spacing = 0.5;
    double t_spinup = 100.0;
    /// Length of the unperturbed run that pins down the reference mean.
    double t_mean_run = 2000.0;
    double dt = 1e-3;
    std::uint64_t seed = 11;
    int n_grid = 11;
    unsigned threads = 1;
};

struct MeanStabilityResult {
    /// d/dt || <delta z> || right after the forcing is switched off
    /// (least-squares slope over the off window). Negative = mean stability.
    double slope = 0.0;
    double noise_floor = 0.0;
    bool conclusive = false;
    double response_norm = 0.0;
};

namespace detail {

struct ProbeAccumulator {
    std::vector<Vector> sum;       // per grid point
    Vector sum_sq_final;           // per coordinate, at the last grid point
    std::size_t members = 0;
};

inline MeanStabilityResult finish_probe(const ProbeAccumulator& acc, const Vector& ref_mean,
                                        double t_off_window, int n_grid) {
    const auto m = static_cast<double>(acc.members);
    Vector d(n_grid);
    for (int g = 0; g < n_grid; ++g) d[g] = (acc.sum[g] / m - ref_mean).norm();

    // Least-squares slope over the grid.
    const Vector t = Vector::LinSpaced(n_grid, 0.0, t_off_window);
    const double tm = t.mean(), dm = d.mean();
    const double slope = (t.array() - tm).cwiseProduct(d.array() - dm).sum() /
                         (t.array() - tm).square().sum();

    // Ensemble noise on the distance, from the member scatter at the end.
    const Vector mean_final = acc.sum[n_grid - 1] / m;
    const Vector var_final = acc.sum_sq_final / m - mean_final.cwiseAbs2();
    const double se_norm = std::sqrt(std::max(0.0, var_final.sum() / m));

    MeanStabilityResult out;
    out.slope = slope;
    out.response_norm = d[0];
    out.noise_floor = 2.0 * se_norm / t_off_window;
    out.conclusive = std::abs(slope) > out.noise_floor && d[0] > 2.0 * se_norm;
    return out;
}

}  // namespace detail

/// Statistical mean-stability of the fast limiting dynamics: settle an
/// ensemble on the attractor of the system forced by the constant delta_f
/// (snapshots over a window of length t_on), switch the forcing off, and
/// track the decay of || <z>(t) - z_bar || over t_off_window. A negative
/// slope is the mean-stability property; the response operator's positive
/// definiteness implies it.
inline MeanStabilityResult mean_stability_probe(const ModelParams& p, const Vector& x_fixed,
                                                const Vector& delta_f, double t_on,
                                                double t_off_window,
                                                const MeanStabilityOptions& opt = {}) {
    p.validate_fast();
    const FastLimitingSystem base_sys(p, x_fixed);
    const Index n = base_sys.dim();
    if (delta_f.size() != n) throw InvalidDimensionError("delta_f dimension mismatch");

    IntegratorConfig cfg;
    cfg.dt = opt.dt;
    cfg.sample_stride = 1 << 20;
    cfg.seed = opt.seed;

    // Reference mean of the unperturbed system.
    Rng rng(opt.seed, 0xfeed);
    Vector z0(n);
    for (Index i = 0; i < n; ++i) z0[i] = rng.uniform(-1e-3, 1e-3);
    Vector z = integrate(base_sys, z0, opt.t_spinup, cfg).final_state();
    MeanStateObserver ref_obs(n, 10);
    {
        StepObserver* list[] = {&ref_obs};
        integrate(base_sys, z, opt.t_mean_run, cfg, list);
    }
    const Vector ref_mean = ref_obs.mean();

    // Ensemble snapshots on the perturbed attractor.
    auto forced = make_system(
        [&](const Vector& s) {
            Vector ds;
            base_sys.eval(s, ds);
            return Vector(ds + delta_f);
        },
        n);
    const int n_members = std::max(2, static_cast<int>(t_on / opt.member_spacing));
    std::vector<Vector> members;
    members.reserve(n_members);
    Vector s = integrate(forced, z, opt.t_spinup, cfg).final_state();
    members.push_back(s);
    for (int m = 1; m < n_members; ++m) {
        s = integrate(forced, s, opt.member_spacing, cfg).final_state();
        members.push_back(s);
    }

    // Switch the forcing off and track the ensemble mean.
    detail::ProbeAccumulator acc;
    acc.sum.assign(opt.n_grid, Vector::Zero(n));
    acc.sum_sq_final = Vector::Zero(n);
    acc.members = members.size();
    const double t_grid = t_off_window / (opt.n_grid - 1);

    const int batch = 256;
    std::vector<Matrix> slots(batch);
    std::vector<Vector> slots_sq(batch);
    for (int b0 = 0; b0 < n_members; b0 += batch) {
        const int b1 = std::min(n_members, b0 + batch);
        parallel_for(static_cast<std::size_t>(b1 - b0), opt.threads, [&](std::size_t off) {
            Matrix& rec = slots[off];
            rec.resize(n, opt.n_grid);
            Vector zm = members[b0 + static_cast<int>(off)];
            rec.col(0) = zm;
            for (int g = 1; g < opt.n_grid; ++g) {
                zm = integrate(base_sys, zm, t_grid, cfg).final_state();
                rec.col(g) = zm;
            }
            slots_sq[off] = rec.col(opt.n_grid - 1).cwiseAbs2();
        });
        for (int m = b0; m < b1; ++m) {
            for (int g = 0; g < opt.n_grid; ++g) acc.sum[g] += slots[m - b0].col(g);
            acc.sum_sq_final += slots_sq[m - b0];
        }
    }
    return detail::finish_probe(acc, ref_mean, t_off_window, opt.n_grid);
}

/// Ornstein-Uhlenbeck version of the probe (Euler-Maruyama members with
/// independent noise streams). The OU response Gamma^{-1} has a positive
/// definite symmetric part, so the slope is provably negative.
inline MeanStabilityResult mean_stability_probe_ou(const OUParams& q, const Vector& delta_f,
                                                   double t_on, double t_off_window,
                                                   const MeanStabilityOptions& opt = {}) {
    q.validate();
    const Index n = q.dim();
    if (delta_f.size() != n) throw InvalidDimensionError("delta_f dimension mismatch");
    const Vector zero = Vector::Zero(n);

    IntegratorConfig cfg;
    cfg.dt = opt.dt;
    cfg.sample_stride = 1 << 20;
    cfg.seed = opt.seed;

    const Vector ref_mean_exact = q.gamma.fullPivLu().solve(q.h);

    Rng base_rng(opt.seed, 0xfeed);
    Vector s = ref_mean_exact;
    s = simulate_ou(q, s, delta_f, opt.t_spinup, cfg, base_rng).final_state();
    const int n_members = std::max(2, static_cast<int>(t_on / opt.member_spacing));
    std::vector<Vector> members;
    members.reserve(n_members);
    members.push_back(s);
    for (int m = 1; m < n_members; ++m) {
        s = simulate_ou(q, s, delta_f, opt.member_spacing, cfg, base_rng).final_state();
        members.push_back(s);
    }

    detail::ProbeAccumulator acc;
    acc.sum.assign(opt.n_grid, Vector::Zero(n));
    acc.sum_sq_final = Vector::Zero(n);
    acc.members = members.size();
    const double t_grid = t_off_window / (opt.n_grid - 1);

    const int batch = 256;
    std::vector<Matrix> slots(batch);
    std::vector<Vector> slots_sq(batch);
    for (int b0 = 0; b0 < n_members; b0 += batch) {
        const int b1 = std::min(n_members, b0 + batch);
        parallel_for(static_cast<std::size_t>(b1 - b0), opt.threads, [&](std::size_t off) {
            const auto m_index = static_cast<std::uint64_t>(b0) + off;
            Rng member_rng(opt.seed, 0x0ff'0000ull + m_index);
            Matrix& rec = slots[off];
            rec.resize(n, opt.n_grid);
            Vector zm = members[m_index];
            rec.col(0) = zm;
            for (int g = 1; g < opt.n_grid; ++g) {
                zm = simulate_ou(q, zm, zero, t_grid, cfg, member_rng).final_state();
                rec.col(g) = zm;
            }
            slots_sq[off] = rec.col(opt.n_grid - 1).cwiseAbs2();
        });
        for (int m = b0; m < b1; ++m) {
            for (int g = 0; g < opt.n_grid; ++g) acc.sum[g] += slots[m - b0].col(g);
            acc.sum_sq_final += slots_sq[m - b0];
        }
    }
    return detail::finish_probe(acc, ref_mean_exact, t_off_window, opt.n_grid);
}

// ---------------------------------------------------------------------------
// OU analytic oracle
// ---------------------------------------------------------------------------

/// For the OU process the response curve is e^{-s Gamma} and its infinite
/// time integral is Gamma^{-1}, exactly.
inline ResponseOperator ou_response_analytic(const OUParams& q) {
    q.validate();
    Eigen::FullPivLU<Matrix> lu(q.gamma);
    if (!lu.isInvertible()) throw SingularMatrixError("gamma is singular");
    ResponseOperator op;
    op.op = lu.inverse();
    op.t_max = std::numeric_limits<double>::infinity();
    op.quadrature = "analytic";
    op.estimator = "ou-analytic";
    return op;
}

}  // namespace slowfast
