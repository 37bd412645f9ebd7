#pragma once

#include "slowfast/common.hpp"
#include "slowfast/dynamics.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace slowfast {

struct IntegratorConfig {
    double dt = 1e-4;
    int sample_stride = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(dt > 0.0)) throw ValidationError("dt must be > 0");
        if (sample_stride < 1) throw ValidationError("sample_stride must be >= 1");
    }
};

/// Uniformly sampled run. Column k of `states` is the state at
/// t0 + k * dt_sample.
struct Trajectory {
    double t0 = 0.0;
    double dt_sample = 0.0;
    Matrix states;
    IntegratorConfig cfg;
    std::string model_tag;

    Index dim() const { return states.rows(); }
    Index n_samples() const { return states.cols(); }
    double t_at(Index k) const { return t0 + dt_sample * static_cast<double>(k); }
    Vector final_state() const { return states.col(states.cols() - 1); }
};

/// Streaming per-step accumulator; receives every step, not just stored
/// samples (step 0 delivers the initial state).
class StepObserver {
public:
    virtual ~StepObserver() = default;
    virtual void observe(std::size_t step, double t, const Vector& s) = 0;
};

/// Pooled mean/variance over all coordinates and steps, population (1/T)
/// normalization.
class PooledMomentsObserver : public StepObserver {
public:
    void observe(std::size_t, double, const Vector& s) override {
        count_ += static_cast<double>(s.size());
        sum_ += s.sum();
        sum_sq_ += s.squaredNorm();
    }
    double count() const { return count_; }
    double mean() const { return sum_ / count_; }
    double variance() const {
        const double m = mean();
        return sum_sq_ / count_ - m * m;
    }

private:
    double count_ = 0.0;
    double sum_ = 0.0;
    double sum_sq_ = 0.0;
};

/// Per-coordinate time mean, with batch means for a standard-error estimate.
class MeanStateObserver : public StepObserver {
public:
    explicit MeanStateObserver(Index dim, int n_batches = 20)
        : sum_(Vector::Zero(dim)), batch_sum_(Vector::Zero(dim)) {
        batch_means_.reserve(static_cast<std::size_t>(n_batches));
    }

    void observe(std::size_t, double, const Vector& s) override {
        sum_ += s;
        batch_sum_ += s;
        ++count_;
        ++batch_count_;
    }

    /// Closes the current batch; the integrate() driver cannot know batch
    /// boundaries, so callers flush at fixed step intervals or on completion.
    void close_batch() {
        if (batch_count_ == 0) return;
        batch_means_.push_back(batch_sum_ / static_cast<double>(batch_count_));
        batch_sum_.setZero();
        batch_count_ = 0;
    }

    std::size_t count() const { return count_; }
    Vector mean() const { return sum_ / static_cast<double>(count_); }

    /// Standard error of the mean from batch-to-batch scatter.
    Vector std_error() const {
        if (batch_means_.size() < 2) return Vector::Constant(sum_.size(), std::nan(""));
        Vector m = Vector::Zero(sum_.size());
        for (const auto& b : batch_means_) m += b;
        m /= static_cast<double>(batch_means_.size());
        Vector var = Vector::Zero(sum_.size());
        for (const auto& b : batch_means_) var += (b - m).cwiseAbs2();
        var /= static_cast<double>(batch_means_.size());
        return (var / static_cast<double>(batch_means_.size())).cwiseSqrt();
    }

private:
    Vector sum_;
    Vector batch_sum_;
    std::size_t count_ = 0;
    std::size_t batch_count_ = 0;
    std::vector<Vector> batch_means_;
};

// ---------------------------------------------------------------------------
// RK2 (Heun / explicit trapezoid)
// ---------------------------------------------------------------------------
// The fixed scheme is k1 = f(s), k2 = f(s + dt k1), s <- s + dt/2 (k1 + k2).
// Heun is pinned (midpoint is equally 2nd order) so runs are bit-reproducible.

namespace detail {

template <class System>
inline void rk2_step_inplace(const System& sys, Vector& s, double dt, Vector& k1, Vector& k2,
                             Vector& tmp) {
    sys.eval(s, k1);
    tmp = s + dt * k1;
    sys.eval(tmp, k2);
    s += (0.5 * dt) * (k1 + k2);
}

}  // namespace detail

/// Single Heun step for a callable right-hand side; throws BlowUpError if the
/// result is non-finite (time reported relative to the step start).
template <class Rhs>
inline Vector rk2_step(Rhs&& rhs, const Vector& s, double dt) {
    if (!(dt > 0.0)) throw ValidationError("dt must be > 0");
    const Vector k1 = rhs(s);
    const Vector k2 = rhs(s + dt * k1);
    Vector out = s + (0.5 * dt) * (k1 + k2);
    if (!all_finite(out)) throw BlowUpError(1, dt, "non-finite state after one RK2 step");
    return out;
}

/// Integrates ceil(t_len/dt) Heun steps. Observers see every step; samples
/// are stored every cfg.sample_stride steps (the initial state included).
/// Splitting a run into consecutive calls reproduces the final state bitwise.
template <class System>
Trajectory integrate(const System& sys, const Vector& s0, double t_len, const IntegratorConfig& cfg,
                     std::span<StepObserver* const> observers = {}, double t0 = 0.0) {
    cfg.validate();
    if (!(t_len > 0.0)) throw ValidationError("t_len must be > 0");
    if (s0.size() != sys.dim()) throw InvalidDimensionError("initial state dimension mismatch");

    const auto n_steps =
        static_cast<std::size_t>(std::ceil(t_len / cfg.dt - 1e-9));
    const std::size_t n_stored = n_steps / static_cast<std::size_t>(cfg.sample_stride) + 1;

    Trajectory traj;
    traj.t0 = t0;
    traj.dt_sample = cfg.dt * cfg.sample_stride;
    traj.cfg = cfg;
    traj.states.resize(s0.size(), static_cast<Index>(n_stored));

    Vector s = s0;
    Vector k1(s.size()), k2(s.size()), tmp(s.size());
    traj.states.col(0) = s;
    for (auto* obs : observers) obs->observe(0, t0, s);

    Index stored = 1;
    for (std::size_t step = 1; step <= n_steps; ++step) {
        detail::rk2_step_inplace(sys, s, cfg.dt, k1, k2, tmp);
        const double t = t0 + cfg.dt * static_cast<double>(step);
        if (!all_finite(s))
            throw BlowUpError(step, t, "integration blew up at step " + std::to_string(step));
        for (auto* obs : observers) obs->observe(step, t, s);
        if (step % static_cast<std::size_t>(cfg.sample_stride) == 0) {
            traj.states.col(stored++) = s;
        }
    }
    traj.states.conservativeResize(Eigen::NoChange, stored);
    return traj;
}

// ---------------------------------------------------------------------------
// Tangent propagation
// ---------------------------------------------------------------------------

/// Derivative of the (discrete) flow with respect to the initial condition,
/// co-integrated with the base state by the same Heun scheme:
///   k1 = J(s) M, k2 = J(s + dt f(s)) (M + dt k1), M <- M + dt/2 (k1 + k2),
/// which is exactly the Jacobian of the discrete step map.
struct TangentMap {
    Vector base_state;
    double elapsed = 0.0;
    Matrix m;
};

template <class System>
TangentMap propagate_tangent(const System& sys, const Vector& s0, double t_len,
                             const IntegratorConfig& cfg) {
    cfg.validate();
    if (s0.size() != sys.dim()) throw InvalidDimensionError("initial state dimension mismatch");

    TangentMap result;
    result.base_state = s0;
    result.m = Matrix::Identity(s0.size(), s0.size());
    result.elapsed = 0.0;
    if (t_len <= 0.0) return result;

    const auto n_steps = static_cast<std::size_t>(std::ceil(t_len / cfg.dt - 1e-9));
    Vector s = s0;
    Vector k1(s.size()), k2(s.size()), s_mid(s.size());
    Matrix jac(s.size(), s.size()), jac_mid(s.size(), s.size());
    Matrix m1(s.size(), s.size()), m_mid(s.size(), s.size()), m2(s.size(), s.size());

    for (std::size_t step = 1; step <= n_steps; ++step) {
        sys.eval(s, k1);
        sys.jacobian(s, jac);
        m1.noalias() = jac * result.m;
        s_mid = s + cfg.dt * k1;
        m_mid = result.m + cfg.dt * m1;
        sys.eval(s_mid, k2);
        sys.jacobian(s_mid, jac_mid);
        m2.noalias() = jac_mid * m_mid;
        s += (0.5 * cfg.dt) * (k1 + k2);
        result.m += (0.5 * cfg.dt) * (m1 + m2);
        if (!all_finite(s) || !result.m.allFinite())
            throw BlowUpError(step, cfg.dt * static_cast<double>(step),
                              "tangent propagation blew up at step " + std::to_string(step));
    }
    result.base_state = s;
    result.elapsed = cfg.dt * static_cast<double>(n_steps);
    return result;
}

// ---------------------------------------------------------------------------
// Euler-Maruyama
// ---------------------------------------------------------------------------

/// z + dt (h - Gamma z + forcing) + sqrt(dt) sigma * noise_draw.
inline Vector euler_maruyama_step(const OUParams& q, const Vector& z, const Vector& forcing,
                                  double dt, const Vector& noise_draw) {
    if (!(dt > 0.0)) throw ValidationError("dt must be > 0");
    if (noise_draw.size() != q.noise_dim())
        throw InvalidDimensionError("noise_draw length must equal the noise dimension");
    Vector out = z + dt * ou_drift(z, q, forcing);
    if (q.sigma.size() > 0) out += std::sqrt(dt) * (q.sigma * noise_draw);
    return out;
}

/// Drives the OU process and stores samples every `sample_stride` steps.
inline Trajectory simulate_ou(const OUParams& q, const Vector& z0, const Vector& forcing,
                              double t_len, const IntegratorConfig& cfg, Rng& rng) {
    cfg.validate();
    q.validate();
    if (z0.size() != q.dim() || forcing.size() != q.dim())
        throw InvalidDimensionError("simulate_ou dimension mismatch");
    const auto n_steps = static_cast<std::size_t>(std::ceil(t_len / cfg.dt - 1e-9));
    const std::size_t n_stored = n_steps / static_cast<std::size_t>(cfg.sample_stride) + 1;

    Trajectory traj;
    traj.t0 = 0.0;
    traj.dt_sample = cfg.dt * cfg.sample_stride;
    traj.cfg = cfg;
    traj.model_tag = "ou";
    traj.states.resize(z0.size(), static_cast<Index>(n_stored));

    const double sqrt_dt = std::sqrt(cfg.dt);
    Vector z = z0;
    Vector noise(q.noise_dim());
    traj.states.col(0) = z;
    Index stored = 1;
    for (std::size_t step = 1; step <= n_steps; ++step) {
        for (Index i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
        z += cfg.dt * (q.h - q.gamma * z + forcing);
        if (q.sigma.size() > 0) z += sqrt_dt * (q.sigma * noise);
        if (!all_finite(z))
            throw BlowUpError(step, cfg.dt * static_cast<double>(step), "OU path blew up");
        if (step % static_cast<std::size_t>(cfg.sample_stride) == 0) traj.states.col(stored++) = z;
    }
    traj.states.conservativeResize(Eigen::NoChange, stored);
    return traj;
}

}  // namespace slowfast
