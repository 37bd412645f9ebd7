#pragma once

#include "slowfast/calibration.hpp"
#include "slowfast/common.hpp"

#include <string>
#include <utility>

namespace slowfast {

// ---------------------------------------------------------------------------
// Model parameterization
// ---------------------------------------------------------------------------

/// Full parameterization of the two-scale rescaled Lorenz system: n_x slow
/// variables, j fast variables per slow one (n_y = n_x * j), forcings f_x and
/// f_y, coupling strengths lambda_x / lambda_y, time-scale ratio epsilon, and
/// the rescaling constants of the two uncoupled models.
struct ModelParams {
    int n_x = 0;
    int j = 0;
    double f_x = 0.0;
    double f_y = 0.0;
    double lambda_x = 0.0;
    double lambda_y = 0.0;
    double epsilon = 1.0;
    CalibrationRecord calib_x;
    CalibrationRecord calib_y;

    int n_y() const { return n_x * j; }
    int dim() const { return n_x + n_y(); }

    /// Checks the invariants needed by the coupled model. The fast
    /// subsystem alone only needs validate_fast(): a frozen-x fast ring is
    /// well defined for any n_x >= 1.
    void validate() const {
        if (n_x < 4)
            throw InvalidDimensionError("n_x must be >= 4, got " + std::to_string(n_x));
        validate_fast();
        if (calib_x.beta <= 0.0) throw DegenerateInputError("calib_x.beta must be > 0");
    }

    void validate_fast() const {
        if (n_x < 1) throw InvalidDimensionError("n_x must be >= 1");
        if (j < 1) throw InvalidDimensionError("j must be >= 1, got " + std::to_string(j));
        if (n_y() < 4)
            throw InvalidDimensionError("fast ring needs n_x*j >= 4, got " + std::to_string(n_y()));
        if (epsilon <= 0.0) throw DegenerateInputError("epsilon must be > 0");
        if (calib_y.beta <= 0.0) throw DegenerateInputError("calib_y.beta must be > 0");
    }
};

/// Slow/fast state pair. Fast variables are stored row-major by slow index,
/// flat index k = i*J + j, so the cross-block boundary condition
/// y_{i,J+1} = y_{i+1,1} is plain cyclic indexing over length n_x*J.
struct State {
    Vector x;
    Vector y;
};

inline Vector pack(const State& s) {
    Vector v(s.x.size() + s.y.size());
    v.head(s.x.size()) = s.x;
    v.tail(s.y.size()) = s.y;
    return v;
}

inline State unpack(const Vector& v, Index n_x) {
    return State{v.head(n_x), v.tail(v.size() - n_x)};
}

// ---------------------------------------------------------------------------
// Right-hand sides
// ---------------------------------------------------------------------------

/// Uncoupled Lorenz-96: dx_i = x_{i-1}(x_{i+1} - x_{i-2}) - x_i + f,
/// cyclic indices.
inline void l96_rhs(const Vector& x, double f, Vector& out) {
    const Index n = x.size();
    if (n < 4) throw InvalidDimensionError("l96_rhs needs length >= 4");
    out.resize(n);
    for (Index i = 0; i < n; ++i) {
        const double xm1 = x[wrap(i - 1, n)];
        const double xp1 = x[wrap(i + 1, n)];
        const double xm2 = x[wrap(i - 2, n)];
        out[i] = xm1 * (xp1 - xm2) - x[i] + f;
    }
}

inline Vector l96_rhs(const Vector& x, double f) {
    Vector out;
    l96_rhs(x, f, out);
    return out;
}

/// Rescaled Lorenz-96 (zero-mean, unit-variance variables q):
///   dq_i = q_{i-1}(q_{i+1} - q_{i-2})
///        + (1/beta) [ mean (q_{i+1} - q_{i-2}) - q_i ] + (f - mean)/beta^2.
inline void rescaled_l96_rhs(const Vector& q, const CalibrationRecord& calib, Vector& out) {
    const Index n = q.size();
    if (n < 4) throw InvalidDimensionError("rescaled_l96_rhs needs length >= 4");
    if (calib.beta == 0.0) throw DegenerateInputError("degenerate calibration: beta = 0");
    const double inv_beta = 1.0 / calib.beta;
    const double c = (calib.f - calib.mean) * inv_beta * inv_beta;
    out.resize(n);
    for (Index i = 0; i < n; ++i) {
        const double qm1 = q[wrap(i - 1, n)];
        const double qp1 = q[wrap(i + 1, n)];
        const double qm2 = q[wrap(i - 2, n)];
        const double adv = qp1 - qm2;
        out[i] = qm1 * adv + inv_beta * (calib.mean * adv - q[i]) + c;
    }
}

inline Vector rescaled_l96_rhs(const Vector& q, const CalibrationRecord& calib) {
    Vector out;
    rescaled_l96_rhs(q, calib, out);
    return out;
}

/// Jacobian of rescaled_l96_rhs. Entries accumulate with += so coincident
/// stencil indices on tiny rings stay correct.
inline void rescaled_l96_jacobian(const Vector& q, const CalibrationRecord& calib, Matrix& jac) {
    const Index n = q.size();
    if (n < 4) throw InvalidDimensionError("rescaled_l96_jacobian needs length >= 4");
    if (calib.beta == 0.0) throw DegenerateInputError("degenerate calibration: beta = 0");
    const double inv_beta = 1.0 / calib.beta;
    jac.setZero(n, n);
    for (Index i = 0; i < n; ++i) {
        const Index im1 = wrap(i - 1, n), ip1 = wrap(i + 1, n), im2 = wrap(i - 2, n);
        jac(i, im1) += q[ip1] - q[im2];
        jac(i, ip1) += q[im1] + calib.mean * inv_beta;
        jac(i, im2) += -q[im1] - calib.mean * inv_beta;
        jac(i, i) += -inv_beta;
    }
}

namespace detail {

/// The rescaled fast ring stencil shared by the coupled fast block and the
/// fast limiting system; the neighbor pattern is z_{k+1}(z_{k-1} - z_{k+2}).
/// `extra[k]` is added per coordinate (coupling or frozen-x term).
template <class Extra>
inline void fast_ring_rhs(const Vector& z, const CalibrationRecord& calib, Extra&& extra,
                          Vector& out) {
    const Index n = z.size();
    const double inv_beta = 1.0 / calib.beta;
    const double c = (calib.f - calib.mean) * inv_beta * inv_beta;
    out.resize(n);
    for (Index k = 0; k < n; ++k) {
        const double zp1 = z[wrap(k + 1, n)];
        const double zm1 = z[wrap(k - 1, n)];
        const double zp2 = z[wrap(k + 2, n)];
        const double adv = zm1 - zp2;
        out[k] = zp1 * adv + inv_beta * (calib.mean * adv - z[k]) + c + extra(k);
    }
}

}  // namespace detail

/// Fast limiting dynamics at epsilon = 1 (its own time variable), with the
/// slow state frozen as an external parameter:
///   dz_{i,j} = z_{i,j+1}(z_{i,j-1} - z_{i,j+2})
///            + (1/beta_y)[ mean_y (z_{i,j-1} - z_{i,j+2}) - z_{i,j} ]
///            + (f_y - mean_y)/beta_y^2 + lambda_x x_i.
inline void fast_limiting_rhs(const Vector& z, const Vector& x_fixed, const ModelParams& p,
                              Vector& out) {
    p.validate_fast();
    if (z.size() != p.n_y())
        throw InvalidDimensionError("fast state length " + std::to_string(z.size()) +
                                    " != n_x*j = " + std::to_string(p.n_y()));
    if (x_fixed.size() != p.n_x)
        throw InvalidDimensionError("frozen slow state length mismatch");
    const Index j = p.j;
    detail::fast_ring_rhs(
        z, p.calib_y, [&](Index k) { return p.lambda_x * x_fixed[k / j]; }, out);
}

inline Vector fast_limiting_rhs(const Vector& z, const Vector& x_fixed, const ModelParams& p) {
    Vector out;
    fast_limiting_rhs(z, x_fixed, p, out);
    return out;
}

/// Jacobian of the fast limiting system with respect to z (the frozen-x term
/// is constant and drops out).
inline void fast_limiting_jacobian(const Vector& z, const ModelParams& p, Matrix& jac) {
    const Index n = z.size();
    if (n != p.n_y()) throw InvalidDimensionError("fast state length mismatch");
    const double inv_beta = 1.0 / p.calib_y.beta;
    const double mean_term = p.calib_y.mean * inv_beta;
    jac.setZero(n, n);
    for (Index k = 0; k < n; ++k) {
        const Index kp1 = wrap(k + 1, n), km1 = wrap(k - 1, n), kp2 = wrap(k + 2, n);
        jac(k, kp1) += z[km1] - z[kp2];
        jac(k, km1) += z[kp1] + mean_term;
        jac(k, kp2) += -z[kp1] - mean_term;
        jac(k, k) += -inv_beta;
    }
}

/// Two-scale rescaled Lorenz model. The slow block is the rescaled L96 plus
/// the coupling sum -(lambda_y/J) sum_j y_{i,j}; the fast block is the fast
/// ring plus lambda_x x_i, all divided by epsilon. `advection_only` drops
/// every constant and linear term (forcing, damping, mean shifts), leaving
/// the quadratic advection plus coupling, which conserves
/// E = E_x + epsilon E_y exactly.
inline void two_scale_rhs(const State& s, const ModelParams& p, State& ds,
                          bool advection_only = false) {
    p.validate();
    if (s.x.size() != p.n_x || s.y.size() != p.n_y())
        throw InvalidDimensionError("state dimensions do not match params");
    const Index n_x = p.n_x;
    const Index j = p.j;
    ds.x.resize(n_x);
    ds.y.resize(p.n_y());

    if (advection_only) {
        for (Index i = 0; i < n_x; ++i) {
            const double xm1 = s.x[wrap(i - 1, n_x)];
            const double xp1 = s.x[wrap(i + 1, n_x)];
            const double xm2 = s.x[wrap(i - 2, n_x)];
            ds.x[i] = xm1 * (xp1 - xm2);
        }
        const Index n = s.y.size();
        for (Index k = 0; k < n; ++k) {
            const double zp1 = s.y[wrap(k + 1, n)];
            const double zm1 = s.y[wrap(k - 1, n)];
            const double zp2 = s.y[wrap(k + 2, n)];
            ds.y[k] = zp1 * (zm1 - zp2);
        }
    } else {
        rescaled_l96_rhs(s.x, p.calib_x, ds.x);
        detail::fast_ring_rhs(
            s.y, p.calib_y, [&](Index) { return 0.0; }, ds.y);
    }

    const double coupling = p.lambda_y / static_cast<double>(j);
    for (Index i = 0; i < n_x; ++i) {
        ds.x[i] -= coupling * s.y.segment(i * j, j).sum();
    }
    const double inv_eps = 1.0 / p.epsilon;
    for (Index k = 0; k < s.y.size(); ++k) {
        ds.y[k] = inv_eps * (ds.y[k] + p.lambda_x * s.x[k / j]);
    }
}

inline State two_scale_rhs(const State& s, const ModelParams& p) {
    State ds;
    two_scale_rhs(s, p, ds);
    return ds;
}

// ---------------------------------------------------------------------------
// Flat-vector system adapters for the integrator
// ---------------------------------------------------------------------------

class TwoScaleSystem {
public:
    explicit TwoScaleSystem(ModelParams p, bool advection_only = false)
        : p_(std::move(p)), advection_only_(advection_only) {
        p_.validate();
    }

    Index dim() const { return p_.dim(); }
    Index n_slow() const { return p_.n_x; }
    const ModelParams& params() const { return p_; }

    void eval(const Vector& s, Vector& ds) const {
        ds.resize(dim());
        const Index n_x = p_.n_x;
        const Index n_y = p_.n_y();
        const Index j = p_.j;
        const auto x = s.head(n_x);
        const auto y = s.tail(n_y);
        const double inv_eps = 1.0 / p_.epsilon;
        const double coupling = p_.lambda_y / static_cast<double>(j);

        if (advection_only_) {
            for (Index i = 0; i < n_x; ++i) {
                const double xm1 = x[wrap(i - 1, n_x)];
                const double xp1 = x[wrap(i + 1, n_x)];
                const double xm2 = x[wrap(i - 2, n_x)];
                ds[i] = xm1 * (xp1 - xm2) - coupling * y.segment(i * j, j).sum();
            }
            for (Index k = 0; k < n_y; ++k) {
                const double zp1 = y[wrap(k + 1, n_y)];
                const double zm1 = y[wrap(k - 1, n_y)];
                const double zp2 = y[wrap(k + 2, n_y)];
                ds[n_x + k] = inv_eps * (zp1 * (zm1 - zp2) + p_.lambda_x * x[k / j]);
            }
            return;
        }

        const double inv_bx = 1.0 / p_.calib_x.beta;
        const double cx = (p_.calib_x.f - p_.calib_x.mean) * inv_bx * inv_bx;
        for (Index i = 0; i < n_x; ++i) {
            const double xm1 = x[wrap(i - 1, n_x)];
            const double xp1 = x[wrap(i + 1, n_x)];
            const double xm2 = x[wrap(i - 2, n_x)];
            const double adv = xp1 - xm2;
            ds[i] = xm1 * adv + inv_bx * (p_.calib_x.mean * adv - x[i]) + cx -
                    coupling * y.segment(i * j, j).sum();
        }
        const double inv_by = 1.0 / p_.calib_y.beta;
        const double cy = (p_.calib_y.f - p_.calib_y.mean) * inv_by * inv_by;
        for (Index k = 0; k < n_y; ++k) {
            const double zp1 = y[wrap(k + 1, n_y)];
            const double zm1 = y[wrap(k - 1, n_y)];
            const double zp2 = y[wrap(k + 2, n_y)];
            const double adv = zm1 - zp2;
            ds[n_x + k] = inv_eps * (zp1 * adv + inv_by * (p_.calib_y.mean * adv - y[k]) + cy +
                                     p_.lambda_x * x[k / j]);
        }
    }

private:
    ModelParams p_;
    bool advection_only_;
};

class RescaledL96System {
public:
    explicit RescaledL96System(CalibrationRecord calib, Index n) : calib_(std::move(calib)), n_(n) {
        if (n_ < 4) throw InvalidDimensionError("RescaledL96System needs n >= 4");
        if (calib_.beta <= 0.0) throw DegenerateInputError("degenerate calibration: beta <= 0");
    }

    Index dim() const { return n_; }
    Index n_slow() const { return n_; }
    const CalibrationRecord& calib() const { return calib_; }

    void eval(const Vector& s, Vector& ds) const { rescaled_l96_rhs(s, calib_, ds); }
    void jacobian(const Vector& s, Matrix& jac) const { rescaled_l96_jacobian(s, calib_, jac); }

private:
    CalibrationRecord calib_;
    Index n_;
};

class L96System {
public:
    L96System(double f, Index n) : f_(f), n_(n) {
        if (n_ < 4) throw InvalidDimensionError("L96System needs n >= 4");
    }

    Index dim() const { return n_; }
    void eval(const Vector& s, Vector& ds) const { l96_rhs(s, f_, ds); }

private:
    double f_;
    Index n_;
};

/// Fast limiting system at epsilon = 1; lags are in fast time units. Callers
/// convert to slow time (multiply by epsilon) only for reporting.
class FastLimitingSystem {
public:
    FastLimitingSystem(ModelParams p, Vector x_fixed)
        : p_(std::move(p)), x_fixed_(std::move(x_fixed)) {
        p_.validate_fast();
        if (x_fixed_.size() != p_.n_x) throw InvalidDimensionError("frozen slow state mismatch");
    }

    Index dim() const { return p_.n_y(); }
    const ModelParams& params() const { return p_; }
    const Vector& x_fixed() const { return x_fixed_; }

    void eval(const Vector& z, Vector& dz) const {
        const Index j = p_.j;
        detail::fast_ring_rhs(
            z, p_.calib_y, [&](Index k) { return p_.lambda_x * x_fixed_[k / j]; }, dz);
    }

    void jacobian(const Vector& z, Matrix& jac) const { fast_limiting_jacobian(z, p_, jac); }

private:
    ModelParams p_;
    Vector x_fixed_;
};

/// Wraps a plain callable Vector -> Vector as a system (test convenience).
template <class Fn>
class FnSystem {
public:
    FnSystem(Fn fn, Index dim) : fn_(std::move(fn)), dim_(dim) {}
    Index dim() const { return dim_; }
    void eval(const Vector& s, Vector& ds) const { ds = fn_(s); }

private:
    Fn fn_;
    Index dim_;
};

template <class Fn>
FnSystem<Fn> make_system(Fn fn, Index dim) {
    return FnSystem<Fn>(std::move(fn), dim);
}

// ---------------------------------------------------------------------------
// Energy
// ---------------------------------------------------------------------------

struct EnergyBreakdown {
    double e = 0.0;
    double e_x = 0.0;
    double e_y = 0.0;
};

/// E_x = (lambda_x/2) sum x_i^2, E_y = (lambda_y/2J) sum y_{ij}^2,
/// E = E_x + epsilon * E_y. The advection-only two-scale flow conserves E.
inline EnergyBreakdown total_energy(const State& s, const ModelParams& p) {
    if (s.x.size() != p.n_x || s.y.size() != p.n_y())
        throw InvalidDimensionError("state dimensions do not match params");
    EnergyBreakdown e;
    e.e_x = 0.5 * p.lambda_x * s.x.squaredNorm();
    e.e_y = 0.5 * p.lambda_y / static_cast<double>(p.j) * s.y.squaredNorm();
    e.e = e.e_x + p.epsilon * e.e_y;
    return e;
}

// ---------------------------------------------------------------------------
// Generic linear energy-preserving coupling
// ---------------------------------------------------------------------------

/// Coupling data (L, S_x, S_y) for the identity
///   x^T S_x f' + y^T S_y g' = 0,
/// realized by f' = S_x^{-1/2} L S_y^{1/2} y and g' = -S_y^{-1/2} L^T S_x^{1/2} x.
struct CouplingSpec {
    Matrix l;
    Matrix s_x;
    Matrix s_y;
};

namespace detail {

/// Unique SPD square root and its inverse via a symmetric eigendecomposition.
inline std::pair<Matrix, Matrix> spd_sqrt_and_inv(const Matrix& s, const char* name) {
    if (s.rows() != s.cols()) throw InvalidDimensionError(std::string(name) + " must be square");
    const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10 * (1.0 + s.cwiseAbs().maxCoeff()))
        throw FactorizationError(std::string(name) + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (s + s.transpose()));
    if (eig.info() != Eigen::Success)
        throw FactorizationError(std::string(name) + ": eigendecomposition failed");
    const Vector& ev = eig.eigenvalues();
    if (ev.minCoeff() <= 1e-14 * std::max(1.0, ev.maxCoeff()))
        throw FactorizationError(std::string(name) + " is not positive definite");
    const Vector sq = ev.cwiseSqrt();
    const Matrix root = eig.eigenvectors() * sq.asDiagonal() * eig.eigenvectors().transpose();
    const Matrix inv_root =
        eig.eigenvectors() * sq.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    return {root, inv_root};
}

}  // namespace detail

/// Caches the state-independent matrix products of a CouplingSpec so the
/// square roots are factorized once.
class CouplingOperator {
public:
    explicit CouplingOperator(const CouplingSpec& spec) {
        if (spec.l.rows() != spec.s_x.rows() || spec.l.cols() != spec.s_y.rows())
            throw InvalidDimensionError("coupling matrix L has inconsistent dimensions");
        auto [sx_root, sx_inv_root] = detail::spd_sqrt_and_inv(spec.s_x, "s_x");
        auto [sy_root, sy_inv_root] = detail::spd_sqrt_and_inv(spec.s_y, "s_y");
        slow_gain_ = sx_inv_root * spec.l * sy_root;
        fast_gain_ = sy_inv_root * spec.l.transpose() * sx_root;
    }

    /// f' = S_x^{-1/2} L S_y^{1/2} y
    Vector slow_term(const Vector& y) const {
        if (y.size() != slow_gain_.cols()) throw InvalidDimensionError("y dimension mismatch");
        return slow_gain_ * y;
    }

    /// g' = -S_y^{-1/2} L^T S_x^{1/2} x
    Vector fast_term(const Vector& x) const {
        if (x.size() != fast_gain_.cols()) throw InvalidDimensionError("x dimension mismatch");
        return -fast_gain_ * x;
    }

private:
    Matrix slow_gain_;
    Matrix fast_gain_;
};

inline std::pair<Vector, Vector> coupling_terms(const CouplingOperator& op, const Vector& x,
                                                const Vector& y) {
    return {op.slow_term(y), op.fast_term(x)};
}

inline std::pair<Vector, Vector> coupling_terms(const CouplingSpec& spec, const Vector& x,
                                                const Vector& y) {
    return coupling_terms(CouplingOperator(spec), x, y);
}

/// The block-sum coupling of the two-scale Lorenz model: (L y)_i = -sum_j y_{ij}.
inline Matrix lorenz_coupling_matrix(int n_x, int j) {
    Matrix l = Matrix::Zero(n_x, static_cast<Index>(n_x) * j);
    for (int i = 0; i < n_x; ++i)
        for (int k = 0; k < j; ++k) l(i, static_cast<Index>(i) * j + k) = -1.0;
    return l;
}

// ---------------------------------------------------------------------------
// Ornstein-Uhlenbeck process
// ---------------------------------------------------------------------------

/// dz = (h - Gamma z + forcing) ds + sigma dW_s. The symmetric part of Gamma
/// must be positive definite for a decaying response.
struct OUParams {
    Vector h;
    Matrix gamma;
    Matrix sigma;

    Index dim() const { return h.size(); }
    Index noise_dim() const { return sigma.cols(); }

    void validate() const {
        if (gamma.rows() != gamma.cols() || gamma.rows() != h.size())
            throw InvalidDimensionError("gamma must be square and match h");
        if (sigma.size() > 0 && sigma.rows() != h.size())
            throw InvalidDimensionError("sigma rows must match state dimension");
        Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (gamma + gamma.transpose()));
        if (eig.eigenvalues().minCoeff() <= 0.0)
            throw DegenerateInputError("symmetric part of gamma must be positive definite");
    }
};

inline void ou_drift(const Vector& z, const OUParams& q, const Vector& forcing, Vector& out) {
    if (z.size() != q.dim() || forcing.size() != q.dim())
        throw InvalidDimensionError("ou_drift dimension mismatch");
    out = q.h - q.gamma * z + forcing;
}

inline Vector ou_drift(const Vector& z, const OUParams& q, const Vector& forcing) {
    Vector out;
    ou_drift(z, q, forcing, out);
    return out;
}

/// Deterministic part of the OU process as an integrable system (sigma = 0).
class OUDriftSystem {
public:
    OUDriftSystem(OUParams q, Vector forcing) : q_(std::move(q)), forcing_(std::move(forcing)) {
        if (forcing_.size() != q_.dim()) throw InvalidDimensionError("forcing dimension mismatch");
    }

    Index dim() const { return q_.dim(); }
    void eval(const Vector& z, Vector& dz) const { dz = q_.h - q_.gamma * z + forcing_; }
    void jacobian(const Vector&, Matrix& jac) const { jac = -q_.gamma; }

private:
    OUParams q_;
    Vector forcing_;
};

}  // namespace slowfast
