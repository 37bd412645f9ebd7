// Test-only oracles, independent of the implementation paths they check.
#pragma once

#include "slowfast/calibrate.hpp"
#include "slowfast/common.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

namespace oracles {

using slowfast::Index;
using slowfast::Matrix;
using slowfast::Vector;

// ---------------------------------------------------------------------------
// Classic RK4 reference integrator (higher order than the RK2 under test).
// ---------------------------------------------------------------------------

template <class System>
Vector rk4_step(const System& sys, const Vector& s, double dt) {
    Vector k1(s.size()), k2(s.size()), k3(s.size()), k4(s.size());
    sys.eval(s, k1);
    sys.eval(Vector(s + 0.5 * dt * k1), k2);
    sys.eval(Vector(s + 0.5 * dt * k2), k3);
    sys.eval(Vector(s + dt * k3), k4);
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <class System>
Vector rk4_integrate(const System& sys, Vector s, double t_len, double dt) {
    const auto n = static_cast<std::size_t>(std::llround(t_len / dt));
    for (std::size_t i = 0; i < n; ++i) s = rk4_step(sys, s, dt);
    return s;
}

// ---------------------------------------------------------------------------
// Smallest eigenvalue of the symmetric part via the characteristic
// polynomial: Faddeev-LeVerrier coefficients plus sign-change bisection over
// the Gershgorin interval. Assumes simple roots (random matrices).
// ---------------------------------------------------------------------------

inline std::vector<double> char_poly(const Matrix& a) {
    // det(lambda I - A) = lambda^n + c[1] lambda^{n-1} + ... + c[n]
    const Index n = a.rows();
    std::vector<double> c(n + 1, 0.0);
    c[0] = 1.0;
    Matrix m = Matrix::Zero(n, n);
    for (Index k = 1; k <= n; ++k) {
        m = a * m + c[k - 1] * Matrix::Identity(n, n);
        c[k] = -(a * m).trace() / static_cast<double>(k);
    }
    return c;
}

inline double eval_poly(const std::vector<double>& c, double x) {
    double v = 0.0;
    for (const double coeff : c) v = v * x + coeff;
    return v;
}

inline double char_poly_min_eig_sym(const Matrix& m_in) {
    const Matrix s = 0.5 * (m_in + m_in.transpose());
    const auto c = char_poly(s);
    // Gershgorin bounds.
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < s.rows(); ++i) {
        const double r = s.row(i).cwiseAbs().sum() - std::abs(s(i, i));
        lo = std::min(lo, s(i, i) - r);
        hi = std::max(hi, s(i, i) + r);
    }
    lo -= 1e-6;
    hi += 1e-6;
    const int grid = 20000;
    double prev_x = lo;
    double prev_v = eval_poly(c, lo);
    for (int g = 1; g <= grid; ++g) {
        const double x = lo + (hi - lo) * g / grid;
        const double v = eval_poly(c, x);
        if (prev_v == 0.0) return prev_x;
        if ((prev_v < 0.0) != (v < 0.0)) {
            double a = prev_x, b = x, fa = prev_v;
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (a + b);
                const double fm = eval_poly(c, mid);
                if ((fa < 0.0) != (fm < 0.0)) {
                    b = mid;
                } else {
                    a = mid;
                    fa = fm;
                }
            }
            return 0.5 * (a + b);
        }
        prev_x = x;
        prev_v = v;
    }
    throw std::runtime_error("char_poly_min_eig_sym: no sign change found");
}

// ---------------------------------------------------------------------------
// Quick calibrations shared across test cases (memoized per process). These
// trade some statistical accuracy for speed; acceptance-grade runs use the
// library defaults instead.
// ---------------------------------------------------------------------------

inline const slowfast::CalibrationRecord& quick_calibration(double f, int n) {
    static std::map<std::pair<double, int>, slowfast::CalibrationRecord> cache;
    const auto key = std::make_pair(f, n);
    auto it = cache.find(key);
    if (it == cache.end()) {
        slowfast::CalibrationSettings s;
        s.dt = 2e-3;
        s.t_total = 500.0;
        s.t_spinup = 30.0;
        s.seed = 42;
        it = cache.emplace(key, slowfast::calibrate(f, n, s)).first;
    }
    return it->second;
}

inline slowfast::ModelParams quick_params(int n_x, int j, double f_x, double f_y, double lambda,
                                          double epsilon = 0.01) {
    slowfast::ModelParams p;
    p.n_x = n_x;
    p.j = j;
    p.f_x = f_x;
    p.f_y = f_y;
    p.lambda_x = lambda;
    p.lambda_y = lambda;
    p.epsilon = epsilon;
    p.calib_x = quick_calibration(f_x, n_x);
    p.calib_y = quick_calibration(f_y, n_x * j);
    return p;
}

// Matrix exponential via scaling and squaring on the Taylor series; an
// independent closed-form path for linear-system checks.
inline Matrix expm(const Matrix& a) {
    const Index n = a.rows();
    const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
    int squarings = 0;
    Matrix scaled = a;
    while (scaled.cwiseAbs().rowwise().sum().maxCoeff() > 0.25) {
        scaled *= 0.5;
        ++squarings;
    }
    (void)norm;
    Matrix result = Matrix::Identity(n, n);
    Matrix term = Matrix::Identity(n, n);
    for (int k = 1; k <= 24; ++k) {
        term = term * scaled / static_cast<double>(k);
        result += term;
    }
    for (int sq = 0; sq < squarings; ++sq) result = result * result;
    return result;
}

}  // namespace oracles
