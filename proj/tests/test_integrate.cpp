#include "slowfast/integrate.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace slowfast;

TEST_CASE("rk2_step on a zero field returns the state unchanged") {
    Rng rng(5);
    const Vector s = rng.normal_vector(4);
    const Vector out = rk2_step([](const Vector& v) { return Vector(Vector::Zero(v.size())); }, s,
                                0.1);
    for (Index i = 0; i < 4; ++i) CHECK(out[i] == s[i]);
}

TEST_CASE("rk2_step on a linear scalar field has the exact Heun multiplier") {
    const double a = -1.7, dt = 0.05;
    Vector s(1);
    s[0] = 2.0;
    const Vector out = rk2_step([a](const Vector& v) { return Vector(a * v); }, s, dt);
    const double mult = 1.0 + a * dt + 0.5 * (a * dt) * (a * dt);
    CHECK(out[0] == Catch::Approx(2.0 * mult).epsilon(1e-15));
}

TEST_CASE("rk2_step flags non-finite results") {
    Vector s(1);
    s[0] = 1.0;
    CHECK_THROWS_AS(
        rk2_step([](const Vector& v) { return Vector(v.array().square().matrix() * 1e200); }, s,
                 1e10),
        BlowUpError);
}

TEST_CASE("rk2 global error halves by a Richardson ratio near 4") {
    const L96System sys(8.0, 8);
    Rng rng(13);
    Vector s0 = rng.normal_vector(8);
    // settle onto the attractor so the span is representative
    s0 = oracles::rk4_integrate(sys, s0, 2.0, 1e-4);

    const double t_span = 0.1;
    const Vector ref = oracles::rk4_integrate(sys, s0, t_span, 1e-5);
    IntegratorConfig coarse;
    coarse.dt = 1e-3;
    coarse.sample_stride = 1 << 20;
    IntegratorConfig fine = coarse;
    fine.dt = 5e-4;
    const Vector e1 = integrate(sys, s0, t_span, coarse).final_state() - ref;
    const Vector e2 = integrate(sys, s0, t_span, fine).final_state() - ref;
    const double ratio = e1.norm() / e2.norm();
    CHECK(ratio > 3.5);
    CHECK(ratio < 4.5);
}

TEST_CASE("integrate stores the expected sample count") {
    const L96System sys(8.0, 5);
    IntegratorConfig cfg;
    cfg.dt = 1e-3;
    cfg.sample_stride = 1;
    const Trajectory traj = integrate(sys, Vector::Zero(5), 10 * cfg.dt, cfg);
    CHECK(traj.n_samples() == 11);
    CHECK(traj.states.col(0).isZero());

    cfg.sample_stride = 4;
    const Trajectory strided = integrate(sys, Vector::Zero(5), 10 * cfg.dt, cfg);
    CHECK(strided.n_samples() == 3);  // steps 0, 4, 8
    CHECK(strided.dt_sample == Catch::Approx(4e-3));
}

TEST_CASE("integrate is bitwise deterministic under splitting") {
    const L96System sys(8.0, 6);
    Rng rng(17);
    const Vector s0 = rng.normal_vector(6);
    IntegratorConfig cfg;
    cfg.dt = 1e-3;
    cfg.sample_stride = 1 << 20;

    const Vector full = integrate(sys, s0, 0.02, cfg).final_state();
    const Vector half = integrate(sys, s0, 0.01, cfg).final_state();
    const Vector resumed = integrate(sys, half, 0.01, cfg).final_state();
    for (Index i = 0; i < 6; ++i) CHECK(full[i] == resumed[i]);
}

TEST_CASE("observers see every step including the initial state") {
    const L96System sys(8.0, 5);
    class Counter final : public StepObserver {
    public:
        std::size_t calls = 0;
        void observe(std::size_t, double, const Vector&) override { ++calls; }
    };
    Counter counter;
    StepObserver* obs[] = {&counter};
    IntegratorConfig cfg;
    cfg.dt = 1e-3;
    cfg.sample_stride = 5;
    integrate(sys, Vector::Zero(5), 20 * cfg.dt, cfg, obs);
    CHECK(counter.calls == 21);
}

TEST_CASE("integrate reports blow-up with the step index") {
    const auto sys = make_system(
        [](const Vector& v) { return Vector(v.array().square().matrix() + 1.0); }, 1);
    IntegratorConfig cfg;
    cfg.dt = 0.5;
    Vector s0(1);
    s0[0] = 1.0;
    try {
        integrate(sys, s0, 100.0, cfg);
        FAIL("expected blow-up");
    } catch (const BlowUpError& e) {
        CHECK(e.step > 0);
        CHECK(e.time > 0.0);
    }
}

TEST_CASE("propagate_tangent at t = 0 is the identity") {
    ModelParams p = oracles::quick_params(4, 2, 6.0, 8.0, 0.25);
    const FastLimitingSystem sys(p, Vector::Zero(4));
    IntegratorConfig cfg;
    cfg.dt = 1e-3;
    const TangentMap t = propagate_tangent(sys, Vector::Ones(8), 0.0, cfg);
    CHECK(t.m.isIdentity(0.0));
    CHECK(t.elapsed == 0.0);
}

TEST_CASE("propagate_tangent on a linear field matches the matrix exponential") {
    Matrix gamma(3, 3);
    gamma << 1.0, 0.3, 0.0, 0.3, 2.0, -0.2, 0.0, -0.2, 1.5;
    OUParams q;
    q.h = Vector::Zero(3);
    q.gamma = gamma;
    q.sigma = Matrix::Zero(3, 0);
    const OUDriftSystem sys(q, Vector::Zero(3));

    IntegratorConfig cfg;
    cfg.dt = 1e-3;
    const double t_len = 1.0;
    const TangentMap t = propagate_tangent(sys, Vector::Ones(3), t_len, cfg);
    const Matrix expected = oracles::expm(-gamma * t_len);
    CHECK((t.m - expected).norm() / expected.norm() < 1e-5);

    // and it equals the discrete per-step multiplier power exactly
    const Matrix a = -gamma;
    const Matrix step =
        Matrix::Identity(3, 3) + cfg.dt * a + 0.5 * cfg.dt * cfg.dt * (a * a).eval();
    Matrix discrete = Matrix::Identity(3, 3);
    for (int i = 0; i < 1000; ++i) discrete = step * discrete;
    CHECK((t.m - discrete).norm() / discrete.norm() < 1e-10);
}

TEST_CASE("tangent map predicts finite perturbation growth", "[slow]") {
    ModelParams p = oracles::quick_params(4, 2, 6.0, 6.0, 0.25);
    const FastLimitingSystem sys(p, Vector::Zero(4));
    IntegratorConfig cfg;
    cfg.dt = 1e-3;
    cfg.sample_stride = 1 << 20;

    Rng rng(23);
    Vector z0 = rng.normal_vector(8) * 0.1;
    z0 = integrate(sys, z0, 20.0, cfg).final_state();

    const double t_len = 1.0;
    const TangentMap tan = propagate_tangent(sys, z0, t_len, cfg);

    Vector delta = rng.normal_vector(8);
    delta *= 1e-6 / delta.norm();
    const Vector flow_base = integrate(sys, z0, t_len, cfg).final_state();
    const Vector flow_pert = integrate(sys, Vector(z0 + delta), t_len, cfg).final_state();
    const Vector predicted = tan.m * delta;
    const double err = (predicted - (flow_pert - flow_base)).norm() / predicted.norm();
    CHECK(err < 1e-4);
}

TEST_CASE("tangent maps compose by the chain rule") {
    ModelParams p = oracles::quick_params(4, 2, 6.0, 6.0, 0.25);
    const FastLimitingSystem sys(p, Vector::Zero(4));
    IntegratorConfig cfg;
    cfg.dt = 1e-3;
    cfg.sample_stride = 1 << 20;

    Rng rng(29);
    Vector z0 = rng.normal_vector(8) * 0.1;
    z0 = integrate(sys, z0, 20.0, cfg).final_state();

    const TangentMap full = propagate_tangent(sys, z0, 1.0, cfg);
    const TangentMap first = propagate_tangent(sys, z0, 0.5, cfg);
    const TangentMap second = propagate_tangent(sys, first.base_state, 0.5, cfg);
    const Matrix composed = second.m * first.m;
    CHECK((full.m - composed).norm() / full.m.norm() < 1e-10);
}

TEST_CASE("euler_maruyama_step with zero noise is the Euler step") {
    OUParams q;
    q.h = Vector::Constant(2, 0.5);
    q.gamma = Matrix::Identity(2, 2);
    q.sigma = Matrix::Zero(2, 0);
    const Vector z = Vector::Ones(2);
    const Vector forcing = Vector::Constant(2, 0.1);
    const Vector out = euler_maruyama_step(q, z, forcing, 0.01, Vector::Zero(0));
    const Vector expected = z + 0.01 * (q.h - q.gamma * z + forcing);
    CHECK((out - expected).norm() == 0.0);
}

TEST_CASE("standard OU reaches unit stationary covariance", "[slow]") {
    const Index n = 2;
    OUParams q;
    q.h = Vector::Zero(n);
    q.gamma = Matrix::Identity(n, n);
    q.sigma = std::sqrt(2.0) * Matrix::Identity(n, n);

    IntegratorConfig cfg;
    cfg.dt = 1e-3;
    cfg.sample_stride = 10;
    Rng rng(101);
    const Trajectory traj = simulate_ou(q, Vector::Zero(n), Vector::Zero(n), 5000.0, cfg, rng);

    const Index skip = static_cast<Index>(20.0 / traj.dt_sample);
    const Matrix samples = traj.states.rightCols(traj.n_samples() - skip);
    const Vector mean = samples.rowwise().mean();
    const Matrix centered = samples.colwise() - mean;
    const Matrix cov = centered * centered.transpose() / static_cast<double>(centered.cols());
    CHECK((cov - Matrix::Identity(n, n)).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("OU paths are reproducible by seed and distinct by stream") {
    OUParams q;
    q.h = Vector::Zero(2);
    q.gamma = Matrix::Identity(2, 2);
    q.sigma = Matrix::Identity(2, 2);
    IntegratorConfig cfg;
    cfg.dt = 1e-2;
    cfg.sample_stride = 1;

    Rng rng_a(7, 3), rng_b(7, 3), rng_c(7, 4);
    const Trajectory a = simulate_ou(q, Vector::Ones(2), Vector::Zero(2), 1.0, cfg, rng_a);
    const Trajectory b = simulate_ou(q, Vector::Ones(2), Vector::Zero(2), 1.0, cfg, rng_b);
    const Trajectory c = simulate_ou(q, Vector::Ones(2), Vector::Zero(2), 1.0, cfg, rng_c);
    CHECK((a.states - b.states).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.states - c.states).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("euler_maruyama_step validates the noise dimension") {
    OUParams q;
    q.h = Vector::Zero(2);
    q.gamma = Matrix::Identity(2, 2);
    q.sigma = Matrix::Identity(2, 2);
    CHECK_THROWS_AS(euler_maruyama_step(q, Vector::Zero(2), Vector::Zero(2), 0.1, Vector::Zero(1)),
                    InvalidDimensionError);
}
