#include "slowfast/stats.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace slowfast;

TEST_CASE("moments of constant and alternating series") {
    const MomentSummary c = moments(Vector(Vector::Constant(100, 3.25)));
    CHECK(c.mean == 3.25);
    CHECK(c.variance == 0.0);

    Vector alt(100);
    for (Index i = 0; i < 100; ++i) alt[i] = (i % 2 == 0) ? -1.0 : 1.0;
    const MomentSummary a = moments(alt);
    CHECK(a.mean == Catch::Approx(0.0).margin(1e-15));
    CHECK(a.variance == Catch::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(moments(Vector(Vector::Zero(1))), DegenerateInputError);
}

TEST_CASE("pdf puts a point mass in one bin and normalizes") {
    const Vector samples = Vector::Constant(1000, 0.31);
    const Histogram h = pdf(samples, 10, 0.0, 1.0);
    int nonzero = 0;
    double integral = 0.0;
    for (Index b = 0; b < h.density.size(); ++b) {
        if (h.density[b] != 0.0) {
            ++nonzero;
            CHECK(h.density[b] == Catch::Approx(1.0 / h.bin_width()).epsilon(1e-12));
        }
        integral += h.density[b] * h.bin_width();
    }
    CHECK(nonzero == 1);
    CHECK(integral == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("pdf of a large normal sample matches the closed form") {
    Rng rng(55);
    Vector samples(1000000);
    for (Index i = 0; i < samples.size(); ++i) samples[i] = rng.normal();
    const Histogram h = pdf(samples, 50, -4.0, 4.0);
    const Vector centers = h.centers();
    double max_err = 0.0;
    double integral = 0.0;
    for (Index b = 0; b < centers.size(); ++b) {
        const double expected = std::exp(-0.5 * centers[b] * centers[b]) / std::sqrt(2.0 * M_PI);
        max_err = std::max(max_err, std::abs(h.density[b] - expected));
        integral += h.density[b] * h.bin_width();
    }
    CHECK(max_err < 0.02);
    CHECK(integral == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("pdf rejects ranges that miss all samples") {
    CHECK_THROWS_AS(pdf(Vector(Vector::Constant(10, 5.0)), 4, 0.0, 1.0), DegenerateInputError);
}

TEST_CASE("acf normalizes to one at lag zero and stays small for white noise") {
    Rng rng(77);
    Vector noise(100000);
    for (Index i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
    const AcfCurve c = acf(noise, 0.1, 1e-3);
    CHECK(c.values[0] == 1.0);
    const double bound = 3.0 / std::sqrt(static_cast<double>(noise.size()));
    for (Index k = 1; k < c.values.size(); ++k) CHECK(std::abs(c.values[k]) < bound);
}

TEST_CASE("acf of a scalar OU process decays like exp(-gamma s)", "[slow]") {
    const double gamma = 2.0;
    OUParams q;
    q.h = Vector::Zero(1);
    q.gamma = Matrix::Constant(1, 1, gamma);
    q.sigma = Matrix::Constant(1, 1, std::sqrt(2.0 * gamma));
    IntegratorConfig cfg;
    cfg.dt = 1e-3;
    cfg.sample_stride = 10;
    Rng rng(91);
    const Trajectory traj =
        simulate_ou(q, Vector::Zero(1), Vector::Zero(1), 1e4 / gamma, cfg, rng);
    const Vector series = traj.states.row(0).transpose();
    const AcfCurve c = acf(series, 3.0 / gamma, traj.dt_sample);
    double max_err = 0.0;
    for (Index k = 0; k < c.lags.size(); ++k)
        max_err = std::max(max_err, std::abs(c.values[k] - std::exp(-gamma * c.lags[k])));
    CHECK(max_err < 0.03);
}

TEST_CASE("acf rejects zero-variance input") {
    CHECK_THROWS_AS(acf(Vector(Vector::Constant(100, 2.0)), 0.01, 1e-3), DegenerateInputError);
}

TEST_CASE("running_average basics") {
    Rng rng(31);
    const Vector series = rng.normal_vector(50);
    const Vector same = running_average(series, 0.0, 0.1);
    for (Index i = 0; i < series.size(); ++i) CHECK(same[i] == series[i]);

    const Vector constant = running_average(Vector(Vector::Constant(40, 2.5)), 1.0, 0.1);
    for (Index i = 0; i < constant.size(); ++i)
        CHECK(constant[i] == Catch::Approx(2.5).epsilon(1e-14));
}

TEST_CASE("running_average of a ramp lags by half the window") {
    const double dt = 0.1, a = 1.7, window = 1.0;
    Vector ramp(100);
    for (Index i = 0; i < 100; ++i) ramp[i] = a * (dt * static_cast<double>(i));
    const Vector ra = running_average(ramp, window, dt);
    const auto w = static_cast<Index>(window / dt) + 1;
    for (Index i = w; i < 100; ++i) {
        const double t = dt * static_cast<double>(i);
        CHECK(ra[i] == Catch::Approx(a * (t - window / 2.0)).epsilon(1e-12));
    }
}

TEST_CASE("running_average commutes with affine maps") {
    Rng rng(33);
    const Vector series = rng.normal_vector(200);
    const double a = -2.5, b = 0.75;
    const Vector lhs = running_average(Vector(a * series.array() + b), 0.5, 0.05);
    const Vector rhs_v = a * running_average(series, 0.5, 0.05).array() + b;
    CHECK((lhs - rhs_v).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("divergence_experiment with zero perturbation is identically zero") {
    ModelParams p = oracles::quick_params(4, 2, 6.0, 8.0, 0.25);
    IntegratorConfig cfg;
    cfg.dt = 1e-4;
    cfg.seed = 5;
    DivergenceProtocol proto;
    proto.n_members = 3;
    proto.t_spinup = 2.0;
    proto.t_spacing = 1.0;
    proto.t_horizon = 1.0;
    proto.delta = 0.0;
    const DivergenceProfile prof = divergence_experiment(p, cfg, proto);
    CHECK(prof.divergence.cwiseAbs().maxCoeff() == 0.0);
    CHECK(prof.n_members == 3);
}

TEST_CASE("divergence profile starts below the perturbation scale") {
    ModelParams p = oracles::quick_params(4, 2, 6.0, 8.0, 0.25);
    IntegratorConfig cfg;
    cfg.dt = 1e-4;
    cfg.seed = 6;
    DivergenceProtocol proto;
    proto.n_members = 5;
    proto.t_spinup = 2.0;
    proto.t_spacing = 1.0;
    proto.t_horizon = 0.5;
    proto.delta = 0.01;
    const DivergenceProfile prof = divergence_experiment(p, cfg, proto);
    CHECK(prof.divergence[0] <= proto.delta * (1.0 + 1e-12));
    CHECK(prof.divergence.minCoeff() >= 0.0);
}

TEST_CASE("divergence is linear in the perturbation scale at small times", "[slow]") {
    ModelParams p = oracles::quick_params(10, 4, 6.0, 6.0, 0.25);
    IntegratorConfig cfg;
    cfg.dt = 1e-4;
    cfg.seed = 7;
    DivergenceProtocol proto;
    proto.n_members = 30;
    proto.t_spinup = 20.0;
    proto.t_spacing = 4.0;
    proto.t_horizon = 1.0;
    proto.dt_profile = 0.05;
    proto.delta = 0.01;
    proto.threads = 2;
    const DivergenceProfile full = divergence_experiment(p, cfg, proto);
    proto.delta = 0.005;
    const DivergenceProfile half = divergence_experiment(p, cfg, proto);

    // Same seed, so members and perturbation directions coincide; only the
    // scale differs.
    for (Index k = 1; k < full.t.size(); ++k) {
        if (full.t[k] > 1.0 || half.divergence[k] < 1e-6) continue;
        const double ratio = full.divergence[k] / half.divergence[k];
        CHECK(ratio > 1.8);
        CHECK(ratio < 2.2);
    }
}

TEST_CASE("fast-ring mixing strengthens with forcing", "[slow]") {
    // Integrated pooled ACF of the fast limiting system is smaller at
    // stronger forcing.
    auto integrated = [](double f_y) {
        ModelParams p = oracles::quick_params(4, 4, 6.0, f_y, 0.25);
        const FastLimitingSystem sys(p, Vector::Zero(4));
        IntegratorConfig cfg;
        cfg.dt = 1e-3;
        cfg.sample_stride = 10;
        cfg.seed = 17;
        Rng rng(17);
        Vector z0 = rng.normal_vector(16) * 0.1;
        IntegratorConfig spin = cfg;
        spin.sample_stride = 1 << 20;
        z0 = integrate(sys, z0, 50.0, spin).final_state();
        const Trajectory traj = integrate(sys, z0, 400.0, cfg);
        return integrated_acf(acf_pooled(traj.states, 5.0, traj.dt_sample));
    };
    CHECK(integrated(24.0) < integrated(6.0));
}
