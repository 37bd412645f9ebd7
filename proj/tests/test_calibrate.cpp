#include "slowfast/calibrate.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace slowfast;

namespace {

std::filesystem::path temp_cache_path(const char* tag) {
    static int counter = 0;
    auto p = std::filesystem::temp_directory_path() /
             ("slowfast_test_" + std::string(tag) + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++) + ".txt");
    std::filesystem::remove(p);
    return p;
}

}  // namespace

TEST_CASE("calibrate flags the stable fixed-point regime") {
    CalibrationSettings s;
    s.dt = 1e-3;
    s.t_total = 120.0;
    s.t_spinup = 60.0;
    const CalibrationRecord rec = calibrate(0.5, 8, s);
    CHECK(rec.fixed_point);
    CHECK(rec.mean == Catch::Approx(0.5).margin(1e-3));
    CHECK(rec.beta < 1e-8);
}

TEST_CASE("calibration closes the loop on the rescaled model", "[slow]") {
    CalibrationSettings s;
    s.dt = 1e-3;
    s.t_total = 5000.0;
    s.t_spinup = 100.0;
    const CalibrationRecord rec = calibrate(6.0, 10, s);
    CHECK_FALSE(rec.fixed_point);
    CHECK(rec.beta > 0.5);

    // An independent run of the rescaled model must come back with mean ~0
    // and variance ~1.
    const RescaledL96System sys(rec, 10);
    IntegratorConfig cfg;
    cfg.dt = 2e-3;
    cfg.sample_stride = 1 << 20;
    cfg.seed = 9;
    Rng rng(9);
    Vector q0(10);
    for (Index i = 0; i < 10; ++i) q0[i] = rng.uniform(-0.5, 0.5);
    const Vector q1 = integrate(sys, q0, 100.0, cfg).final_state();
    PooledMomentsObserver stats;
    StepObserver* obs[] = {&stats};
    integrate(sys, q1, 4000.0, cfg, obs);
    CHECK(std::abs(stats.mean()) < 0.02);
    CHECK(std::abs(stats.variance() - 1.0) < 0.05);
}

TEST_CASE("calibration means agree across seeds within two standard errors", "[slow]") {
    // Ergodicity: two independent runs see the same long-term mean.
    const int n = 10;
    const double f = 6.0;
    const L96System sys(f, n);
    IntegratorConfig cfg;
    cfg.dt = 1e-3;
    cfg.sample_stride = 1 << 20;

    auto run = [&](std::uint64_t seed) {
        Rng rng(seed);
        Vector s0 = Vector::Constant(n, f);
        for (Index i = 0; i < n; ++i) s0[i] += rng.uniform(-1e-3, 1e-3);
        Vector s = integrate(sys, s0, 100.0, cfg).final_state();
        MeanStateObserver obs(n, 20);
        const double t_batch = 3000.0 / 20;
        for (int b = 0; b < 20; ++b) {
            StepObserver* list[] = {&obs};
            s = integrate(sys, s, t_batch, cfg, list).final_state();
            obs.close_batch();
        }
        return std::pair{obs.mean().mean(), obs.std_error().norm() / std::sqrt(double(n))};
    };

    const auto [m1, se1] = run(1);
    const auto [m2, se2] = run(2);
    CHECK(std::abs(m1 - m2) < 2.0 * std::sqrt(se1 * se1 + se2 * se2) + 1e-3);
}

TEST_CASE("per-coordinate means match the pooled mean", "[slow]") {
    // Translational invariance of the L96 statistics.
    const int n = 10;
    const L96System sys(6.0, n);
    IntegratorConfig cfg;
    cfg.dt = 1e-3;
    cfg.sample_stride = 1 << 20;
    Rng rng(3);
    Vector s0 = Vector::Constant(n, 6.0);
    for (Index i = 0; i < n; ++i) s0[i] += rng.uniform(-1e-3, 1e-3);
    Vector s = integrate(sys, s0, 100.0, cfg).final_state();

    MeanStateObserver obs(n, 25);
    for (int b = 0; b < 25; ++b) {
        StepObserver* list[] = {&obs};
        s = integrate(sys, s, 3000.0 / 25, cfg, list).final_state();
        obs.close_batch();
    }
    const Vector mean = obs.mean();
    const Vector se = obs.std_error();
    const double pooled = mean.mean();
    for (Index i = 0; i < n; ++i) CHECK(std::abs(mean[i] - pooled) < 3.0 * se[i] + 1e-3);
}

TEST_CASE("calibration cache round-trips records") {
    const CalibrationCache cache(temp_cache_path("roundtrip"));
    CHECK_FALSE(cache.load(6.0, 10).has_value());

    CalibrationRecord rec;
    rec.f = 6.0;
    rec.n = 10;
    rec.dt = 1e-3;
    rec.t_total = 5000.0;
    rec.t_spinup = 100.0;
    rec.seed = 12345;
    rec.mean = 2.2876554433221109;
    rec.beta = 3.6012345678901234;
    rec.fixed_point = false;
    cache.store(rec);

    const auto loaded = cache.load(6.0, 10);
    REQUIRE(loaded.has_value());
    CHECK(loaded->f == rec.f);
    CHECK(loaded->n == rec.n);
    CHECK(loaded->dt == rec.dt);
    CHECK(loaded->t_total == rec.t_total);
    CHECK(loaded->t_spinup == rec.t_spinup);
    CHECK(loaded->seed == rec.seed);
    CHECK(loaded->mean == rec.mean);
    CHECK(loaded->beta == rec.beta);
    CHECK(loaded->fixed_point == rec.fixed_point);
    std::filesystem::remove(cache.path());
}

TEST_CASE("storing the same key twice overwrites") {
    const CalibrationCache cache(temp_cache_path("overwrite"));
    CalibrationRecord rec;
    rec.f = 8.0;
    rec.n = 12;
    rec.dt = 1e-3;
    rec.t_total = 100.0;
    rec.t_spinup = 10.0;
    rec.seed = 1;
    rec.mean = 1.0;
    rec.beta = 2.0;
    cache.store(rec);
    rec.mean = 1.5;
    cache.store(rec);

    CHECK(cache.read_all().size() == 1);
    CHECK(cache.load(8.0, 12)->mean == 1.5);
    std::filesystem::remove(cache.path());
}

TEST_CASE("malformed cache lines report the line number") {
    const auto path = temp_cache_path("malformed");
    {
        std::ofstream out(path);
        out << "6 10 0.001 5000 100 1 2.2 3.6 ok\n";
        out << "not a record\n";
    }
    const CalibrationCache cache(path);
    try {
        cache.read_all();
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 2);
    }
    std::filesystem::remove(path);
}
