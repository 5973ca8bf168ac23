#include <doctest.h>

#include <cmath>
#include <vector>

#include "deer/analysis.hpp"
#include "deer/analytic.hpp"
#include "deer/errors.hpp"
#include "deer/rng.hpp"
#include "test_oracles.hpp"

using namespace deer;

TEST_CASE("single-spin echo factor") {
    SUBCASE("drive off gives exactly 1") {
        SingleSpinParams p;
        p.coupling_mhz = 2.5;
        p.detuning_mhz = 7.0;
        p.rabi_mhz = 0.0;
        p.ts_ns = 300.0;
        CHECK(single_spin_deer(p) == 1.0);
    }

    SUBCASE("zero window gives exactly 1") {
        SingleSpinParams p;
        p.coupling_mhz = 2.5;
        p.rabi_mhz = 10.0;
        p.ts_ns = 0.0;
        CHECK(single_spin_deer(p) == 1.0);
    }

    SUBCASE("instantaneous-pi limit hits the ideal cosine") {
        SingleSpinParams p;
        p.coupling_mhz = 1.0;
        p.instantaneous_pi = true;
        CHECK(single_spin_deer(p) == doctest::Approx(std::cos(M_PI * 0.9)).epsilon(1e-12));
    }

    SUBCASE("far-detuned drive barely tips the spin") {
        SingleSpinParams p;
        p.coupling_mhz = 1.5;
        p.rabi_mhz = 5.0;
        p.detuning_mhz = 250.0;  // 50x the Rabi rate
        p.ts_ns = 377.0;
        CHECK(std::abs(single_spin_deer(p) - 1.0) < 1e-2);
    }

    SUBCASE("even in the coupling sign") {
        Rng rng(8);
        for (int i = 0; i < 30; ++i) {
            SingleSpinParams p;
            p.coupling_mhz = rng.uniform(0.1, 5.0);
            p.detuning_mhz = rng.uniform(-20.0, 20.0);
            p.rabi_mhz = rng.uniform(1.0, 20.0);
            p.ts_ns = rng.uniform(10.0, 440.0);
            p.offset_ns = rng.uniform(0.0, 440.0 - p.ts_ns);
            SingleSpinParams q = p;
            q.coupling_mhz = -p.coupling_mhz;
            CHECK(std::abs(single_spin_deer(p) - single_spin_deer(q)) < 1e-12);
        }
    }

    SUBCASE("matches the pulse-level oracle") {
        Rng rng(17);
        for (int i = 0; i < 8; ++i) {
            SingleSpinParams p;
            p.coupling_mhz = rng.uniform(-4.0, 4.0);
            p.detuning_mhz = rng.uniform(-15.0, 15.0);
            p.rabi_mhz = rng.uniform(2.0, 18.0);
            p.ts_ns = rng.uniform(20.0, 420.0);
            p.offset_ns = rng.uniform(0.0, 30.0);

            DriveParams drive;
            drive.rabi_mhz = p.rabi_mhz;
            drive.duration_ns = p.ts_ns;
            drive.offset_after_nv_pulse_ns = p.offset_ns;
            test::FullSystemOracle oracle;
            oracle.couplings_mhz = {p.coupling_mhz};
            oracle.detunings_mhz = {p.detuning_mhz};
            oracle.pair_couplings_mhz = {{0.0}};
            const double expected =
                oracle.signal(build_deer_timeline(p.tau_ns, drive), drive);
            CHECK(single_spin_deer(p) == doctest::Approx(expected).epsilon(1e-9));
        }
    }

    SUBCASE("window overflow is rejected") {
        SingleSpinParams p;
        p.ts_ns = 500.0;
        CHECK_THROWS_AS(single_spin_deer(p), DomainError);
    }
}

TEST_CASE("ensemble product") {
    CHECK(ensemble_product({}) == 1.0);
    const std::vector<double> one{-0.4};
    CHECK(ensemble_product(one) == -0.4);
    const std::vector<double> three{0.5, -0.8, 0.9};
    CHECK(ensemble_product(three) == doctest::Approx(-0.36).epsilon(1e-15));
    const std::vector<double> bad{1.5};
    CHECK_THROWS_AS(ensemble_product(bad), DomainError);
}

TEST_CASE("closed-form floor") {
    SUBCASE("zero density floor is 1") {
        CHECK(floor_signal({0.0, 12.0, 900.0}) == 1.0);
    }

    SUBCASE("dimensional oracle at the working point") {
        // Independent SI evaluation: (3pi/16) (mu0/4pi gamma^2 hbar)^2
        // * sigma tau^2 / d^4.
        const double gamma = 1.76085963023e11;
        const double hbar = 1.054571817e-34;
        const double prefactor = (1.25663706212e-6 / (4.0 * M_PI)) * gamma * gamma * hbar;
        const double sigma_si = 0.31e18;           // 1/m^2
        const double tau = 900e-9;                  // s
        const double depth = 12e-9;                 // m
        const double exponent = (3.0 * M_PI / 16.0) * prefactor * prefactor * sigma_si *
                                tau * tau / std::pow(depth, 4);
        CHECK(exponent == doctest::Approx(0.76).epsilon(0.01));

        const FloorParams params{0.31, 12.0, 900.0};
        CHECK(floor_exponent(params) == doctest::Approx(exponent).epsilon(1e-9));
        CHECK(floor_signal(params) == doctest::Approx(0.47).epsilon(0.01));
    }

    SUBCASE("doubling the depth divides the exponent by 16") {
        const FloorParams base{0.2, 10.0, 900.0};
        const FloorParams deep{0.2, 20.0, 900.0};
        CHECK(floor_exponent(deep) ==
              doctest::Approx(floor_exponent(base) / 16.0).epsilon(1e-12));
    }

    SUBCASE("round trip through the density estimator") {
        Rng rng(5);
        for (int i = 0; i < 30; ++i) {
            const FloorParams params{rng.uniform(0.01, 0.5), rng.uniform(5.0, 20.0),
                                     rng.uniform(300.0, 2000.0)};
            const double signal = floor_signal(params);
            const auto estimate =
                estimate_density(signal, params.depth_nm, params.tau_ns);
            CHECK(std::abs(estimate.sigma_hat_per_nm2 / params.density_per_nm2 - 1.0) <
                  1e-12);
        }
    }
}

TEST_CASE("poisson-plane average") {
    DriveParams strong;
    strong.instantaneous_pi = true;

    SUBCASE("zero density gives exactly 1") {
        CHECK(poisson_average_signal({0.0, 12.0, 900.0}, strong, 0.0) == 1.0);
    }

    SUBCASE("exponent is linear in the density") {
        const FloorParams params{0.05, 12.0, 900.0};
        const FloorParams doubled{0.10, 12.0, 900.0};
        const double s1 = poisson_average_signal(params, strong, 0.0);
        const double s2 = poisson_average_signal(doubled, strong, 0.0);
        CHECK(s2 == doctest::Approx(s1 * s1).epsilon(1e-8));
    }

    SUBCASE("non-increasing in density, bounded in (0, 1]") {
        double previous = 1.0;
        for (double density : {0.0, 0.02, 0.05, 0.1, 0.2, 0.4}) {
            const double s = poisson_average_signal({density, 12.0, 900.0}, strong, 54.7356);
            CHECK(s > 0.0);
            CHECK(s <= previous + 1e-12);
            previous = s;
        }
    }

    SUBCASE("unconvergable tolerance raises an accuracy error") {
        QuadratureSpec quad;
        quad.abs_tol = 1e-16;
        quad.max_depth = 2;
        CHECK_THROWS_AS(
            poisson_average_signal({0.2, 12.0, 900.0}, strong, 54.7356, quad),
            AccuracyError);
    }
}

TEST_CASE("second-moment consistency identifies the floor convention") {
    // Analytically: Int a^2 over the plane is (3pi/4) C^2/d^4 for a normal
    // axis and exactly half that at the magic-angle tilt, so the floor
    // exponent (3pi/16) stands in ratio {2, 4, 1/2, 1} to the second moment
    // for {normal/spin-half, tilted/spin-half, normal/unit, tilted/unit}.
    const FloorParams params{0.1, 12.0, 900.0};
    QuadratureSpec quad;
    quad.abs_tol = 1e-8;
    const auto report = check_floor_convention(params, quad);
    CHECK(report.ratio_normal_spin_half == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(report.ratio_tilted_spin_half == doctest::Approx(4.0).epsilon(1e-3));
    CHECK(report.ratio_normal_unit_moment == doctest::Approx(0.5).epsilon(1e-3));
    CHECK(report.ratio_tilted_unit_moment == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(report.matches_tilted_unit_moment);
}

TEST_CASE("weak-coupling floor agreement under the identified convention") {
    DriveParams strong;
    strong.instantaneous_pi = true;
    const FloorParams params{0.05, 12.0, 900.0};
    const double averaged = poisson_average_signal(params, strong, 54.7356, {},
                                                   MomentConvention::unit_moment);
    const double floor = floor_signal(params);
    CHECK(std::abs(averaged / floor - 1.0) < 0.03);
}
