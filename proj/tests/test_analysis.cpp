#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "deer/analysis.hpp"
#include "deer/analytic.hpp"
#include "deer/errors.hpp"
#include "deer/rng.hpp"

using namespace deer;

namespace {

DeerCurve make_curve(AxisKind axis, const std::vector<double>& xs,
                     const std::vector<double>& ys, double sem = 0.0) {
    DeerCurve curve;
    curve.axis = axis;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        curve.points.push_back({xs[i], ys[i], sem, 1});
    }
    return curve;
}

}  // namespace

TEST_CASE("density estimator") {
    SUBCASE("unit signal gives zero density below threshold") {
        const auto estimate = estimate_density(1.0, 12.0, 900.0);
        CHECK(estimate.sigma_hat_per_nm2 == 0.0);
        CHECK(!estimate.above_dark_threshold);
        CHECK(estimate.status == DensityEstimate::Status::ok);
    }

    SUBCASE("noise above baseline clamps with a warning status") {
        const auto estimate = estimate_density(1.05, 12.0, 900.0);
        CHECK(estimate.sigma_hat_per_nm2 == 0.0);
        CHECK(estimate.status == DensityEstimate::Status::noise_floor);
    }

    SUBCASE("non-positive signal is a domain error") {
        CHECK_THROWS_AS(estimate_density(0.0, 12.0, 900.0), DomainError);
        CHECK_THROWS_AS(estimate_density(-0.2, 12.0, 900.0), DomainError);
        CHECK_THROWS_AS(estimate_density(0.5, 0.0, 900.0), DomainError);
    }

    SUBCASE("exact scaling in depth and tau") {
        Rng rng(42);
        for (int i = 0; i < 20; ++i) {
            const double signal = rng.uniform(0.2, 0.95);
            const double depth = rng.uniform(6.0, 18.0);
            const double tau = rng.uniform(400.0, 1500.0);
            const double base = estimate_density(signal, depth, tau).sigma_hat_per_nm2;
            const double deeper =
                estimate_density(signal, 2.0 * depth, tau).sigma_hat_per_nm2;
            const double longer =
                estimate_density(signal, depth, 2.0 * tau).sigma_hat_per_nm2;
            CHECK(deeper == doctest::Approx(16.0 * base).epsilon(1e-12));
            CHECK(longer == doctest::Approx(0.25 * base).epsilon(1e-12));
        }
    }

    SUBCASE("strictly decreasing in the minimum signal") {
        double previous = estimate_density(0.1, 12.0, 900.0).sigma_hat_per_nm2;
        for (double s : {0.2, 0.4, 0.6, 0.8, 0.99}) {
            const double current = estimate_density(s, 12.0, 900.0).sigma_hat_per_nm2;
            CHECK(current < previous);
            previous = current;
        }
    }

    SUBCASE("sem propagates to first order") {
        const double sem = 0.01;
        const auto estimate = estimate_density(0.5, 12.0, 900.0, sem);
        const double bumped = estimate_density(0.5 + 1e-6, 12.0, 900.0).sigma_hat_per_nm2;
        const double derivative =
            std::abs(bumped - estimate.sigma_hat_per_nm2) / 1e-6;
        CHECK(estimate.sigma_hat_sem == doctest::Approx(sem * derivative).epsilon(1e-3));
    }

    SUBCASE("paper-style classification around the dark-spin threshold") {
        const std::vector<double> dye{0.31, 0.16, 0.14, 0.14, 0.10};
        const std::vector<double> controls{0.016, 0.0098, 0.016, 0.022,
                                           0.020, 0.036, 0.020};
        for (double sigma : dye) {
            const double floor = floor_signal({sigma, 12.0, 900.0});
            CHECK(estimate_density(floor, 12.0, 900.0).above_dark_threshold);
        }
        for (double sigma : controls) {
            const double floor = floor_signal({sigma, 12.0, 900.0});
            CHECK(!estimate_density(floor, 12.0, 900.0).above_dark_threshold);
        }
    }
}

TEST_CASE("smoothed minimum extraction") {
    SUBCASE("constant curve ties to the smallest x") {
        const auto curve = make_curve(AxisKind::ts_ns, {10, 20, 30, 40, 50},
                                      {0.8, 0.8, 0.8, 0.8, 0.8});
        const auto result = extract_min(curve, 3);
        CHECK(result.min_signal == 0.8);
        CHECK(result.x_at_min == 10.0);
    }

    SUBCASE("window of one returns the raw minimum") {
        const auto curve = make_curve(AxisKind::ts_ns, {10, 20, 30, 40, 50},
                                      {0.9, 0.6, 0.7, 0.65, 0.95});
        const auto result = extract_min(curve, 1);
        CHECK(result.min_signal == 0.6);
        CHECK(result.x_at_min == 20.0);
    }

    SUBCASE("invalid windows are rejected") {
        const auto curve = make_curve(AxisKind::ts_ns, {1, 2, 3}, {1, 2, 3});
        CHECK_THROWS_AS(extract_min(curve, 2), DomainError);
        CHECK_THROWS_AS(extract_min(curve, 0), DomainError);
        CHECK_THROWS_AS(extract_min(curve, 5), DomainError);
    }

    SUBCASE("translation equivariance and offset monotonicity") {
        const std::vector<double> xs{10, 20, 30, 40, 50, 60, 70};
        const std::vector<double> ys{0.95, 0.7, 0.5, 0.45, 0.55, 0.8, 0.9};
        const auto base = extract_min(make_curve(AxisKind::ts_ns, xs, ys), 3);
        std::vector<double> xs_shifted(xs);
        for (auto& x : xs_shifted) x += 100.0;
        const auto shifted =
            extract_min(make_curve(AxisKind::ts_ns, xs_shifted, ys), 3);
        CHECK(shifted.x_at_min == base.x_at_min + 100.0);
        CHECK(shifted.min_signal == base.min_signal);

        std::vector<double> ys_offset(ys);
        for (auto& y : ys_offset) y += 0.05;
        const auto offset = extract_min(make_curve(AxisKind::ts_ns, xs, ys_offset), 3);
        CHECK(offset.min_signal == doctest::Approx(base.min_signal + 0.05).epsilon(1e-12));
    }

    SUBCASE("noisy cosine floor recovery over 100 trials") {
        Rng rng(314);
        const double noise = 0.02;
        const double floor = 0.55;
        int failures = 0;
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> xs, ys;
            for (int i = 0; i < 40; ++i) {
                const double x = 20.0 + 10.0 * i;
                const double clean =
                    1.0 - (1.0 - floor) * 0.5 * (1.0 - std::cos(2.0 * M_PI * i / 39.0));
                xs.push_back(x);
                ys.push_back(clean + noise * rng.normal());
            }
            const auto result = extract_min(make_curve(AxisKind::ts_ns, xs, ys, noise), 5);
            if (std::abs(result.min_signal - floor) > 1.5 * noise) ++failures;
        }
        // The running mean shrinks the noise by sqrt(5) and the minimum
        // statistic biases slightly low; 1.5 sem covers it almost always.
        CHECK(failures <= 5);
    }
}

TEST_CASE("lorentzian fit") {
    auto synthesize = [](double center, double fwhm, double amplitude, double baseline,
                         int n, double span) {
        std::vector<double> xs, ys;
        for (int i = 0; i < n; ++i) {
            const double x = center - span / 2.0 + span * i / (n - 1.0);
            xs.push_back(x);
            ys.push_back(detail::lorentzian_value({center, fwhm, amplitude, baseline}, x));
        }
        return make_curve(AxisKind::frequency_mhz, xs, ys);
    };

    SUBCASE("noiseless recovery to 1e-6") {
        const auto curve = synthesize(652.0, 20.0, 0.4, 1.0, 60, 120.0);
        const auto fit = fit_lorentzian(curve);
        CHECK(fit.converged);
        CHECK(fit.parameter("center_mhz") == doctest::Approx(652.0).epsilon(1e-6));
        CHECK(fit.parameter("fwhm_mhz") == doctest::Approx(20.0).epsilon(1e-6));
        CHECK(fit.parameter("amplitude") == doctest::Approx(0.4).epsilon(1e-6));
        CHECK(fit.parameter("baseline") == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(fit.residual_norm < 1e-9);
    }

    SUBCASE("flat curve converges to a negligible amplitude") {
        std::vector<double> xs, ys;
        for (int i = 0; i < 30; ++i) {
            xs.push_back(600.0 + i);
            ys.push_back(0.97);
        }
        const auto fit = fit_lorentzian(make_curve(AxisKind::frequency_mhz, xs, ys));
        CHECK(fit.converged);
        CHECK(std::abs(fit.parameter("amplitude")) < 1e-6);
        CHECK(fit.parameter("baseline") == doctest::Approx(0.97).epsilon(1e-6));
    }

    SUBCASE("5 percent noise keeps the center within 1 MHz almost always") {
        Rng rng(271);
        int within = 0;
        for (int trial = 0; trial < 100; ++trial) {
            auto curve = synthesize(652.0, 20.0, 0.4, 1.0, 50, 120.0);
            for (auto& point : curve.points) {
                point.signal_mean *= 1.0 + 0.05 * rng.normal();
            }
            const auto fit = fit_lorentzian(curve);
            if (std::abs(fit.parameter("center_mhz") - 652.0) <= 1.0) ++within;
        }
        CHECK(within >= 95);
    }

    SUBCASE("point order does not matter") {
        auto curve = synthesize(650.0, 15.0, 0.3, 1.0, 41, 100.0);
        auto scrambled = curve;
        std::reverse(scrambled.points.begin(), scrambled.points.end());
        std::swap(scrambled.points[3], scrambled.points[17]);
        const auto a = fit_lorentzian(curve);
        const auto b = fit_lorentzian(scrambled);
        CHECK(a.parameter("center_mhz") ==
              doctest::Approx(b.parameter("center_mhz")).epsilon(1e-10));
        CHECK(a.parameter("fwhm_mhz") ==
              doctest::Approx(b.parameter("fwhm_mhz")).epsilon(1e-10));
    }

    SUBCASE("needs at least five frequency-axis points") {
        const auto curve = make_curve(AxisKind::frequency_mhz, {1, 2, 3}, {1, 1, 1});
        CHECK_THROWS_AS(fit_lorentzian(curve), DomainError);
        const auto wrong_axis = make_curve(AxisKind::ts_ns, {1, 2, 3, 4, 5},
                                           {1, 1, 1, 1, 1});
        CHECK_THROWS_AS(fit_lorentzian(wrong_axis), DomainError);
    }
}

TEST_CASE("bi-exponential fit") {
    auto synthesize = [](const std::array<double, 5>& reported, int n, double t_max) {
        // reported = (a1, ta, a2, tb, offset)
        std::vector<double> ts, ys;
        for (int i = 0; i < n; ++i) {
            const double t = t_max * (i + 0.5) / n;
            ts.push_back(t);
            ys.push_back(reported[0] * std::exp(-t / reported[1]) +
                         reported[2] * std::exp(-t / reported[3]) + reported[4]);
        }
        return std::pair(ts, ys);
    };

    SUBCASE("noiseless recovery to 1e-6") {
        const auto [ts, ys] = synthesize({0.3, 0.4, 0.7, 3.0, 0.0}, 80, 12.0);
        const auto fit = fit_biexponential(ts, ys);
        CHECK(fit.converged);
        CHECK(fit.parameter("amplitude_fast") == doctest::Approx(0.3).epsilon(1e-6));
        CHECK(fit.parameter("t_fast") == doctest::Approx(0.4).epsilon(1e-6));
        CHECK(fit.parameter("amplitude_slow") == doctest::Approx(0.7).epsilon(1e-6));
        CHECK(fit.parameter("t_slow") == doctest::Approx(3.0).epsilon(1e-6));
        CHECK(std::abs(fit.parameter("offset")) < 1e-6);
        CHECK(fit.parameter("t_fast") <= fit.parameter("t_slow"));
    }

    SUBCASE("relaxometry-like decay has a sub-ms fast component") {
        // Times in ms: fast 0.3 ms against a 4 ms tail, like an NV ensemble
        // T1 curve with a charge-noise component.
        const auto [ts, ys] = synthesize({0.4, 0.3, 0.6, 4.0, 0.05}, 60, 15.0);
        const auto fit = fit_biexponential(ts, ys);
        CHECK(fit.converged);
        CHECK(fit.parameter("t_fast") < 1.0);
    }

    SUBCASE("single exponential degenerates gracefully") {
        std::vector<double> ts, ys;
        for (int i = 0; i < 40; ++i) {
            const double t = 0.1 + 0.3 * i;
            ts.push_back(t);
            ys.push_back(0.8 * std::exp(-t / 2.0));
        }
        const auto fit = fit_biexponential(ts, ys);
        CHECK(fit.residual_norm < 1e-7);
        const double a1 = fit.parameter("amplitude_fast");
        const double a2 = fit.parameter("amplitude_slow");
        const double ta = fit.parameter("t_fast");
        const double tb = fit.parameter("t_slow");
        const bool one_amplitude_vanishes = std::abs(a1) < 1e-3 || std::abs(a2) < 1e-3;
        const bool times_merge = std::abs(tb / ta - 1.0) < 1e-2;
        CHECK((one_amplitude_vanishes || times_merge));
    }

    SUBCASE("input validation") {
        std::vector<double> ts{1, 2, 3, 4, 5, 6};
        std::vector<double> ys{1, 1, 1, 1, 1, 1};
        CHECK_THROWS_AS(fit_biexponential(ts, ys), DomainError);  // too short
        ts = {1, 2, 3, 3, 5, 6, 7};
        ys = {1, 1, 1, 1, 1, 1, 1};
        CHECK_THROWS_AS(fit_biexponential(ts, ys), DomainError);  // not increasing
    }
}

TEST_CASE("fitter gradients match central finite differences") {
    Rng rng(5150);
    for (int trial = 0; trial < 20; ++trial) {
        const std::array<double, 4> lp{rng.uniform(600.0, 700.0), rng.uniform(5.0, 40.0),
                                       rng.uniform(0.1, 0.9), rng.uniform(0.8, 1.2)};
        const double x = rng.uniform(590.0, 710.0);
        const auto analytic = detail::lorentzian_gradient(lp, x);
        double lorentzian_norm = 0.0, lorentzian_err = 0.0;
        for (int j = 0; j < 4; ++j) {
            auto plus = lp;
            auto minus = lp;
            const double h = 6e-6 * std::max(std::abs(lp[j]), 1.0);
            plus[j] += h;
            minus[j] -= h;
            const double numeric =
                (detail::lorentzian_value(plus, x) - detail::lorentzian_value(minus, x)) /
                (2.0 * h);
            lorentzian_norm += analytic[j] * analytic[j];
            lorentzian_err += (numeric - analytic[j]) * (numeric - analytic[j]);
        }
        CHECK(std::sqrt(lorentzian_err) < 1e-5 * std::max(std::sqrt(lorentzian_norm), 1e-9));

        const std::array<double, 5> bp{rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0),
                                       rng.uniform(-0.2, 0.2), rng.uniform(-1.5, 1.0),
                                       rng.uniform(0.3, 2.0)};
        const double t = rng.uniform(0.1, 8.0);
        const auto gradient = detail::biexponential_gradient(bp, t);
        double biexp_norm = 0.0, biexp_err = 0.0;
        for (int j = 0; j < 5; ++j) {
            auto plus = bp;
            auto minus = bp;
            const double h = 6e-6 * std::max(std::abs(bp[j]), 1.0);
            plus[j] += h;
            minus[j] -= h;
            const double numeric = (detail::biexponential_value(plus, t) -
                                    detail::biexponential_value(minus, t)) /
                                   (2.0 * h);
            biexp_norm += gradient[j] * gradient[j];
            biexp_err += (numeric - gradient[j]) * (numeric - gradient[j]);
        }
        CHECK(std::sqrt(biexp_err) < 1e-5 * std::max(std::sqrt(biexp_norm), 1e-9));
    }
}

TEST_CASE("first-order optimality at convergence") {
    Rng rng(909);
    auto curve = make_curve(AxisKind::frequency_mhz, {}, {});
    for (int i = 0; i < 50; ++i) {
        const double x = 600.0 + 2.0 * i;
        const double y = detail::lorentzian_value({652.0, 20.0, 0.4, 1.0}, x) +
                         0.01 * rng.normal();
        curve.points.push_back({x, y, 0.01, 1});
    }
    const auto fit = fit_lorentzian(curve);
    REQUIRE(fit.converged);

    const std::array<double, 4> p{fit.parameters[0], fit.parameters[1], fit.parameters[2],
                                  fit.parameters[3]};
    std::array<double, 4> jt_r{};
    std::array<double, 4> column_norms{};
    double residual_norm_sq = 0.0;
    for (const auto& point : curve.points) {
        const double r = detail::lorentzian_value(p, point.x) - point.signal_mean;
        const auto gradient = detail::lorentzian_gradient(p, point.x);
        residual_norm_sq += r * r;
        for (int j = 0; j < 4; ++j) {
            jt_r[j] += gradient[j] * r;
            column_norms[j] += gradient[j] * gradient[j];
        }
    }
    const double residual_norm = std::sqrt(residual_norm_sq);
    for (int j = 0; j < 4; ++j) {
        CHECK(std::abs(jt_r[j]) <=
              1e-6 * residual_norm * std::sqrt(column_norms[j]) + 1e-12);
    }
}

TEST_CASE("split comparison") {
    auto floor_curve = [](double floor) {
        std::vector<double> xs, ys;
        for (int i = 0; i < 20; ++i) {
            xs.push_back(20.0 + 20.0 * i);
            ys.push_back(1.0 - (1.0 - floor) * std::sin(M_PI * i / 19.0));
        }
        return make_curve(AxisKind::ts_ns, xs, ys);
    };

    SUBCASE("identical periods show zero difference") {
        const auto curve = floor_curve(0.85);
        const auto report = split_compare(curve, curve, 12.0, 900.0);
        CHECK(report.difference == 0.0);
    }

    SUBCASE("shallower floor lowers the estimate, deeper raises it") {
        const auto early = floor_curve(0.87);
        const auto late = floor_curve(0.92);
        const auto report = split_compare(early, late, 12.0, 900.0);
        CHECK(report.difference < 0.0);  // signal recovered -> density dropped
        CHECK(report.first.sigma_hat_per_nm2 > report.second.sigma_hat_per_nm2);

        const auto deeper = split_compare(late, early, 12.0, 900.0);
        CHECK(deeper.difference > 0.0);
    }

    SUBCASE("pair averaging halves the grid") {
        const auto curve = floor_curve(0.8);
        const auto averaged = pair_average_curve(curve);
        CHECK(averaged.points.size() == curve.points.size() / 2);
        CHECK(averaged.points[0].x ==
              doctest::Approx(0.5 * (curve.points[0].x + curve.points[1].x)));
        CHECK(averaged.points[0].n == 2);
        const auto report = split_compare(curve, curve, 12.0, 900.0, true);
        CHECK(report.difference == 0.0);
    }

    SUBCASE("mismatched grids are rejected") {
        const auto a = floor_curve(0.8);
        auto b = floor_curve(0.8);
        b.points[3].x += 5.0;
        CHECK_THROWS_AS(split_compare(a, b, 12.0, 900.0), DomainError);
        b = floor_curve(0.8);
        b.points.pop_back();
        CHECK_THROWS_AS(split_compare(a, b, 12.0, 900.0), DomainError);
    }
}

TEST_CASE("sign-change classifier") {
    std::vector<double> sems(40, 0.005);

    SUBCASE("oscillation counts many changes") {
        std::vector<double> detrended;
        for (int i = 0; i < 40; ++i) detrended.push_back(0.2 * std::cos(0.8 * i));
        CHECK(significant_sign_changes(detrended, sems, 0.4) >= 2);
    }

    SUBCASE("noise within threshold counts none") {
        std::vector<double> detrended;
        for (int i = 0; i < 40; ++i) detrended.push_back(0.004 * ((i % 2) ? 1 : -1));
        CHECK(significant_sign_changes(detrended, sems, 0.4) == 0);
    }

    SUBCASE("single dip counts one change at most") {
        std::vector<double> detrended;
        for (int i = 0; i < 40; ++i) detrended.push_back(i < 20 ? -0.1 : 0.1);
        CHECK(significant_sign_changes(detrended, sems, 0.4) == 1);
    }
}
