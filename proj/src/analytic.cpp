#include "deer/analytic.hpp"

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "deer/errors.hpp"
#include "deer/geometry.hpp"

namespace deer {

namespace {

using Mat2 = Eigen::Matrix2cd;
using std::complex;

// exp(-i t (wz*sz + wx*sx)) for spin-1/2 (angular rates in rad/us, t in us):
// rotation by |w| t about the tilted axis.
Mat2 two_level_propagator(double wx, double wz, double t_us) {
    const double w = std::hypot(wx, wz);
    const double angle = 0.5 * w * t_us;
    const double c = std::cos(angle);
    const double s = (w > 0.0) ? std::sin(angle) / w : 0.0;
    Mat2 u;
    u(0, 0) = complex<double>(c, -s * wz);
    u(1, 1) = complex<double>(c, s * wz);
    u(0, 1) = complex<double>(0.0, -s * wx);
    u(1, 0) = complex<double>(0.0, -s * wx);
    return u;
}

const Mat2 kFlipX = [] {
    Mat2 f = Mat2::Zero();
    f(0, 1) = complex<double>(0.0, -1.0);
    f(1, 0) = complex<double>(0.0, -1.0);
    return f;
}();

// Deterministic adaptive Simpson with a fixed partition tree, so results are
// bit-stable. Accumulates the achieved error; the caller decides whether the
// budget was met.
struct AdaptiveSimpson {
    std::function<double(double)> f;
    int max_depth;
    double achieved_error = 0.0;

    double integrate(double a, double b, double tol) {
        const double fa = f(a);
        const double m = 0.5 * (a + b);
        const double fm = f(m);
        const double fb = f(b);
        const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        return recurse(a, b, fa, fm, fb, whole, tol, max_depth);
    }

  private:
    double recurse(double a, double b, double fa, double fm, double fb, double whole,
                   double tol, double depth) {
        const double m = 0.5 * (a + b);
        const double lm = 0.5 * (a + m);
        const double rm = 0.5 * (m + b);
        const double flm = f(lm);
        const double frm = f(rm);
        const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        const double delta = left + right - whole;
        if (std::abs(delta) <= 15.0 * tol || depth <= 0) {
            achieved_error += std::abs(delta) / 15.0;
            return left + right + delta / 15.0;
        }
        return recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
               recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    }
};

// Shared machinery for the plane integrals: integrates f(coupling_mhz) over
// the surface plane against a point at depth d below it, with the field axis
// tilted by axis_polar_deg from the surface normal.
double plane_integral(double depth_nm, double axis_polar_deg, const QuadratureSpec& quad,
                      const std::function<double(double)>& f_of_coupling) {
    const double rmax = quad.rmax_factor * depth_nm;
    const NvSite site{depth_nm, axis_polar_deg, 0.0};
    const Vec3 axis = nv_axis_unit(site);
    const bool symmetric = axis_polar_deg == 0.0;

    double inner_error = 0.0;
    auto radial_integrand = [&](double radius) {
        if (symmetric) {
            const Vec3 sep{radius, 0.0, depth_nm};
            return kTwoPi * radius * f_of_coupling(secular_dipolar_coupling_mhz(sep, axis));
        }
        AdaptiveSimpson azimuthal{
            [&](double phi) {
                const Vec3 sep{radius * std::cos(phi), radius * std::sin(phi), depth_nm};
                return f_of_coupling(secular_dipolar_coupling_mhz(sep, axis));
            },
            quad.max_depth};
        // Integrand is even in phi, so integrate half the circle.
        const double half = azimuthal.integrate(0.0, std::numbers::pi,
                                                0.1 * quad.abs_tol / (rmax + 1.0));
        inner_error += 2.0 * radius * azimuthal.achieved_error;
        return 2.0 * radius * half;
    };

    AdaptiveSimpson radial{radial_integrand, quad.max_depth};
    const double value = radial.integrate(0.0, rmax, quad.abs_tol);
    const double achieved = radial.achieved_error + inner_error;
    if (achieved > 10.0 * quad.abs_tol) {
        std::ostringstream msg;
        msg << "plane_integral: achieved error " << achieved << " above tolerance "
            << quad.abs_tol;
        throw AccuracyError(msg.str());
    }
    return value;
}

}  // namespace

double single_spin_deer(const SingleSpinParams& p) {
    if (p.ts_ns + p.offset_ns > 0.5 * p.tau_ns || p.ts_ns < 0.0 || p.offset_ns < 0.0) {
        throw DomainError("single_spin_deer: T_s + offset must fit one echo half");
    }
    DriveParams drive;
    drive.rabi_mhz = p.rabi_mhz;
    drive.duration_ns = p.ts_ns;
    drive.offset_after_nv_pulse_ns = p.offset_ns;
    drive.instantaneous_pi = p.instantaneous_pi;
    const DeerTimeline timeline = build_deer_timeline(p.tau_ns, drive);

    const double wz_plus = mhz_to_rad_per_us(p.detuning_mhz + 0.5 * p.coupling_mhz);
    const double wz_minus = mhz_to_rad_per_us(p.detuning_mhz - 0.5 * p.coupling_mhz);
    const double wx = mhz_to_rad_per_us(p.rabi_mhz);

    Mat2 u_a = Mat2::Identity();
    Mat2 u_b = Mat2::Identity();
    bool after_pi = false;
    for (const auto& segment : timeline.segments) {
        if (segment.nv_action == NvAction::pi_pulse) {
            after_pi = true;
            continue;
        }
        if (segment.drive_on && p.instantaneous_pi) {
            u_a = kFlipX * u_a;
            u_b = kFlipX * u_b;
            continue;
        }
        if (segment.duration_ns <= 0.0) continue;
        const double t = ns_to_us(segment.duration_ns);
        const double drive_x = segment.drive_on ? wx : 0.0;
        const double wz_a = after_pi ? wz_minus : wz_plus;
        const double wz_b = after_pi ? wz_plus : wz_minus;
        u_a = two_level_propagator(drive_x, wz_a, t) * u_a;
        u_b = two_level_propagator(drive_x, wz_b, t) * u_b;
    }
    // The drive-off reference is exactly 1 here: both branch Hamiltonians are
    // z rotations, so the echo refocuses identically.
    return 0.5 * (u_b.adjoint() * u_a).trace().real();
}

double ensemble_product(std::span<const double> factors) {
    double product = 1.0;
    for (double f : factors) {
        if (f < -1.0 - 1e-9 || f > 1.0 + 1e-9) {
            throw DomainError("ensemble_product: factor outside [-1, 1]");
        }
        product *= f;
    }
    return product;
}

double poisson_average_signal(const FloorParams& params, const DriveParams& drive,
                              double axis_polar_deg, const QuadratureSpec& quad,
                              MomentConvention convention) {
    if (params.density_per_nm2 < 0.0) {
        throw DomainError("poisson_average_signal: density must be >= 0");
    }
    if (params.depth_nm <= 0.0 || params.tau_ns <= 0.0) {
        throw DomainError("poisson_average_signal: depth and tau must be > 0");
    }
    if (params.density_per_nm2 == 0.0) return 1.0;

    const double scale = convention == MomentConvention::unit_moment ? 2.0 : 1.0;
    auto deficit = [&](double coupling_mhz) {
        SingleSpinParams p;
        p.coupling_mhz = scale * coupling_mhz;
        p.detuning_mhz = -drive.frequency_offset_mhz;
        p.rabi_mhz = drive.rabi_mhz;
        p.tau_ns = params.tau_ns;
        p.ts_ns = drive.duration_ns;
        p.offset_ns = drive.offset_after_nv_pulse_ns;
        p.instantaneous_pi = drive.instantaneous_pi;
        return 1.0 - single_spin_deer(p);
    };
    const double integral = plane_integral(params.depth_nm, axis_polar_deg, quad, deficit);
    return std::exp(-params.density_per_nm2 * integral);
}

double floor_exponent(const FloorParams& params, const PhysicsConstants& c) {
    if (params.depth_nm <= 0.0 || params.tau_ns <= 0.0) {
        throw DomainError("floor_exponent: depth and tau must be > 0");
    }
    if (params.density_per_nm2 < 0.0) {
        throw DomainError("floor_exponent: density must be >= 0");
    }
    const double prefactor = c.dipolar_prefactor_rad_per_us_nm3;
    const double tau_us = ns_to_us(params.tau_ns);
    const double d4 = std::pow(params.depth_nm, 4);
    return (3.0 * std::numbers::pi / 16.0) * prefactor * prefactor *
           params.density_per_nm2 * tau_us * tau_us / d4;
}

double floor_signal(const FloorParams& params, const PhysicsConstants& c) {
    return std::exp(-floor_exponent(params, c));
}

double second_moment_exponent(const FloorParams& params, double axis_polar_deg,
                              MomentConvention convention, const QuadratureSpec& quad) {
    const double kappa = convention == MomentConvention::unit_moment ? 1.0 : 0.5;
    const double tau_us = ns_to_us(params.tau_ns);
    auto phase_variance = [&](double coupling_mhz) {
        const double phi = kappa * mhz_to_rad_per_us(coupling_mhz) * tau_us;
        return phi * phi;
    };
    // Scale the quadrature tolerance to the integrand magnitude.
    QuadratureSpec scaled = quad;
    scaled.abs_tol = quad.abs_tol * std::max(1.0, 1.0 / std::pow(params.depth_nm, 4));
    const double integral =
        plane_integral(params.depth_nm, axis_polar_deg, scaled, phase_variance);
    return 0.5 * params.density_per_nm2 * integral;
}

FloorConventionReport check_floor_convention(const FloorParams& params,
                                             const QuadratureSpec& quad) {
    FloorConventionReport report;
    const double target = floor_exponent(params);
    report.ratio_normal_spin_half =
        target / second_moment_exponent(params, 0.0, MomentConvention::spin_half, quad);
    report.ratio_tilted_spin_half =
        target / second_moment_exponent(params, report.tilted_axis_polar_deg,
                                        MomentConvention::spin_half, quad);
    report.ratio_normal_unit_moment =
        target / second_moment_exponent(params, 0.0, MomentConvention::unit_moment, quad);
    report.ratio_tilted_unit_moment =
        target / second_moment_exponent(params, report.tilted_axis_polar_deg,
                                        MomentConvention::unit_moment, quad);
    report.matches_tilted_unit_moment =
        std::abs(report.ratio_tilted_unit_moment - 1.0) < 1e-3 &&
        std::abs(report.ratio_normal_spin_half - 1.0) > 0.1 &&
        std::abs(report.ratio_tilted_spin_half - 1.0) > 0.1 &&
        std::abs(report.ratio_normal_unit_moment - 1.0) > 0.1;
    return report;
}

}  // namespace deer
