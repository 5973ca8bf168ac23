#pragma once

#include <span>

#include "deer/constants.hpp"
#include "deer/sequence.hpp"

namespace deer {

/// One driven target against the NV echo. detuning_mhz is the spin's
/// resonance offset from the drive frequency (a frequency sweep enters here
/// as detuning - sweep offset).
struct SingleSpinParams {
    double coupling_mhz = 0.0;
    double detuning_mhz = 0.0;
    double rabi_mhz = 10.0;
    double tau_ns = 900.0;
    double ts_ns = 0.0;
    double offset_ns = 0.0;
    bool instantaneous_pi = false;
};

/// Exact two-level echo factor for one target: composes the branch 2x2
/// propagators across the timeline segments analytically (free segments are
/// z rotations at the branch-dependent rate, drive segments rotations about
/// the tilted axis set by Rabi, detuning and the branch shift). Reduces to
/// cos(pi * a * tau) in the instantaneous-pi limit and to 1 when the drive
/// is off.
double single_spin_deer(const SingleSpinParams& p);

/// Product of per-spin echo factors (the non-interacting ensemble signal).
/// Empty input gives 1.
double ensemble_product(std::span<const double> factors);

struct FloorParams {
    double density_per_nm2 = 0.0;
    double depth_nm = 12.0;
    double tau_ns = 900.0;
};

/// How a target's moment is normalized when its flip imprints phase on the
/// NV. spin_half is the quantum spin-1/2 convention (full flip dephases by
/// a*tau/2 in angular units); unit_moment is the classical unit-magnetization
/// convention (a*tau), which is the normalization the closed-form floor
/// formula turns out to assume (see check_floor_convention).
enum class MomentConvention { spin_half, unit_moment };

struct QuadratureSpec {
    double abs_tol = 1e-6;
    int max_depth = 30;
    /// Radial cutoff of the surface integral as a multiple of the depth.
    /// The integrand decays as r^-6, so the truncated tail is bounded by
    /// ~ sigma * (pi/16) * (C * tau)^2 / rmax^4.
    double rmax_factor = 10.0;
};

/// Poisson-ensemble average over the surface plane:
///   S = exp[-sigma * Int (1 - s1(r)) d^2r]
/// with s1 the single-spin factor at position r. Polar-coordinate adaptive
/// Simpson quadrature; the azimuthal integral collapses to 2*pi only when the
/// field axis is normal to the surface (axis_polar_deg = 0). The axis azimuth
/// never matters (in-plane rotations leave the integral unchanged).
double poisson_average_signal(const FloorParams& params, const DriveParams& drive,
                              double axis_polar_deg, const QuadratureSpec& quad = {},
                              MomentConvention convention = MomentConvention::spin_half);

/// Exponent of the closed-form minimum-signal floor,
///   (3*pi/16) * C^2 * sigma * tau^2 / d^4
/// with C = (mu0/4pi) gamma^2 hbar in angular units.
double floor_exponent(const FloorParams& params,
                      const PhysicsConstants& c = PhysicsConstants::codata2018());

/// exp(-floor_exponent): the minimum DEER signal over T_s predicted by the
/// closed-form floor.
double floor_signal(const FloorParams& params,
                    const PhysicsConstants& c = PhysicsConstants::codata2018());

/// Gaussian-phase second-moment exponent evaluated numerically:
///   (sigma/2) * Int (kappa * a(r) * tau)^2 d^2r
/// with kappa = 1/2 (spin_half) or 1 (unit_moment).
double second_moment_exponent(const FloorParams& params, double axis_polar_deg,
                              MomentConvention convention, const QuadratureSpec& quad = {});

/// Ratio of the closed-form floor exponent to the numerical second moment for
/// the candidate field orientations and moment conventions. Identifies which
/// combination the floor formula assumes (ratio closest to 1).
struct FloorConventionReport {
    double ratio_normal_spin_half = 0.0;
    double ratio_tilted_spin_half = 0.0;
    double ratio_normal_unit_moment = 0.0;
    double ratio_tilted_unit_moment = 0.0;
    double tilted_axis_polar_deg = 54.7356;
    bool matches_tilted_unit_moment = false;
};

FloorConventionReport check_floor_convention(const FloorParams& params,
                                             const QuadratureSpec& quad = {});

}  // namespace deer
