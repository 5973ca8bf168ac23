#pragma once

#include <numbers>

namespace deer {

// Canonical internal units, used consistently across the library:
//   distance   nm
//   time       ns in pulse-sequence interfaces, us for relaxation times
//   frequency  MHz (linear); angular frequencies carried as rad/us
//   field      gauss
// These keep magnitudes near unity: couplings are kHz..MHz, free evolution
// is ~1 us, NV depths are ~10 nm.

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline constexpr double ns_to_us(double t_ns) { return t_ns * 1e-3; }
inline constexpr double us_to_ns(double t_us) { return t_us * 1e3; }

// 1 MHz of linear frequency is 2*pi rad/us of angular frequency.
inline constexpr double mhz_to_rad_per_us(double f_mhz) { return kTwoPi * f_mhz; }
inline constexpr double rad_per_us_to_mhz(double w) { return w / kTwoPi; }

/// Physical constants plus the dipolar coupling prefactor derived from them.
/// Immutable value object; safe to share across threads.
struct PhysicsConstants {
    /// Electron gyromagnetic ratio as angular frequency per field (rad s^-1 T^-1).
    double gamma_e_rad_per_s_tesla;
    /// Same ratio as linear frequency per gauss (MHz/G).
    double gamma_e_mhz_per_gauss;
    /// Reduced Planck constant (J s).
    double hbar_joule_s;
    /// mu0 / 4pi (T^2 m^3 J^-1).
    double mu0_over_4pi;
    /// (mu0/4pi) * gamma^2 * hbar as angular frequency times volume (rad/us nm^3).
    double dipolar_prefactor_rad_per_us_nm3;
    /// Same prefactor as linear frequency times volume (MHz nm^3).
    double dipolar_prefactor_mhz_nm3;

    friend bool operator==(const PhysicsConstants&, const PhysicsConstants&) = default;

    /// CODATA 2018 snapshot. The free-electron g-factor is assumed for the
    /// surface radicals (no g-anisotropy), so the same gamma serves both the
    /// NV electron spin and the targets.
    static const PhysicsConstants& codata2018();
};

/// Electron Larmor frequency in MHz at a given field in gauss.
/// Strictly linear in the field; throws DomainError for negative field.
double larmor_frequency_mhz(double field_gauss,
                            const PhysicsConstants& c = PhysicsConstants::codata2018());

}  // namespace deer
