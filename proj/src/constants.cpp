#include "deer/constants.hpp"

#include "deer/errors.hpp"

namespace deer {

namespace {

PhysicsConstants make_codata2018() {
    // CODATA 2018 recommended values.
    const double gamma_e = 1.76085963023e11;   // rad s^-1 T^-1
    const double hbar = 1.054571817e-34;       // J s
    const double mu0 = 1.25663706212e-6;       // N A^-2
    const double mu0_over_4pi = mu0 / (2.0 * kTwoPi);

    PhysicsConstants c{};
    c.gamma_e_rad_per_s_tesla = gamma_e;
    // rad/s/T -> MHz/G: divide by 2*pi (linear), by 1e6 (MHz), by 1e4 (G per T).
    c.gamma_e_mhz_per_gauss = gamma_e / kTwoPi * 1e-10;
    c.hbar_joule_s = hbar;
    c.mu0_over_4pi = mu0_over_4pi;
    // (mu0/4pi) gamma^2 hbar in rad/s m^3, then m^3 -> nm^3 (x1e27) and
    // rad/s -> rad/us (x1e-6).
    const double prefactor_si = mu0_over_4pi * gamma_e * gamma_e * hbar;
    c.dipolar_prefactor_rad_per_us_nm3 = prefactor_si * 1e21;
    c.dipolar_prefactor_mhz_nm3 = c.dipolar_prefactor_rad_per_us_nm3 / kTwoPi;
    return c;
}

}  // namespace

const PhysicsConstants& PhysicsConstants::codata2018() {
    static const PhysicsConstants c = make_codata2018();
    return c;
}

double larmor_frequency_mhz(double field_gauss, const PhysicsConstants& c) {
    if (field_gauss < 0.0) {
        throw DomainError("larmor_frequency_mhz: field must be >= 0 gauss");
    }
    return c.gamma_e_mhz_per_gauss * field_gauss;
}

}  // namespace deer
