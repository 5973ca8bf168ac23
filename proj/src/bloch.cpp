#include "deer/bloch.hpp"

#include <cmath>
#include <sstream>

#include "deer/constants.hpp"
#include "deer/errors.hpp"
#include "deer/rng.hpp"

namespace deer {

namespace {

using Eigen::Matrix2d;
using Eigen::Vector2d;
using Eigen::Vector3d;

constexpr std::uint64_t kMaxIntegratorSteps = 50'000'000;

struct SegmentResult {
    Vector3d m;
    double mz_integral_us;
};

void validate_relaxation(const RelaxationParams& relax) {
    if (!(relax.t1_us > 0.0) || !(relax.t2_us > 0.0)) {
        throw DomainError("RelaxationParams: T1 and T2 must be > 0 (or infinite)");
    }
    if (std::isfinite(relax.t1_us) && std::isfinite(relax.t2_us) &&
        relax.t2_us > 2.0 * relax.t1_us + 1e-12) {
        throw DomainError("RelaxationParams: T2 must not exceed 2*T1");
    }
}

// Omega = 0: transverse rotation at wz with T2 decay, longitudinal T1 decay
// toward the equilibrium. Everything in closed form.
SegmentResult evolve_free(const Vector3d& m, double wz, double t,
                          const RelaxationParams& relax) {
    const double c = std::cos(wz * t);
    const double s = std::sin(wz * t);
    const double decay2 = std::isfinite(relax.t2_us) ? std::exp(-t / relax.t2_us) : 1.0;
    SegmentResult out;
    // dm/dt = m x w rotates the transverse part clockwise for wz > 0.
    out.m.x() = decay2 * (m.x() * c + m.y() * s);
    out.m.y() = decay2 * (-m.x() * s + m.y() * c);
    if (std::isfinite(relax.t1_us)) {
        const double decay1 = std::exp(-t / relax.t1_us);
        out.m.z() = relax.equilibrium_mz + (m.z() - relax.equilibrium_mz) * decay1;
        out.mz_integral_us = relax.equilibrium_mz * t +
                             (m.z() - relax.equilibrium_mz) * relax.t1_us * (1.0 - decay1);
    } else {
        out.m.z() = m.z();
        out.mz_integral_us = m.z() * t;
    }
    return out;
}

// No relaxation: exact rotation about the tilted axis (Rodrigues), with the
// z-component integral in closed form.
SegmentResult evolve_rotation(const Vector3d& m, double wx, double wz, double t) {
    const double w = std::hypot(wx, wz);
    if (w == 0.0) return {m, m.z() * t};
    const Vector3d axis(wx / w, 0.0, wz / w);
    const double parallel = axis.dot(m);
    const Vector3d perp = m - parallel * axis;
    const Vector3d cross = axis.cross(m);
    const double c = std::cos(w * t);
    const double s = std::sin(w * t);
    SegmentResult out;
    // dm/dt = m x w = -w (axis x m): rotation by angle -w t about the axis.
    out.m = parallel * axis + perp * c - cross * s;
    out.mz_integral_us = parallel * axis.z() * t + perp.z() * s / w -
                         cross.z() * (1.0 - c) / w;
    return out;
}

// Resonant drive (wz = 0) with relaxation: m_x decouples and decays; the
// (m_y, m_z) pair obeys a constant-coefficient affine system solved exactly
// through its 2x2 matrix exponential.
SegmentResult evolve_resonant(const Vector3d& m, double wx, double t,
                              const RelaxationParams& relax) {
    const double inv_t1 = std::isfinite(relax.t1_us) ? 1.0 / relax.t1_us : 0.0;
    const double inv_t2 = std::isfinite(relax.t2_us) ? 1.0 / relax.t2_us : 0.0;

    Matrix2d system;
    system << -inv_t2, wx, -wx, -inv_t1;
    const Vector2d source(0.0, relax.equilibrium_mz * inv_t1);
    const Vector2d v0(m.y(), m.z());
    const Vector2d steady = -system.inverse() * source;  // det = 1/(T1 T2) + wx^2 > 0

    const double mu = -0.5 * (inv_t1 + inv_t2);
    const double delta = 0.5 * (inv_t1 - inv_t2);
    const double disc = delta * delta - wx * wx;
    double ch, sh_over_s;  // cosh(st), sinh(st)/s with trig continuation
    if (disc > 0.0) {
        const double s = std::sqrt(disc);
        ch = std::cosh(s * t);
        sh_over_s = std::sinh(s * t) / s;
    } else if (disc < 0.0) {
        const double s = std::sqrt(-disc);
        ch = std::cos(s * t);
        sh_over_s = std::sin(s * t) / s;
    } else {
        ch = 1.0;
        sh_over_s = t;
    }
    Matrix2d traceless;
    traceless << delta, wx, -wx, -delta;
    const Matrix2d expm = std::exp(mu * t) * (ch * Matrix2d::Identity() + sh_over_s * traceless);

    const Vector2d v = expm * (v0 - steady) + steady;
    const Vector2d integral = system.inverse() * (expm - Matrix2d::Identity()) * (v0 - steady) +
                              steady * t;

    SegmentResult out;
    out.m.x() = std::isfinite(relax.t2_us) ? m.x() * std::exp(-t / relax.t2_us) : m.x();
    out.m.y() = v(0);
    out.m.z() = v(1);
    out.mz_integral_us = integral(1);
    return out;
}

SegmentResult evolve_rk4(const Vector3d& m, double wx, double wz, double t,
                         const RelaxationParams& relax) {
    const double inv_t1 = std::isfinite(relax.t1_us) ? 1.0 / relax.t1_us : 0.0;
    const double inv_t2 = std::isfinite(relax.t2_us) ? 1.0 / relax.t2_us : 0.0;
    const double w = std::hypot(wx, wz);

    // Tighter than the contract's ceiling of min(1/(20 w), T2/20, T1/20) so
    // the global error stays below the 1e-6 oracle tolerance.
    double h_max = t;
    if (w > 0.0) h_max = std::min(h_max, 1.0 / (40.0 * w));
    if (inv_t2 > 0.0) h_max = std::min(h_max, relax.t2_us / 40.0);
    if (inv_t1 > 0.0) h_max = std::min(h_max, relax.t1_us / 40.0);
    const double raw_steps = std::ceil(t / h_max);
    if (!(raw_steps < static_cast<double>(kMaxIntegratorSteps))) {
        std::ostringstream msg;
        msg << "bloch_evolve: step budget exceeded (" << raw_steps
            << " steps for duration " << t << " us)";
        throw NumericsError(msg.str());
    }
    const auto steps = static_cast<std::uint64_t>(raw_steps);
    const double h = t / static_cast<double>(steps);

    // Augmented state: (m, integral of m_z).
    using State = Eigen::Vector4d;
    auto deriv = [&](const State& y) {
        State d;
        d(0) = y(1) * wz - y(0) * inv_t2;
        d(1) = y(2) * wx - y(0) * wz - y(1) * inv_t2;
        d(2) = -y(1) * wx - (y(2) - relax.equilibrium_mz) * inv_t1;
        d(3) = y(2);
        return d;
    };

    State y;
    y << m.x(), m.y(), m.z(), 0.0;
    for (std::uint64_t i = 0; i < steps; ++i) {
        const State k1 = deriv(y);
        const State k2 = deriv(y + 0.5 * h * k1);
        const State k3 = deriv(y + 0.5 * h * k2);
        const State k4 = deriv(y + h * k3);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return {Vector3d(y(0), y(1), y(2)), y(3)};
}

SegmentResult evolve_segment(const Vector3d& m, double wx, double wz, double t_us,
                             const RelaxationParams& relax) {
    if (t_us <= 0.0) return {m, 0.0};
    if (wx == 0.0) return evolve_free(m, wz, t_us, relax);
    if (!std::isfinite(relax.t1_us) && !std::isfinite(relax.t2_us)) {
        return evolve_rotation(m, wx, wz, t_us);
    }
    if (wz == 0.0) return evolve_resonant(m, wx, t_us, relax);
    return evolve_rk4(m, wx, wz, t_us, relax);
}

Vector3d flip_about_x(const Vector3d& m) { return {m.x(), -m.y(), -m.z()}; }

}  // namespace

BlochState bloch_evolve(const BlochState& state, const TimelineSegment& segment,
                        const DriveParams& drive, const RelaxationParams& relax,
                        double detuning_mhz) {
    validate_relaxation(relax);
    if (segment.duration_ns < 0.0) {
        throw DomainError("bloch_evolve: segment duration must be >= 0");
    }
    if (segment.drive_on && drive.instantaneous_pi) {
        return {flip_about_x(state.m), state.time_ns + segment.duration_ns};
    }
    const double wx = segment.drive_on ? mhz_to_rad_per_us(drive.rabi_mhz) : 0.0;
    const double wz = mhz_to_rad_per_us(detuning_mhz - drive.frequency_offset_mhz);
    const auto result =
        evolve_segment(state.m, wx, wz, ns_to_us(segment.duration_ns), relax);
    return {result.m, state.time_ns + segment.duration_ns};
}

double nv_phase(const SpinConfiguration& config, const DeerTimeline& timeline,
                const DriveParams& drive, const RelaxationParams& relax,
                std::span<const double> initial_mz) {
    validate_relaxation(relax);
    if (initial_mz.size() != config.targets.size()) {
        throw DomainError("nv_phase: one initial m_z required per target");
    }
    double phase = 0.0;
    for (std::size_t k = 0; k < config.targets.size(); ++k) {
        const double wz = mhz_to_rad_per_us(config.targets[k].detuning_mhz -
                                            drive.frequency_offset_mhz);
        const double wx = mhz_to_rad_per_us(drive.rabi_mhz);
        Vector3d m(0.0, 0.0, initial_mz[k]);
        // Accumulate Int m_z dt per echo half; static spins then cancel
        // bit-exactly because both halves run the same segment arithmetic.
        double first_half_us = 0.0;
        double second_half_us = 0.0;
        bool after_pi = false;
        for (const auto& segment : timeline.segments) {
            if (segment.nv_action == NvAction::pi_pulse) {
                after_pi = true;
                continue;
            }
            if (segment.drive_on && drive.instantaneous_pi) {
                m = flip_about_x(m);
                continue;
            }
            if (segment.duration_ns <= 0.0) continue;
            const auto result = evolve_segment(m, segment.drive_on ? wx : 0.0, wz,
                                               ns_to_us(segment.duration_ns), relax);
            (after_pi ? second_half_us : first_half_us) += result.mz_integral_us;
            m = result.m;
        }
        phase += mhz_to_rad_per_us(config.nv_couplings_mhz[k]) * 0.5 *
                 (first_half_us - second_half_us);
    }
    return phase;
}

std::vector<double> draw_initial_mz(int count, double polarization, std::uint64_t seed) {
    if (polarization < -1.0 || polarization > 1.0) {
        throw DomainError("draw_initial_mz: polarization outside [-1, 1]");
    }
    Rng rng(seed);
    std::vector<double> signs(count);
    const double p_up = 0.5 * (1.0 + polarization);
    for (auto& s : signs) s = rng.uniform01() < p_up ? 1.0 : -1.0;
    return signs;
}

double bloch_realization_phase(const SamplingParams& params, const NvSite& nv,
                               const DeerTimeline& timeline, const DriveParams& drive,
                               const RelaxationParams& relax, std::uint64_t realization_seed,
                               double initial_polarization) {
    const SpinConfiguration config = sample_configuration(params, nv, realization_seed);
    const auto signs = draw_initial_mz(config.size(), initial_polarization,
                                       child_seed(realization_seed, 1));
    return nv_phase(config, timeline, drive, relax, signs);
}

MonteCarloSignal deer_signal_bloch(const SamplingParams& params, const NvSite& nv,
                                   const DeerTimeline& timeline, const DriveParams& drive,
                                   const RelaxationParams& relax, int n_realizations,
                                   std::uint64_t seed, const BlochEngineOptions& options) {
    if (n_realizations < 1) {
        throw DomainError("deer_signal_bloch: n_realizations must be >= 1");
    }
    std::vector<double> values(n_realizations);
    for (int i = 0; i < n_realizations; ++i) {
        const double phi =
            bloch_realization_phase(params, nv, timeline, drive, relax,
                                    child_seed(seed, static_cast<std::uint64_t>(i)),
                                    options.initial_polarization);
        values[i] = options.averaging == BlochAveraging::cosine ? std::cos(phi) : phi * phi;
    }
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n_realizations;
    double variance = 0.0;
    for (double v : values) variance += (v - mean) * (v - mean);
    const double sem = n_realizations > 1
                           ? std::sqrt(variance / (static_cast<double>(n_realizations) *
                                                   (n_realizations - 1)))
                           : 0.0;
    if (options.averaging == BlochAveraging::cosine) {
        return {mean, sem, n_realizations};
    }
    const double signal = std::exp(-0.5 * mean);
    return {signal, 0.5 * signal * sem, n_realizations};
}

}  // namespace deer
