#pragma once

#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace deer {

/// Radical drive window parameters. The drive is applied once per echo half,
/// starting offset_after_nv_pulse_ns after the NV pulse that opens the half.
struct DriveParams {
    double rabi_mhz = 10.0;
    /// Drive frequency minus the nominal resonance (MHz); a spin with static
    /// detuning d sees an effective offset d - frequency_offset in the frame
    /// rotating at the drive frequency.
    double frequency_offset_mhz = 0.0;
    double duration_ns = 0.0;  // T_s
    double offset_after_nv_pulse_ns = 0.0;
    /// Model the drive window as an ideal instantaneous pi flip of the
    /// targets at the window start instead of a finite-Rabi rotation.
    bool instantaneous_pi = false;
};

enum class NvAction { none, half_pulse_x, half_pulse_phase, pi_pulse };

struct TimelineSegment {
    double duration_ns = 0.0;
    NvAction nv_action = NvAction::none;
    bool drive_on = false;
};

/// Hahn-echo timeline: pi/2 at t=0, pi at tau/2, pi/2 (readout phase) at tau,
/// with one radical drive window inside each half. NV pulses are ideal
/// zero-duration rotations, so segment durations sum to tau exactly.
struct DeerTimeline {
    std::vector<TimelineSegment> segments;
    double tau_total_ns = 0.0;
    double readout_phase_deg = 0.0;

    nlohmann::json to_json() const;
};

/// Builds and validates the timeline. Throws DomainError when
/// duration + offset exceeds tau/2 (a window may not straddle the pi pulse).
DeerTimeline build_deer_timeline(double tau_ns, const DriveParams& drive,
                                 double readout_phase_deg = 0.0);

enum class SweepKind { ts_sweep, frequency_sweep };

/// One DriveParams per sweep value; duration_ns for ts_sweep, either absolute
/// or offset handling for frequency sweeps is the caller's business -- values
/// here are frequency offsets from the nominal resonance. All values are
/// validated against the fixed tau; offenders are listed in the error.
std::vector<DriveParams> sweep_axis(SweepKind kind, const std::vector<double>& values,
                                    const DriveParams& base, double tau_ns);

}  // namespace deer
