#include "deer/sequence.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "deer/errors.hpp"

namespace deer {

namespace {

void append_half(std::vector<TimelineSegment>& segments, double half_ns,
                 const DriveParams& drive) {
    const double offset = drive.offset_after_nv_pulse_ns;
    const double window = drive.instantaneous_pi ? 0.0 : drive.duration_ns;
    if (offset > 0.0) segments.push_back({offset, NvAction::none, false});
    if (drive.duration_ns > 0.0 || drive.instantaneous_pi) {
        segments.push_back({window, NvAction::none, true});
    }
    const double rest = half_ns - offset - window;
    if (rest > 0.0) segments.push_back({rest, NvAction::none, false});
}

}  // namespace

DeerTimeline build_deer_timeline(double tau_ns, const DriveParams& drive,
                                 double readout_phase_deg) {
    if (tau_ns <= 0.0) throw DomainError("build_deer_timeline: tau must be > 0 ns");
    if (drive.rabi_mhz < 0.0 || drive.duration_ns < 0.0 ||
        drive.offset_after_nv_pulse_ns < 0.0) {
        throw DomainError("build_deer_timeline: drive parameters must be >= 0");
    }
    const double half = 0.5 * tau_ns;
    const double window = drive.instantaneous_pi ? 0.0 : drive.duration_ns;
    if (drive.duration_ns + drive.offset_after_nv_pulse_ns > half ||
        window + drive.offset_after_nv_pulse_ns > half) {
        std::ostringstream msg;
        msg << "build_deer_timeline: T_s + offset must fit one echo half: T_s="
            << drive.duration_ns << " ns, offset=" << drive.offset_after_nv_pulse_ns
            << " ns, tau/2=" << half << " ns";
        throw DomainError(msg.str());
    }

    DeerTimeline timeline;
    timeline.tau_total_ns = tau_ns;
    timeline.readout_phase_deg = readout_phase_deg;
    timeline.segments.push_back({0.0, NvAction::half_pulse_x, false});
    append_half(timeline.segments, half, drive);
    timeline.segments.push_back({0.0, NvAction::pi_pulse, false});
    append_half(timeline.segments, half, drive);
    timeline.segments.push_back({0.0, NvAction::half_pulse_phase, false});
    return timeline;
}

std::vector<DriveParams> sweep_axis(SweepKind kind, const std::vector<double>& values,
                                    const DriveParams& base, double tau_ns) {
    if (values.empty()) throw DomainError("sweep_axis: empty value list");
    std::vector<double> offenders;
    std::vector<DriveParams> result;
    result.reserve(values.size());
    for (double v : values) {
        DriveParams p = base;
        if (kind == SweepKind::ts_sweep) {
            p.duration_ns = v;
            if (v < 0.0 || v + p.offset_after_nv_pulse_ns > 0.5 * tau_ns) {
                offenders.push_back(v);
                continue;
            }
        } else {
            p.frequency_offset_mhz = v;
            if (!std::isfinite(v)) {
                offenders.push_back(v);
                continue;
            }
        }
        result.push_back(p);
    }
    if (!offenders.empty()) {
        std::ostringstream msg;
        msg << "sweep_axis: values out of range for tau=" << tau_ns << " ns:";
        for (double v : offenders) msg << ' ' << v;
        throw DomainError(msg.str());
    }
    return result;
}

nlohmann::json DeerTimeline::to_json() const {
    nlohmann::json j;
    j["tau_total_ns"] = tau_total_ns;
    j["readout_phase_deg"] = readout_phase_deg;
    auto segs = nlohmann::json::array();
    for (const auto& s : segments) {
        const char* action = "none";
        switch (s.nv_action) {
            case NvAction::half_pulse_x: action = "half_pulse_x"; break;
            case NvAction::half_pulse_phase: action = "half_pulse_phase"; break;
            case NvAction::pi_pulse: action = "pi_pulse"; break;
            case NvAction::none: break;
        }
        segs.push_back({{"duration_ns", s.duration_ns},
                        {"nv_action", action},
                        {"drive_on", s.drive_on}});
    }
    j["segments"] = std::move(segs);
    return j;
}

}  // namespace deer
