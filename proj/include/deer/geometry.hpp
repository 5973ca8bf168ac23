#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "deer/constants.hpp"

#include <nlohmann/json_fwd.hpp>

namespace deer {

using Vec3 = std::array<double, 3>;

/// Shallow NV below the surface plane z = 0, sitting at (0, 0, -depth).
/// The applied field is taken along the NV axis.
struct NvSite {
    double depth_nm = 12.0;
    /// Polar angle of the NV axis relative to the surface normal (degrees).
    /// Default is the [111] axis under a (100) surface; the field is assumed
    /// aligned with it.
    double axis_polar_deg = 54.7356;
    double axis_azimuth_deg = 0.0;
};

struct TargetSpin {
    Vec3 position_nm{};   // z = 0, surface-bound
    double detuning_mhz = 0.0;  // static offset from the nominal resonance
};

enum class DetuningShape { lorentzian, gaussian };

struct SamplingParams {
    double density_per_nm2 = 0.0;
    double rmax_factor = 10.0;        // disk radius as a multiple of depth
    double min_separation_nm = 0.5;   // hard-core exclusion between targets
    double detuning_fwhm_mhz = 20.0;
    DetuningShape detuning_shape = DetuningShape::lorentzian;
    /// Cap on the sampled spin count; 0 means unlimited. When the Poisson
    /// draw exceeds the cap the weakest |a_k| targets are discarded.
    int max_targets = 12;
};

struct SpinConfiguration {
    NvSite nv{};
    std::vector<TargetSpin> targets;
    /// Secular NV-target couplings a_k (MHz, signed), one per target.
    std::vector<double> nv_couplings_mhz;
    /// Symmetric target-target couplings b_jk (MHz, signed), row-major
    /// n x n with zero diagonal.
    std::vector<double> pair_couplings_mhz;
    std::uint64_t seed = 0;
    /// Poisson count before any clamping.
    int sampled_count = 0;
    bool clamped = false;

    int size() const { return static_cast<int>(targets.size()); }
    double pair_coupling(int j, int k) const {
        return pair_couplings_mhz[static_cast<std::size_t>(j) * targets.size() + k];
    }

    nlohmann::json to_json() const;
    static SpinConfiguration from_json(const nlohmann::json& j);
};

/// Unit vector of the NV axis / field direction.
Vec3 nv_axis_unit(const NvSite& nv);

/// Secular dipolar coupling prefactor*(1-3cos^2 theta)/r^3 in MHz for a
/// separation vector against a unit field axis. Throws DomainError at r = 0.
double secular_dipolar_coupling_mhz(const Vec3& separation_nm, const Vec3& field_axis_unit,
                                    const PhysicsConstants& c = PhysicsConstants::codata2018());

/// NV-target coupling a_k (MHz) for a surface position.
double nv_target_coupling_mhz(const Vec3& target_position_nm, const NvSite& nv,
                              const PhysicsConstants& c = PhysicsConstants::codata2018());

/// Target-target coupling b_jk (MHz); symmetric under argument exchange.
double target_target_coupling_mhz(const Vec3& pos_j_nm, const Vec3& pos_k_nm,
                                  const Vec3& field_axis_unit,
                                  const PhysicsConstants& c = PhysicsConstants::codata2018());

/// Draws a full surface configuration: Poisson count on the sampling disk,
/// uniform positions with hard-core rejection, per-spin detunings, and all
/// couplings. Deterministic in (params, nv, seed).
SpinConfiguration sample_configuration(const SamplingParams& params, const NvSite& nv,
                                       std::uint64_t seed);

/// Poisson count only, identical to the count sample_configuration would
/// draw for the same inputs.
std::uint64_t sample_target_count(const SamplingParams& params, const NvSite& nv,
                                  std::uint64_t seed);

}  // namespace deer
