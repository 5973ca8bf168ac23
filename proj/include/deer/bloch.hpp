#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "deer/geometry.hpp"
#include "deer/sequence.hpp"

namespace deer {

struct RelaxationParams {
    double t1_us = std::numeric_limits<double>::infinity();
    double t2_us = std::numeric_limits<double>::infinity();
    /// Longitudinal equilibrium. Defaults to 0: thermal electron polarization
    /// at ~200 G is ~1e-3, i.e. an unpolarized layer.
    double equilibrium_mz = 0.0;
};

struct BlochState {
    Eigen::Vector3d m{0.0, 0.0, 1.0};
    double time_ns = 0.0;
};

/// Evolves one magnetization vector through one timeline segment under
///   dm/dt = m x w_eff - (m_x, m_y, 0)/T2 - (0, 0, m_z - m_eq)/T1
/// with w_eff = (Omega, 0, delta) in rad/us in the rotating frame (drive-off
/// segments have Omega = 0; detuning_mhz is the spin's offset from the drive
/// frequency). Uses the exact piecewise solution where available (Omega = 0,
/// delta = 0, or no relaxation) and a fixed-step RK4 integrator otherwise
/// with step <= min(1/(20 |w_eff|), T2/20, T1/20).
BlochState bloch_evolve(const BlochState& state, const TimelineSegment& segment,
                        const DriveParams& drive, const RelaxationParams& relax,
                        double detuning_mhz = 0.0);

/// NV phase for one configuration:
///   phi = sum_k a_k(angular) * Int eta(t) m_z^k(t)/2 dt
/// with the echo kernel eta = +1 before the pi pulse and -1 after. Classical
/// m_z in [-1, 1] maps onto the spin-1/2 expectation m_z/2 so a full flip
/// dephases the NV by a*tau/2 in angular units, matching the quantum engines.
/// initial_mz supplies one starting m_z per target (+-1 for an unpolarized
/// layer).
double nv_phase(const SpinConfiguration& config, const DeerTimeline& timeline,
                const DriveParams& drive, const RelaxationParams& relax,
                std::span<const double> initial_mz);

/// Equiprobable +-1 signs (or biased by a configured polarization p, with
/// P(+1) = (1+p)/2), deterministic in the seed.
std::vector<double> draw_initial_mz(int count, double polarization, std::uint64_t seed);

enum class BlochAveraging { cosine, gaussian_phase };

struct BlochEngineOptions {
    BlochAveraging averaging = BlochAveraging::cosine;
    double initial_polarization = 0.0;
};

/// Phase of a single Monte Carlo realization: configuration from
/// child-seeded geometry sampling, initial signs from a second child stream.
double bloch_realization_phase(const SamplingParams& params, const NvSite& nv,
                               const DeerTimeline& timeline, const DriveParams& drive,
                               const RelaxationParams& relax, std::uint64_t realization_seed,
                               double initial_polarization = 0.0);

struct MonteCarloSignal {
    double mean = 1.0;
    double sem = 0.0;
    int n = 0;
};

/// Monte Carlo signal: mean of cos(phi) over realizations (or
/// exp(-<phi^2>/2) in Gaussian-phase mode) with its standard error.
MonteCarloSignal deer_signal_bloch(const SamplingParams& params, const NvSite& nv,
                                   const DeerTimeline& timeline, const DriveParams& drive,
                                   const RelaxationParams& relax, int n_realizations,
                                   std::uint64_t seed, const BlochEngineOptions& options = {});

}  // namespace deer
