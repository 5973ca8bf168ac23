#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "deer/constants.hpp"

namespace deer {

enum class AxisKind { ts_ns, frequency_mhz };

struct CurvePoint {
    double x = 0.0;
    double signal_mean = 0.0;
    double signal_sem = 0.0;
    int n = 1;
};

struct DeerCurve {
    AxisKind axis = AxisKind::ts_ns;
    std::vector<CurvePoint> points;
};

/// Dark-spin areal-density threshold (per nm^2) separating dye-like coverage
/// from clean-surface background.
inline constexpr double kDarkSpinThresholdPerNm2 = 0.05;

struct DensityEstimate {
    double sigma_hat_per_nm2 = 0.0;
    double sigma_hat_sem = 0.0;
    double min_signal = 1.0;
    double mean_depth_nm = 12.0;
    double tau_ns = 900.0;
    bool above_dark_threshold = false;
    /// noise_floor: the supplied minimum was above 1 (noise) and was clamped.
    enum class Status { ok, noise_floor } status = Status::ok;
};

/// Inverts the closed-form signal floor into an areal density:
///   sigma_hat = -ln(min_signal) * 16 d^4 / (3 pi C^2 tau^2)
/// with C the angular dipolar prefactor. min_signal <= 0 throws; > 1 clamps
/// to sigma_hat = 0 with a noise_floor status. An optional SEM on the minimum
/// propagates to first order.
DensityEstimate estimate_density(double min_signal, double mean_depth_nm, double tau_ns,
                                 double min_signal_sem = 0.0,
                                 const PhysicsConstants& c = PhysicsConstants::codata2018());

struct SmoothedMin {
    double min_signal = 0.0;
    double min_signal_sem = 0.0;
    double x_at_min = 0.0;
};

/// Centered running mean over an odd window (edge windows shrink
/// symmetrically), then the smoothed minimum. Ties resolve to the smallest x.
SmoothedMin extract_min(const DeerCurve& curve, int window);

struct FitResult {
    std::vector<std::string> parameter_names;
    std::vector<double> parameters;
    std::vector<double> uncertainties;  // 1 sigma
    double residual_norm = 0.0;
    bool converged = false;
    int iterations = 0;

    double parameter(const std::string& name) const;
    nlohmann::json to_json() const;
};

/// Least-squares fit of baseline - amplitude / (1 + (2(x-center)/fwhm)^2).
/// Initialization: center at the curve minimum, baseline from the median of
/// the outer quartiles, fwhm at half the span. Converges on relative
/// parameter change < 1e-8 or 200 iterations; non-convergence flags the
/// result instead of throwing.
FitResult fit_lorentzian(const DeerCurve& curve);

/// Least-squares fit of A1 exp(-t/Ta) + A2 exp(-t/Tb) + offset with Ta <= Tb
/// enforced by the internal parameterization Ta = e^q, Tb = e^q (1 + r^2).
/// Initialized by peeling the slow component off a log-linear fit of the
/// late-time half, then fitting the early-time remainder.
FitResult fit_biexponential(std::span<const double> times, std::span<const double> values);

struct SplitCompareReport {
    DensityEstimate first;
    DensityEstimate second;
    double difference;      // second - first
    double difference_sem;  // quadrature-combined
};

/// Density estimates for two measurement periods of the same sweep, with
/// optional neighbor-pair averaging (points (0,1), (2,3), ... merged) applied
/// to both curves first. Curves must share their sweep grid.
SplitCompareReport split_compare(const DeerCurve& first, const DeerCurve& second,
                                 double mean_depth_nm, double tau_ns,
                                 bool pair_average = false, int window = 5);

/// Neighbor-pair averaging used by split_compare, exposed for reuse.
DeerCurve pair_average_curve(const DeerCurve& curve);

/// Sign changes of a detrended curve, counting only points whose magnitude
/// clears both k_sem * sem and amplitude_fraction * (max - min) of the raw
/// curve. Used to classify oscillatory vs overdamped sweep shapes.
int significant_sign_changes(std::span<const double> detrended, std::span<const double> sems,
                             double amplitude_scale, double k_sem = 2.0,
                             double amplitude_fraction = 0.05);

/// Running mean used for detrending (same shrinking-edge policy as
/// extract_min).
std::vector<double> running_mean(std::span<const double> values, int window);

namespace detail {

/// Lorentzian dip model at one abscissa; params = (center, fwhm, amplitude,
/// baseline). Exposed so the analytic gradients can be checked against
/// finite differences.
double lorentzian_value(const std::array<double, 4>& p, double x);
std::array<double, 4> lorentzian_gradient(const std::array<double, 4>& p, double x);

/// Bi-exponential model in its internal parameterization
/// (a1, a2, offset, q, r) with Ta = e^q and Tb = e^q (1 + r^2).
double biexponential_value(const std::array<double, 5>& p, double t);
std::array<double, 5> biexponential_gradient(const std::array<double, 5>& p, double t);

}  // namespace detail

}  // namespace deer
