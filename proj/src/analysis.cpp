#include "deer/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "deer/errors.hpp"

namespace deer {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double median(std::vector<double> v) {
    if (v.empty()) throw DomainError("median of empty range");
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt on residuals r(p) = model(p) - y with analytic Jacobian.
// Convergence: max relative parameter change < 1e-8, capped at 200 iterations.
// ---------------------------------------------------------------------------

struct LmProblem {
    // Fills residuals and, when requested, the Jacobian d r_i / d p_j.
    std::function<void(const VectorXd& p, VectorXd& r, MatrixXd* jacobian)> eval;
    int residual_count = 0;
    int parameter_count = 0;
};

struct LmOutcome {
    VectorXd parameters;
    MatrixXd covariance;
    double residual_norm = 0.0;
    bool converged = false;
    int iterations = 0;
};

LmOutcome levenberg_marquardt(const LmProblem& problem, VectorXd p) {
    constexpr int kMaxIterations = 200;
    constexpr double kRelTol = 1e-8;

    VectorXd residuals(problem.residual_count);
    MatrixXd jacobian(problem.residual_count, problem.parameter_count);
    problem.eval(p, residuals, &jacobian);
    double cost = residuals.squaredNorm();

    double lambda = 1e-3;
    LmOutcome outcome;
    outcome.converged = false;

    int iteration = 0;
    for (; iteration < kMaxIterations; ++iteration) {
        const MatrixXd jtj = jacobian.transpose() * jacobian;
        const VectorXd gradient = jacobian.transpose() * residuals;

        bool stepped = false;
        for (int attempt = 0; attempt < 25; ++attempt) {
            MatrixXd damped = jtj;
            for (int i = 0; i < damped.rows(); ++i) {
                damped(i, i) += lambda * std::max(jtj(i, i), 1e-12);
            }
            const VectorXd step = damped.ldlt().solve(-gradient);
            const VectorXd candidate = p + step;
            VectorXd trial_residuals(problem.residual_count);
            problem.eval(candidate, trial_residuals, nullptr);
            const double trial_cost = trial_residuals.squaredNorm();
            if (std::isfinite(trial_cost) && trial_cost <= cost) {
                double rel_change = 0.0;
                for (int i = 0; i < p.size(); ++i) {
                    rel_change = std::max(
                        rel_change, std::abs(step(i)) / std::max(std::abs(p(i)), 1e-12));
                }
                p = candidate;
                cost = trial_cost;
                lambda = std::max(lambda / 3.0, 1e-14);
                stepped = true;
                if (rel_change < kRelTol) {
                    outcome.converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        problem.eval(p, residuals, &jacobian);
        cost = residuals.squaredNorm();
        if (outcome.converged) break;
        if (!stepped) {
            // Damping blew up without finding a downhill step: treat the
            // current point as converged-by-stagnation.
            outcome.converged = true;
            break;
        }
    }

    outcome.parameters = p;
    outcome.residual_norm = std::sqrt(cost);
    outcome.iterations = iteration + 1;

    const int dof = problem.residual_count - problem.parameter_count;
    const double variance = dof > 0 ? cost / dof : 0.0;
    const MatrixXd jtj = jacobian.transpose() * jacobian;
    // Pseudo-inverse tolerates the singular Jacobians of degenerate fits
    // (flat curves, equal time constants).
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> decomposition(jtj);
    outcome.covariance = variance * decomposition.pseudoInverse();
    return outcome;
}

}  // namespace

namespace detail {

double lorentzian_value(const std::array<double, 4>& p, double x) {
    const double u = 2.0 * (x - p[0]) / p[1];
    return p[3] - p[2] / (1.0 + u * u);
}

std::array<double, 4> lorentzian_gradient(const std::array<double, 4>& p, double x) {
    const double u = 2.0 * (x - p[0]) / p[1];
    const double denom = 1.0 + u * u;
    const double d2 = denom * denom;
    return {-4.0 * p[2] * u / (p[1] * d2), -2.0 * p[2] * u * u / (p[1] * d2), -1.0 / denom,
            1.0};
}

double biexponential_value(const std::array<double, 5>& p, double t) {
    const double ta = std::exp(p[3]);
    const double tb = ta * (1.0 + p[4] * p[4]);
    return p[0] * std::exp(-t / ta) + p[1] * std::exp(-t / tb) + p[2];
}

std::array<double, 5> biexponential_gradient(const std::array<double, 5>& p, double t) {
    const double ta = std::exp(p[3]);
    const double tb = ta * (1.0 + p[4] * p[4]);
    const double ea = std::exp(-t / ta);
    const double eb = std::exp(-t / tb);
    // dTa/dq = Ta and dTb/dq = Tb, dTb/dr = 2 r e^q.
    return {ea, eb, 1.0, p[0] * ea * t / ta + p[1] * eb * t / tb,
            p[1] * eb * (t / (tb * tb)) * 2.0 * p[4] * ta};
}

}  // namespace detail

DensityEstimate estimate_density(double min_signal, double mean_depth_nm, double tau_ns,
                                 double min_signal_sem, const PhysicsConstants& c) {
    if (mean_depth_nm <= 0.0 || tau_ns <= 0.0) {
        throw DomainError("estimate_density: depth and tau must be > 0");
    }
    if (min_signal <= 0.0) {
        throw DomainError("estimate_density: min_signal must be > 0 (log divergence)");
    }
    DensityEstimate estimate;
    estimate.mean_depth_nm = mean_depth_nm;
    estimate.tau_ns = tau_ns;
    estimate.min_signal = min_signal;
    if (min_signal > 1.0) {
        // Noise above the no-interaction baseline: clamp and flag rather than
        // report a negative density.
        estimate.min_signal = 1.0;
        estimate.status = DensityEstimate::Status::noise_floor;
    }
    const double prefactor = c.dipolar_prefactor_rad_per_us_nm3;
    const double tau_us = ns_to_us(tau_ns);
    const double inverse_scale = 16.0 * std::pow(mean_depth_nm, 4) /
                                 (3.0 * std::numbers::pi * prefactor * prefactor * tau_us *
                                  tau_us);
    estimate.sigma_hat_per_nm2 = -std::log(estimate.min_signal) * inverse_scale;
    // First-order propagation: d sigma / d S = -inverse_scale / S.
    estimate.sigma_hat_sem = min_signal_sem * inverse_scale / estimate.min_signal;
    estimate.above_dark_threshold = estimate.sigma_hat_per_nm2 > kDarkSpinThresholdPerNm2;
    return estimate;
}

std::vector<double> running_mean(std::span<const double> values, int window) {
    const int n = static_cast<int>(values.size());
    const int half = window / 2;
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) {
        const int reach = std::min({half, i, n - 1 - i});
        double sum = 0.0;
        for (int j = i - reach; j <= i + reach; ++j) sum += values[j];
        out[i] = sum / (2 * reach + 1);
    }
    return out;
}

SmoothedMin extract_min(const DeerCurve& curve, int window) {
    const int n = static_cast<int>(curve.points.size());
    if (window < 1 || window % 2 == 0 || window > n) {
        throw DomainError("extract_min: window must be odd, >= 1 and <= curve length");
    }
    std::vector<double> means(n), variances(n);
    for (int i = 0; i < n; ++i) means[i] = curve.points[i].signal_mean;
    const std::vector<double> smoothed = running_mean(means, window);
    for (int i = 0; i < n; ++i) {
        const int half = window / 2;
        const int reach = std::min({half, i, n - 1 - i});
        double var = 0.0;
        for (int j = i - reach; j <= i + reach; ++j) {
            var += curve.points[j].signal_sem * curve.points[j].signal_sem;
        }
        const int count = 2 * reach + 1;
        variances[i] = var / (count * count);
    }
    int best = 0;
    for (int i = 1; i < n; ++i) {
        if (smoothed[i] < smoothed[best]) best = i;
    }
    return {smoothed[best], std::sqrt(variances[best]), curve.points[best].x};
}

double FitResult::parameter(const std::string& name) const {
    for (std::size_t i = 0; i < parameter_names.size(); ++i) {
        if (parameter_names[i] == name) return parameters[i];
    }
    throw DomainError("FitResult: unknown parameter " + name);
}

nlohmann::json FitResult::to_json() const {
    nlohmann::json j;
    auto params = nlohmann::json::object();
    for (std::size_t i = 0; i < parameter_names.size(); ++i) {
        params[parameter_names[i]] = {{"value", parameters[i]},
                                      {"uncertainty", uncertainties[i]}};
    }
    j["parameters"] = std::move(params);
    j["residual_norm"] = residual_norm;
    j["converged"] = converged;
    j["iterations"] = iterations;
    return j;
}

FitResult fit_lorentzian(const DeerCurve& curve) {
    const int n = static_cast<int>(curve.points.size());
    if (n < 5) throw DomainError("fit_lorentzian: need at least 5 points");
    if (curve.axis != AxisKind::frequency_mhz) {
        throw DomainError("fit_lorentzian: expects a frequency-axis curve");
    }

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return curve.points[a].x < curve.points[b].x;
    });
    VectorXd x(n), y(n);
    for (int i = 0; i < n; ++i) {
        x(i) = curve.points[order[i]].x;
        y(i) = curve.points[order[i]].signal_mean;
    }

    // Initialization: dip center at the smoothed argmin (a 5-point running
    // mean keeps noise from picking a stray point), baseline from the outer
    // quartiles, width at half the span.
    std::vector<double> y_raw(n);
    for (int i = 0; i < n; ++i) y_raw[i] = y(i);
    const std::vector<double> y_smooth = running_mean(y_raw, 5);
    int argmin = 0;
    for (int i = 1; i < n; ++i)
        if (y_smooth[i] < y_smooth[argmin]) argmin = i;
    std::vector<double> outer;
    for (int i = 0; i < n; ++i) {
        if (i <= n / 4 || i >= n - 1 - n / 4) outer.push_back(y(i));
    }
    const double baseline0 = median(outer);
    const double amplitude0 = std::max(baseline0 - y(argmin), 1e-12);
    const double fwhm0 = 0.5 * (x(n - 1) - x(0));

    VectorXd p(4);
    p << x(argmin), fwhm0, amplitude0, baseline0;

    LmProblem problem;
    problem.residual_count = n;
    problem.parameter_count = 4;
    problem.eval = [&x, &y, n](const VectorXd& q, VectorXd& r, MatrixXd* jac) {
        const std::array<double, 4> params{q(0), q(1), q(2), q(3)};
        for (int i = 0; i < n; ++i) {
            r(i) = detail::lorentzian_value(params, x(i)) - y(i);
            if (jac) {
                const auto gradient = detail::lorentzian_gradient(params, x(i));
                for (int j = 0; j < 4; ++j) (*jac)(i, j) = gradient[j];
            }
        }
    };

    const LmOutcome outcome = levenberg_marquardt(problem, p);
    FitResult result;
    result.parameter_names = {"center_mhz", "fwhm_mhz", "amplitude", "baseline"};
    result.parameters = {outcome.parameters(0), std::abs(outcome.parameters(1)),
                         outcome.parameters(2), outcome.parameters(3)};
    result.uncertainties.resize(4);
    for (int i = 0; i < 4; ++i) {
        result.uncertainties[i] = std::sqrt(std::max(outcome.covariance(i, i), 0.0));
    }
    result.residual_norm = outcome.residual_norm;
    result.converged = outcome.converged;
    result.iterations = outcome.iterations;
    return result;
}

FitResult fit_biexponential(std::span<const double> times, std::span<const double> values) {
    const int n = static_cast<int>(times.size());
    if (n < 7 || values.size() != times.size()) {
        throw DomainError("fit_biexponential: need >= 7 points with matching arrays");
    }
    for (int i = 1; i < n; ++i) {
        if (times[i] <= times[i - 1]) {
            throw DomainError("fit_biexponential: times must be strictly increasing");
        }
    }

    // Two-segment log-linear peel-off: slow component from the late half,
    // fast component from the early remainder.
    double y_min = values[0];
    for (double v : values) y_min = std::min(y_min, v);
    const double offset0 = y_min - 1e-3 * std::abs(y_min) - 1e-12;
    auto log_linear = [&](int begin, int end, std::span<const double> residual) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int count = 0;
        for (int i = begin; i < end; ++i) {
            const double z = residual[i];
            if (z <= 0.0) continue;
            const double ly = std::log(z);
            sx += times[i];
            sy += ly;
            sxx += times[i] * times[i];
            sxy += times[i] * ly;
            ++count;
        }
        if (count < 2) return std::pair<double, double>(0.0, -1.0);
        const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
        const double intercept = (sy - slope * sx) / count;
        return std::pair<double, double>(slope, intercept);
    };

    std::vector<double> peeled(n);
    for (int i = 0; i < n; ++i) peeled[i] = values[i] - offset0;
    const auto [slope_slow, intercept_slow] = log_linear(n / 2, n, peeled);
    double tb0 = slope_slow < 0.0 ? -1.0 / slope_slow : times[n - 1];
    double a2_0 = intercept_slow > -1.0 ? std::exp(intercept_slow) : 0.5 * peeled[0];
    for (int i = 0; i < n; ++i) peeled[i] -= a2_0 * std::exp(-times[i] / tb0);
    const auto [slope_fast, intercept_fast] = log_linear(0, n / 2, peeled);
    double ta0 = slope_fast < 0.0 ? -1.0 / slope_fast : 0.3 * tb0;
    double a1_0 = intercept_fast > -1.0 ? std::exp(intercept_fast)
                                        : std::max(values[0] - offset0 - a2_0, 1e-3);
    if (ta0 > tb0) {
        std::swap(ta0, tb0);
        std::swap(a1_0, a2_0);
    }
    ta0 = std::max(ta0, 1e-6 * times[n - 1]);

    // Internal parameterization Ta = e^q, Tb = e^q (1 + r^2) keeps Ta <= Tb.
    VectorXd p(5);
    p << a1_0, a2_0, offset0, std::log(ta0), std::sqrt(std::max(tb0 / ta0 - 1.0, 1e-6));

    LmProblem problem;
    problem.residual_count = n;
    problem.parameter_count = 5;
    problem.eval = [&times, &values, n](const VectorXd& q, VectorXd& r, MatrixXd* jac) {
        const std::array<double, 5> params{q(0), q(1), q(2), q(3), q(4)};
        for (int i = 0; i < n; ++i) {
            r(i) = detail::biexponential_value(params, times[i]) - values[i];
            if (jac) {
                const auto gradient = detail::biexponential_gradient(params, times[i]);
                for (int j = 0; j < 5; ++j) (*jac)(i, j) = gradient[j];
            }
        }
    };

    const LmOutcome outcome = levenberg_marquardt(problem, p);
    const double ta = std::exp(outcome.parameters(3));
    const double r_param = outcome.parameters(4);
    const double tb = ta * (1.0 + r_param * r_param);

    // Delta-method transform of the covariance from (a1, a2, offset, q, r)
    // to the reported (a1, Ta, a2, Tb, offset).
    MatrixXd transform = MatrixXd::Zero(5, 5);
    transform(0, 0) = 1.0;                      // a1
    transform(1, 3) = ta;                       // dTa/dq
    transform(2, 1) = 1.0;                      // a2
    transform(3, 3) = tb;                       // dTb/dq
    transform(3, 4) = 2.0 * r_param * ta;       // dTb/dr
    transform(4, 2) = 1.0;                      // offset
    const MatrixXd covariance = transform * outcome.covariance * transform.transpose();

    FitResult result;
    result.parameter_names = {"amplitude_fast", "t_fast", "amplitude_slow", "t_slow",
                              "offset"};
    result.parameters = {outcome.parameters(0), ta, outcome.parameters(1), tb,
                         outcome.parameters(2)};
    result.uncertainties.resize(5);
    for (int i = 0; i < 5; ++i) {
        result.uncertainties[i] = std::sqrt(std::max(covariance(i, i), 0.0));
    }
    result.residual_norm = outcome.residual_norm;
    result.converged = outcome.converged;
    result.iterations = outcome.iterations;
    return result;
}

DeerCurve pair_average_curve(const DeerCurve& curve) {
    DeerCurve out;
    out.axis = curve.axis;
    for (std::size_t i = 0; i + 1 < curve.points.size(); i += 2) {
        const auto& a = curve.points[i];
        const auto& b = curve.points[i + 1];
        CurvePoint merged;
        merged.x = 0.5 * (a.x + b.x);
        merged.signal_mean = 0.5 * (a.signal_mean + b.signal_mean);
        merged.signal_sem =
            0.5 * std::sqrt(a.signal_sem * a.signal_sem + b.signal_sem * b.signal_sem);
        merged.n = a.n + b.n;
        out.points.push_back(merged);
    }
    return out;
}

SplitCompareReport split_compare(const DeerCurve& first, const DeerCurve& second,
                                 double mean_depth_nm, double tau_ns, bool pair_average,
                                 int window) {
    DeerCurve a = pair_average ? pair_average_curve(first) : first;
    DeerCurve b = pair_average ? pair_average_curve(second) : second;
    if (a.points.size() != b.points.size()) {
        throw DomainError("split_compare: curves must share their sweep grid");
    }
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        const double scale = std::max({std::abs(a.points[i].x), std::abs(b.points[i].x), 1.0});
        if (std::abs(a.points[i].x - b.points[i].x) > 1e-9 * scale) {
            throw DomainError("split_compare: curves must share their sweep grid");
        }
    }
    window = std::min<int>(window, static_cast<int>(a.points.size()));
    if (window % 2 == 0) --window;

    const SmoothedMin min_a = extract_min(a, window);
    const SmoothedMin min_b = extract_min(b, window);
    SplitCompareReport report{
        estimate_density(min_a.min_signal, mean_depth_nm, tau_ns, min_a.min_signal_sem),
        estimate_density(min_b.min_signal, mean_depth_nm, tau_ns, min_b.min_signal_sem),
        0.0, 0.0};
    report.difference = report.second.sigma_hat_per_nm2 - report.first.sigma_hat_per_nm2;
    report.difference_sem = std::hypot(report.first.sigma_hat_sem, report.second.sigma_hat_sem);
    return report;
}

int significant_sign_changes(std::span<const double> detrended, std::span<const double> sems,
                             double amplitude_scale, double k_sem,
                             double amplitude_fraction) {
    int changes = 0;
    int previous_sign = 0;
    for (std::size_t i = 0; i < detrended.size(); ++i) {
        const double threshold =
            std::max(k_sem * (i < sems.size() ? sems[i] : 0.0),
                     amplitude_fraction * amplitude_scale);
        if (std::abs(detrended[i]) <= threshold) continue;
        const int sign = detrended[i] > 0.0 ? 1 : -1;
        if (previous_sign != 0 && sign != previous_sign) ++changes;
        previous_sign = sign;
    }
    return changes;
}

}  // namespace deer
