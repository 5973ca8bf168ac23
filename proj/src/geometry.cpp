#include "deer/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "deer/errors.hpp"
#include "deer/rng.hpp"

namespace deer {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr int kPlacementAttempts = 1000;
constexpr double kDetuningTruncationFwhm = 5.0;  // truncate the line at +-5 FWHM

double distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double sample_detuning(Rng& rng, const SamplingParams& p) {
    if (p.detuning_fwhm_mhz <= 0.0) return 0.0;
    const double cap = kDetuningTruncationFwhm * p.detuning_fwhm_mhz;
    if (p.detuning_shape == DetuningShape::gaussian) {
        const double sigma = p.detuning_fwhm_mhz / (2.0 * std::sqrt(2.0 * std::log(2.0)));
        while (true) {
            const double d = sigma * rng.normal();
            if (std::abs(d) <= cap) return d;
        }
    }
    while (true) {
        const double d = 0.5 * p.detuning_fwhm_mhz * rng.cauchy();
        if (std::abs(d) <= cap) return d;
    }
}

void validate_sampling_params(const SamplingParams& p) {
    if (p.density_per_nm2 < 0.0 || p.rmax_factor <= 0.0 || p.min_separation_nm < 0.0 ||
        p.detuning_fwhm_mhz < 0.0 || p.max_targets < 0) {
        throw DomainError("sample_configuration: invalid sampling parameters");
    }
}

}  // namespace

Vec3 nv_axis_unit(const NvSite& nv) {
    const double polar = nv.axis_polar_deg * kDegToRad;
    const double azimuth = nv.axis_azimuth_deg * kDegToRad;
    return {std::sin(polar) * std::cos(azimuth), std::sin(polar) * std::sin(azimuth),
            std::cos(polar)};
}

double secular_dipolar_coupling_mhz(const Vec3& separation_nm, const Vec3& field_axis_unit,
                                    const PhysicsConstants& c) {
    const double r2 = separation_nm[0] * separation_nm[0] +
                      separation_nm[1] * separation_nm[1] +
                      separation_nm[2] * separation_nm[2];
    if (r2 == 0.0) {
        throw DomainError("secular_dipolar_coupling_mhz: coincident positions");
    }
    const double r = std::sqrt(r2);
    const double cos_theta = (separation_nm[0] * field_axis_unit[0] +
                              separation_nm[1] * field_axis_unit[1] +
                              separation_nm[2] * field_axis_unit[2]) /
                             r;
    return c.dipolar_prefactor_mhz_nm3 * (1.0 - 3.0 * cos_theta * cos_theta) / (r2 * r);
}

double nv_target_coupling_mhz(const Vec3& target_position_nm, const NvSite& nv,
                              const PhysicsConstants& c) {
    const Vec3 separation{target_position_nm[0], target_position_nm[1],
                          target_position_nm[2] + nv.depth_nm};
    return secular_dipolar_coupling_mhz(separation, nv_axis_unit(nv), c);
}

double target_target_coupling_mhz(const Vec3& pos_j_nm, const Vec3& pos_k_nm,
                                  const Vec3& field_axis_unit, const PhysicsConstants& c) {
    const Vec3 separation{pos_j_nm[0] - pos_k_nm[0], pos_j_nm[1] - pos_k_nm[1],
                          pos_j_nm[2] - pos_k_nm[2]};
    return secular_dipolar_coupling_mhz(separation, field_axis_unit, c);
}

std::uint64_t sample_target_count(const SamplingParams& params, const NvSite& nv,
                                  std::uint64_t seed) {
    validate_sampling_params(params);
    if (nv.depth_nm <= 0.0) throw DomainError("sample_target_count: depth must be > 0");
    const double rmax = params.rmax_factor * nv.depth_nm;
    const double mean = params.density_per_nm2 * std::numbers::pi * rmax * rmax;
    Rng rng(seed);
    return rng.poisson(mean);
}

SpinConfiguration sample_configuration(const SamplingParams& params, const NvSite& nv,
                                       std::uint64_t seed) {
    validate_sampling_params(params);
    if (nv.depth_nm <= 0.0) throw DomainError("sample_configuration: depth must be > 0");
    if (nv.axis_polar_deg < 0.0 || nv.axis_polar_deg > 90.0) {
        throw DomainError("sample_configuration: axis_polar_deg outside [0, 90]");
    }

    const double rmax = params.rmax_factor * nv.depth_nm;
    const double mean = params.density_per_nm2 * std::numbers::pi * rmax * rmax;

    Rng rng(seed);
    const std::uint64_t count = rng.poisson(mean);

    SpinConfiguration config;
    config.nv = nv;
    config.seed = seed;
    config.sampled_count = static_cast<int>(count);

    // Positions: uniform on the disk, sequential insertion with hard-core
    // rejection against everything already placed.
    config.targets.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
            const double radius = rmax * std::sqrt(rng.uniform01());
            const double angle = kTwoPi * rng.uniform01();
            const Vec3 pos{radius * std::cos(angle), radius * std::sin(angle), 0.0};
            bool clear = true;
            if (params.min_separation_nm > 0.0) {
                for (const auto& other : config.targets) {
                    if (distance(pos, other.position_nm) < params.min_separation_nm) {
                        clear = false;
                        break;
                    }
                }
            }
            if (clear) {
                config.targets.push_back({pos, 0.0});
                placed = true;
                break;
            }
        }
        if (!placed) {
            std::ostringstream msg;
            msg << "sample_configuration: could not place spin " << i << " of " << count
                << " after " << kPlacementAttempts << " attempts (density="
                << params.density_per_nm2 << "/nm^2, min_separation="
                << params.min_separation_nm << " nm, rmax=" << rmax << " nm)";
            throw SamplingError(msg.str());
        }
    }

    for (auto& target : config.targets) {
        target.detuning_mhz = sample_detuning(rng, params);
    }

    const Vec3 axis = nv_axis_unit(nv);
    config.nv_couplings_mhz.resize(config.targets.size());
    for (std::size_t k = 0; k < config.targets.size(); ++k) {
        config.nv_couplings_mhz[k] = nv_target_coupling_mhz(config.targets[k].position_nm, nv);
    }

    // Clamp to the strongest |a_k| couplings, keeping the original order of
    // the survivors so relabeling stays deterministic.
    if (params.max_targets > 0 &&
        config.targets.size() > static_cast<std::size_t>(params.max_targets)) {
        std::vector<std::size_t> order(config.targets.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(config.nv_couplings_mhz[a]) > std::abs(config.nv_couplings_mhz[b]);
        });
        order.resize(static_cast<std::size_t>(params.max_targets));
        std::sort(order.begin(), order.end());

        std::vector<TargetSpin> kept_targets;
        std::vector<double> kept_couplings;
        kept_targets.reserve(order.size());
        kept_couplings.reserve(order.size());
        for (std::size_t idx : order) {
            kept_targets.push_back(config.targets[idx]);
            kept_couplings.push_back(config.nv_couplings_mhz[idx]);
        }
        config.targets = std::move(kept_targets);
        config.nv_couplings_mhz = std::move(kept_couplings);
        config.clamped = true;
    }

    const std::size_t n = config.targets.size();
    config.pair_couplings_mhz.assign(n * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = j + 1; k < n; ++k) {
            const double b = target_target_coupling_mhz(config.targets[j].position_nm,
                                                        config.targets[k].position_nm, axis);
            config.pair_couplings_mhz[j * n + k] = b;
            config.pair_couplings_mhz[k * n + j] = b;
        }
    }
    return config;
}

nlohmann::json SpinConfiguration::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["sampled_count"] = sampled_count;
    j["clamped"] = clamped;
    j["nv"] = {{"depth_nm", nv.depth_nm},
               {"axis_polar_deg", nv.axis_polar_deg},
               {"axis_azimuth_deg", nv.axis_azimuth_deg}};
    auto targets_json = nlohmann::json::array();
    for (const auto& t : targets) {
        targets_json.push_back(
            {{"position_nm", t.position_nm}, {"detuning_mhz", t.detuning_mhz}});
    }
    j["targets"] = std::move(targets_json);
    j["nv_couplings_mhz"] = nv_couplings_mhz;
    j["pair_couplings_mhz"] = pair_couplings_mhz;
    return j;
}

SpinConfiguration SpinConfiguration::from_json(const nlohmann::json& j) {
    SpinConfiguration config;
    config.seed = j.at("seed").get<std::uint64_t>();
    config.sampled_count = j.at("sampled_count").get<int>();
    config.clamped = j.at("clamped").get<bool>();
    const auto& nv = j.at("nv");
    config.nv.depth_nm = nv.at("depth_nm").get<double>();
    config.nv.axis_polar_deg = nv.at("axis_polar_deg").get<double>();
    config.nv.axis_azimuth_deg = nv.at("axis_azimuth_deg").get<double>();
    for (const auto& t : j.at("targets")) {
        TargetSpin spin;
        spin.position_nm = t.at("position_nm").get<Vec3>();
        spin.detuning_mhz = t.at("detuning_mhz").get<double>();
        config.targets.push_back(spin);
    }
    config.nv_couplings_mhz = j.at("nv_couplings_mhz").get<std::vector<double>>();
    config.pair_couplings_mhz = j.at("pair_couplings_mhz").get<std::vector<double>>();
    if (config.nv_couplings_mhz.size() != config.targets.size() ||
        config.pair_couplings_mhz.size() != config.targets.size() * config.targets.size()) {
        throw ValidationError("SpinConfiguration::from_json: inconsistent array sizes");
    }
    return config;
}

}  // namespace deer
