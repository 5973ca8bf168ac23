#include "deer/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "deer/analytic.hpp"
#include "deer/errors.hpp"
#include "deer/parallel.hpp"
#include "deer/rng.hpp"

namespace deer {

namespace {

using nlohmann::json;

constexpr double kInfinity = std::numeric_limits<double>::infinity();

std::string format_g17(double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.17g", v);
    return buffer;
}

double json_time_or_infinity(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return kInfinity;
    return j[key].get<double>();
}

json time_to_json(double t) {
    if (std::isinf(t)) return nullptr;
    return t;
}

void write_text_atomically(const std::filesystem::path& path, const std::string& text) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp + " for writing");
        out << text;
    }
    std::filesystem::rename(tmp, path);
}

struct SweepPoint {
    double x = 0.0;
    DriveParams drive;
    DeerTimeline timeline;
};

std::vector<SweepPoint> build_sweep(const ExperimentConfig& config) {
    std::vector<SweepPoint> points;
    points.reserve(config.sweep_values.size());
    const double resonance = config.nominal_resonance_mhz();
    for (double value : config.sweep_values) {
        SweepPoint point;
        point.x = value;
        point.drive = config.drive;
        if (config.sweep_kind == SweepKind::ts_sweep) {
            point.drive.duration_ns = value;
        } else {
            point.drive.frequency_offset_mhz = value - resonance;
        }
        point.timeline = build_deer_timeline(config.tau_ns, point.drive);
        points.push_back(std::move(point));
    }
    return points;
}

}  // namespace

std::string engine_name(EngineKind kind) {
    switch (kind) {
        case EngineKind::quantum: return "quantum";
        case EngineKind::bloch: return "bloch";
        case EngineKind::analytic: return "analytic";
    }
    return "unknown";
}

EngineKind parse_engine(const std::string& name) {
    if (name == "quantum") return EngineKind::quantum;
    if (name == "bloch") return EngineKind::bloch;
    if (name == "analytic") return EngineKind::analytic;
    throw ValidationError("unknown engine '" + name + "' (quantum|bloch|analytic)");
}

double ExperimentConfig::nominal_resonance_mhz() const {
    return larmor_frequency_mhz(field_gauss);
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ValidationError("config parse error in " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig config;
    if (j.contains("schema_version") &&
        j["schema_version"].get<int>() != kConfigSchemaVersion) {
        throw ValidationError("unsupported config schema_version");
    }
    if (j.contains("physics")) {
        const auto& p = j["physics"];
        config.field_gauss = p.value("field_gauss", config.field_gauss);
        config.nv.depth_nm = p.value("nv_depth_nm", config.nv.depth_nm);
        config.nv.axis_polar_deg = p.value("nv_axis_polar_deg", config.nv.axis_polar_deg);
        config.nv.axis_azimuth_deg =
            p.value("nv_axis_azimuth_deg", config.nv.axis_azimuth_deg);
    }
    if (j.contains("targets")) {
        const auto& t = j["targets"];
        config.targets.density_per_nm2 =
            t.value("density_per_nm2", config.targets.density_per_nm2);
        config.targets.rmax_factor = t.value("rmax_factor", config.targets.rmax_factor);
        config.targets.min_separation_nm =
            t.value("min_separation_nm", config.targets.min_separation_nm);
        config.targets.detuning_fwhm_mhz =
            t.value("detuning_fwhm_mhz", config.targets.detuning_fwhm_mhz);
        config.targets.max_targets = t.value("max_targets", config.targets.max_targets);
        const std::string shape = t.value("detuning_shape", std::string("lorentzian"));
        if (shape == "lorentzian") {
            config.targets.detuning_shape = DetuningShape::lorentzian;
        } else if (shape == "gaussian") {
            config.targets.detuning_shape = DetuningShape::gaussian;
        } else {
            throw ValidationError("unknown detuning_shape '" + shape + "'");
        }
        config.relax.t1_us = json_time_or_infinity(t, "t1_us");
        config.relax.t2_us = json_time_or_infinity(t, "t2_us");
        config.relax.equilibrium_mz = t.value("equilibrium_mz", 0.0);
    }
    if (j.contains("sequence")) {
        const auto& s = j["sequence"];
        config.tau_ns = s.value("tau_ns", config.tau_ns);
        const std::string kind = s.value("sweep_kind", std::string("ts"));
        if (kind == "ts") {
            config.sweep_kind = SweepKind::ts_sweep;
        } else if (kind == "frequency") {
            config.sweep_kind = SweepKind::frequency_sweep;
        } else {
            throw ValidationError("unknown sweep_kind '" + kind + "' (ts|frequency)");
        }
        config.sweep_values = s.value("sweep_values", config.sweep_values);
        config.drive.rabi_mhz = s.value("rabi_mhz", config.drive.rabi_mhz);
        config.drive.offset_after_nv_pulse_ns =
            s.value("drive_offset_ns", config.drive.offset_after_nv_pulse_ns);
        config.drive.duration_ns = s.value("ts_ns", config.drive.duration_ns);
    }
    if (j.contains("engine")) {
        const auto& e = j["engine"];
        config.engine = parse_engine(e.value("kind", std::string("quantum")));
        config.n_realizations = e.value("n_realizations", config.n_realizations);
        config.master_seed = e.value("master_seed", config.master_seed);
        config.gaussian_phase = e.value("gaussian_phase", config.gaussian_phase);
        config.initial_polarization =
            e.value("initial_polarization", config.initial_polarization);
        config.max_dim = e.value("max_dim", config.max_dim);
        config.workers = e.value("workers", config.workers);
        const std::string pair = e.value("pair_coupling", std::string("full_secular"));
        if (pair == "full_secular") {
            config.pair_form = PairCouplingForm::full_secular;
        } else if (pair == "ising") {
            config.pair_form = PairCouplingForm::ising;
        } else if (pair == "none") {
            config.pair_form = PairCouplingForm::none;
        } else {
            throw ValidationError("unknown pair_coupling '" + pair + "'");
        }
    }
    if (j.contains("output")) {
        const auto& o = j["output"];
        config.output_directory = o.value("directory", config.output_directory);
        config.label = o.value("label", config.label);
        config.write_raw = o.value("write_raw", config.write_raw);
    }
    return config;
}

json ExperimentConfig::to_json() const {
    json j;
    j["schema_version"] = kConfigSchemaVersion;
    j["physics"] = {{"field_gauss", field_gauss},
                    {"nv_depth_nm", nv.depth_nm},
                    {"nv_axis_polar_deg", nv.axis_polar_deg},
                    {"nv_axis_azimuth_deg", nv.axis_azimuth_deg}};
    j["targets"] = {
        {"density_per_nm2", targets.density_per_nm2},
        {"rmax_factor", targets.rmax_factor},
        {"min_separation_nm", targets.min_separation_nm},
        {"detuning_fwhm_mhz", targets.detuning_fwhm_mhz},
        {"detuning_shape",
         targets.detuning_shape == DetuningShape::lorentzian ? "lorentzian" : "gaussian"},
        {"max_targets", targets.max_targets},
        {"t1_us", time_to_json(relax.t1_us)},
        {"t2_us", time_to_json(relax.t2_us)},
        {"equilibrium_mz", relax.equilibrium_mz}};
    j["sequence"] = {
        {"tau_ns", tau_ns},
        {"sweep_kind", sweep_kind == SweepKind::ts_sweep ? "ts" : "frequency"},
        {"sweep_values", sweep_values},
        {"rabi_mhz", drive.rabi_mhz},
        {"drive_offset_ns", drive.offset_after_nv_pulse_ns},
        {"ts_ns", drive.duration_ns}};
    const char* pair_name = "full_secular";
    if (pair_form == PairCouplingForm::ising) pair_name = "ising";
    if (pair_form == PairCouplingForm::none) pair_name = "none";
    j["engine"] = {{"kind", engine_name(engine)},
                   {"n_realizations", n_realizations},
                   {"master_seed", master_seed},
                   {"pair_coupling", pair_name},
                   {"gaussian_phase", gaussian_phase},
                   {"initial_polarization", initial_polarization},
                   {"max_dim", max_dim},
                   {"workers", workers}};
    j["output"] = {{"directory", output_directory},
                   {"label", label},
                   {"write_raw", write_raw}};
    return j;
}

std::vector<std::string> ExperimentConfig::validate() const {
    std::vector<std::string> violations;
    auto require = [&](bool ok, const std::string& msg) {
        if (!ok) violations.push_back(msg);
    };
    require(field_gauss >= 0.0, "physics.field_gauss must be >= 0");
    require(nv.depth_nm > 0.0, "physics.nv_depth_nm must be > 0");
    require(nv.axis_polar_deg >= 0.0 && nv.axis_polar_deg <= 90.0,
            "physics.nv_axis_polar_deg must lie in [0, 90]");
    require(targets.density_per_nm2 >= 0.0, "targets.density_per_nm2 must be >= 0");
    require(targets.rmax_factor > 0.0, "targets.rmax_factor must be > 0");
    require(targets.min_separation_nm >= 0.0, "targets.min_separation_nm must be >= 0");
    require(targets.detuning_fwhm_mhz >= 0.0, "targets.detuning_fwhm_mhz must be >= 0");
    require(targets.max_targets >= 0, "targets.max_targets must be >= 0");
    require(relax.t1_us > 0.0, "targets.t1_us must be > 0 or null");
    require(relax.t2_us > 0.0, "targets.t2_us must be > 0 or null");
    if (std::isfinite(relax.t1_us) && std::isfinite(relax.t2_us)) {
        require(relax.t2_us <= 2.0 * relax.t1_us, "targets.t2_us must not exceed 2*t1_us");
    }
    require(tau_ns > 0.0, "sequence.tau_ns must be > 0");
    require(!sweep_values.empty(), "sequence.sweep_values must not be empty");
    require(drive.rabi_mhz >= 0.0, "sequence.rabi_mhz must be >= 0");
    require(drive.offset_after_nv_pulse_ns >= 0.0, "sequence.drive_offset_ns must be >= 0");
    if (sweep_kind == SweepKind::ts_sweep) {
        for (double v : sweep_values) {
            if (v < 0.0 || v + drive.offset_after_nv_pulse_ns > 0.5 * tau_ns) {
                std::ostringstream msg;
                msg << "sequence.sweep_values: T_s=" << v
                    << " ns does not fit an echo half of " << 0.5 * tau_ns << " ns";
                violations.push_back(msg.str());
            }
        }
    } else {
        if (drive.duration_ns + drive.offset_after_nv_pulse_ns > 0.5 * tau_ns) {
            violations.push_back("sequence.ts_ns + drive_offset_ns exceeds tau/2");
        }
        for (double v : sweep_values) {
            if (!std::isfinite(v)) violations.push_back("sequence.sweep_values: non-finite");
        }
    }
    require(n_realizations >= 1, "engine.n_realizations must be >= 1");
    require(max_dim >= 2, "engine.max_dim must be >= 2");
    require(workers >= 0, "engine.workers must be >= 0");
    require(initial_polarization >= -1.0 && initial_polarization <= 1.0,
            "engine.initial_polarization must lie in [-1, 1]");
    if (engine == EngineKind::quantum) {
        require(targets.max_targets > 0,
                "engine quantum requires targets.max_targets > 0");
        if (targets.max_targets > 0 && targets.max_targets < 31) {
            require((1LL << targets.max_targets) <= max_dim,
                    "engine quantum: 2^max_targets exceeds engine.max_dim");
        }
    }
    require(!label.empty() && label.find('/') == std::string::npos,
            "output.label must be non-empty without path separators");
    return violations;
}

namespace {

struct GridEvaluation {
    // values[point * n_realizations + realization]; NaN marks a failure.
    std::vector<double> values;
    std::vector<std::string> errors;
    std::int64_t evaluations = 0;
};

GridEvaluation evaluate_grid(const ExperimentConfig& config,
                             const std::vector<SweepPoint>& points) {
    const int n_points = static_cast<int>(points.size());
    const int n_real = config.n_realizations;
    GridEvaluation grid;
    grid.values.assign(static_cast<std::size_t>(n_points) * n_real,
                       std::numeric_limits<double>::quiet_NaN());
    std::vector<std::string> error_slots(n_real);

    SamplingParams unclamped = config.targets;
    unclamped.max_targets = 0;  // bloch and analytic engines run unclamped

    auto evaluate_realization = [&](std::int64_t r) {
        const std::uint64_t seed = child_seed(config.master_seed, r);
        try {
            switch (config.engine) {
                case EngineKind::quantum: {
                    QuantumEngineOptions options;
                    options.pair_form = config.pair_form;
                    options.max_dim = config.max_dim;
                    QuantumEvaluator evaluator(
                        sample_configuration(config.targets, config.nv, seed), options);
                    for (int p = 0; p < n_points; ++p) {
                        grid.values[static_cast<std::size_t>(p) * n_real + r] =
                            evaluator.signal(points[p].timeline, points[p].drive);
                    }
                    break;
                }
                case EngineKind::analytic: {
                    const SpinConfiguration spins =
                        sample_configuration(unclamped, config.nv, seed);
                    for (int p = 0; p < n_points; ++p) {
                        std::vector<double> factors(spins.targets.size());
                        for (std::size_t k = 0; k < spins.targets.size(); ++k) {
                            SingleSpinParams single;
                            single.coupling_mhz = spins.nv_couplings_mhz[k];
                            single.detuning_mhz = spins.targets[k].detuning_mhz -
                                                  points[p].drive.frequency_offset_mhz;
                            single.rabi_mhz = points[p].drive.rabi_mhz;
                            single.tau_ns = config.tau_ns;
                            single.ts_ns = points[p].drive.duration_ns;
                            single.offset_ns = points[p].drive.offset_after_nv_pulse_ns;
                            factors[k] = single_spin_deer(single);
                        }
                        grid.values[static_cast<std::size_t>(p) * n_real + r] =
                            ensemble_product(factors);
                    }
                    break;
                }
                case EngineKind::bloch: {
                    for (int p = 0; p < n_points; ++p) {
                        const double phi = bloch_realization_phase(
                            unclamped, config.nv, points[p].timeline, points[p].drive,
                            config.relax, seed, config.initial_polarization);
                        grid.values[static_cast<std::size_t>(p) * n_real + r] =
                            config.gaussian_phase ? phi * phi : std::cos(phi);
                    }
                    break;
                }
            }
        } catch (const std::exception& e) {
            std::ostringstream msg;
            msg << "realization " << r << " (seed " << seed << "): " << e.what();
            error_slots[r] = msg.str();
        }
    };

    const int workers = config.workers > 0 ? config.workers : hardware_worker_count();
    parallel_for_indexed(n_real, workers, evaluate_realization);

    for (const auto& e : error_slots) {
        if (!e.empty()) grid.errors.push_back(e);
    }
    for (double v : grid.values) {
        if (!std::isnan(v)) ++grid.evaluations;
    }
    return grid;
}

CurvePoint reduce_point(const ExperimentConfig& config, std::span<const double> values,
                        double x) {
    CurvePoint point;
    point.x = x;
    std::vector<double> good;
    good.reserve(values.size());
    for (double v : values) {
        if (!std::isnan(v)) good.push_back(v);
    }
    point.n = static_cast<int>(good.size());
    if (good.empty()) return point;
    double mean = 0.0;
    for (double v : good) mean += v;
    mean /= static_cast<double>(good.size());
    double variance = 0.0;
    for (double v : good) variance += (v - mean) * (v - mean);
    const double sem =
        good.size() > 1 ? std::sqrt(variance / (static_cast<double>(good.size()) *
                                                (static_cast<double>(good.size()) - 1.0)))
                        : 0.0;
    if (config.engine == EngineKind::bloch && config.gaussian_phase) {
        const double signal = std::exp(-0.5 * mean);
        point.signal_mean = signal;
        point.signal_sem = 0.5 * signal * sem;
    } else {
        point.signal_mean = mean;
        point.signal_sem = sem;
    }
    return point;
}

}  // namespace

namespace {

RunResult evaluate_with_grid(const ExperimentConfig& config, GridEvaluation* grid_out,
                             std::vector<SweepPoint>* points_out) {
    const auto violations = config.validate();
    if (!violations.empty()) {
        std::ostringstream msg;
        msg << "config validation failed:";
        for (const auto& v : violations) msg << "\n  - " << v;
        throw ValidationError(msg.str());
    }

    const auto start = std::chrono::steady_clock::now();
    const std::vector<SweepPoint> points = build_sweep(config);
    const GridEvaluation grid = evaluate_grid(config, points);

    RunResult result;
    result.curve.axis = config.sweep_kind == SweepKind::ts_sweep ? AxisKind::ts_ns
                                                                 : AxisKind::frequency_mhz;
    for (std::size_t p = 0; p < points.size(); ++p) {
        const CurvePoint point = reduce_point(
            config,
            std::span<const double>(grid.values)
                .subspan(p * config.n_realizations, config.n_realizations),
            points[p].x);
        if (point.n == 0) {
            std::ostringstream msg;
            msg << "sweep point " << points[p].x << ": no successful realizations";
            result.manifest.errors.push_back(msg.str());
            result.partial_failure = true;
            continue;
        }
        result.curve.points.push_back(point);
    }
    for (const auto& e : grid.errors) result.manifest.errors.push_back(e);
    result.partial_failure = result.partial_failure || !grid.errors.empty();

    result.manifest.realization_seeds.resize(config.n_realizations);
    for (int r = 0; r < config.n_realizations; ++r) {
        result.manifest.realization_seeds[r] =
            child_seed(config.master_seed, static_cast<std::uint64_t>(r));
    }
    result.manifest.engine_evaluations = grid.evaluations;
    result.manifest.wall_clock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    if (grid_out) *grid_out = grid;
    if (points_out) *points_out = points;
    return result;
}

}  // namespace

RunResult evaluate_experiment(const ExperimentConfig& config) {
    return evaluate_with_grid(config, nullptr, nullptr);
}

json RunManifest::resolved_config(const ExperimentConfig& config) const {
    json j;
    j["tool_version"] = tool_version;
    j["config"] = config.to_json();
    j["realization_seeds"] = realization_seeds;
    j["wall_clock_ms"] = wall_clock_ms;
    j["engine_evaluations"] = engine_evaluations;
    j["errors"] = errors;
    return j;
}

void write_curve_csv(const DeerCurve& curve, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "sweep_value,signal_mean,signal_sem,n_realizations\n";
    for (const auto& point : curve.points) {
        out << format_g17(point.x) << ',' << format_g17(point.signal_mean) << ','
            << format_g17(point.signal_sem) << ',' << point.n << '\n';
    }
    write_text_atomically(path, out.str());
}

DeerCurve read_curve_csv(const std::filesystem::path& path, AxisKind axis) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open curve CSV " + path.string());
    DeerCurve curve;
    curve.axis = axis;
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty curve CSV " + path.string());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        CurvePoint point;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%d", &point.x, &point.signal_mean,
                        &point.signal_sem, &point.n) != 4) {
            throw ValidationError("malformed CSV row '" + line + "' in " + path.string());
        }
        curve.points.push_back(point);
    }
    return curve;
}

RunResult run_experiment(const ExperimentConfig& config) {
    GridEvaluation grid;
    std::vector<SweepPoint> points;
    RunResult result = evaluate_with_grid(config, &grid, &points);

    std::filesystem::path directory = config.output_directory;
    if (directory.empty()) {
        if (const char* env = std::getenv(kOutputDirEnvVar)) directory = env;
    }
    if (directory.empty()) directory = ".";
    std::filesystem::create_directories(directory);

    result.curve_path = directory / (config.label + ".csv");
    result.manifest_path = directory / (config.label + ".manifest.json");
    write_curve_csv(result.curve, result.curve_path);
    write_text_atomically(result.manifest_path,
                          result.manifest.resolved_config(config).dump(2) + "\n");

    if (config.write_raw) {
        std::ostringstream out;
        out << "sweep_value,realization,signal\n";
        for (std::size_t p = 0; p < points.size(); ++p) {
            for (int r = 0; r < config.n_realizations; ++r) {
                const double v =
                    grid.values[p * static_cast<std::size_t>(config.n_realizations) + r];
                if (std::isnan(v)) continue;
                out << format_g17(points[p].x) << ',' << r << ',' << format_g17(v) << '\n';
            }
        }
        write_text_atomically(directory / (config.label + ".raw.csv"), out.str());
    }
    return result;
}

double EngineComparison::max_abs_difference(std::size_t i, std::size_t j) const {
    const auto& a = curves.at(i).points;
    const auto& b = curves.at(j).points;
    const std::size_t n = std::min(a.size(), b.size());
    double max_diff = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        max_diff = std::max(max_diff, std::abs(a[p].signal_mean - b[p].signal_mean));
    }
    return max_diff;
}

json EngineComparison::to_json() const {
    json j;
    auto names = json::array();
    for (auto e : engines) names.push_back(engine_name(e));
    j["engines"] = std::move(names);
    auto table = json::array();
    if (!curves.empty()) {
        const std::size_t n_points = curves.front().points.size();
        for (std::size_t p = 0; p < n_points; ++p) {
            json row;
            row["sweep_value"] = curves.front().points[p].x;
            for (std::size_t e = 0; e < curves.size(); ++e) {
                if (p < curves[e].points.size()) {
                    row[engine_name(engines[e])] = curves[e].points[p].signal_mean;
                }
            }
            table.push_back(std::move(row));
        }
    }
    j["points"] = std::move(table);
    auto deviations = json::object();
    for (std::size_t i = 0; i < curves.size(); ++i) {
        for (std::size_t k = i + 1; k < curves.size(); ++k) {
            deviations[engine_name(engines[i]) + "_vs_" + engine_name(engines[k])] =
                max_abs_difference(i, k);
        }
    }
    j["max_abs_difference"] = std::move(deviations);
    return j;
}

EngineComparison compare_engines(const ExperimentConfig& config,
                                 const std::vector<EngineKind>& engines) {
    if (engines.empty()) throw ValidationError("compare_engines: no engines listed");
    EngineComparison comparison;
    comparison.engines = engines;
    for (EngineKind kind : engines) {
        ExperimentConfig engine_config = config;
        engine_config.engine = kind;
        comparison.curves.push_back(evaluate_experiment(engine_config).curve);
    }
    return comparison;
}

}  // namespace deer
