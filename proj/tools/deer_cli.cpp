#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "deer/analysis.hpp"
#include "deer/errors.hpp"
#include "deer/runner.hpp"

namespace {

using nlohmann::json;

struct CommonFlags {
    std::optional<std::uint64_t> seed;
    std::string out;
    bool quiet = false;
    int threads = 0;
};

// --seed / --out / --quiet are uniform across subcommands; analysis-only
// commands accept --seed for interface uniformity and ignore it.
void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--seed", flags.seed, "master seed override");
    cmd->add_option("--out", flags.out, "output directory (or file for fit reports)");
    cmd->add_flag("--quiet", flags.quiet, "suppress progress output");
    cmd->add_option("--threads", flags.threads,
                    "worker pool size (default: logical cores)");
}

void emit(const json& payload, const CommonFlags& flags) {
    if (!flags.out.empty()) {
        std::ofstream out(flags.out);
        if (!out) throw deer::ValidationError("cannot open " + flags.out + " for writing");
        out << payload.dump(2) << '\n';
        if (!flags.quiet) std::cout << "wrote " << flags.out << '\n';
    } else {
        std::cout << payload.dump(2) << '\n';
    }
}

deer::ExperimentConfig load_config(const std::string& path, const CommonFlags& flags) {
    auto config = deer::ExperimentConfig::from_file(path);
    if (flags.seed) config.master_seed = *flags.seed;
    if (!flags.out.empty()) config.output_directory = flags.out;
    if (flags.threads > 0) config.workers = flags.threads;
    return config;
}

json density_json(const deer::DensityEstimate& estimate) {
    return {{"sigma_hat_per_nm2", estimate.sigma_hat_per_nm2},
            {"sigma_hat_sem", estimate.sigma_hat_sem},
            {"min_signal", estimate.min_signal},
            {"mean_depth_nm", estimate.mean_depth_nm},
            {"tau_ns", estimate.tau_ns},
            {"above_dark_threshold", estimate.above_dark_threshold},
            {"status",
             estimate.status == deer::DensityEstimate::Status::ok ? "ok" : "noise_floor"}};
}

// Two-column relaxometry CSV: time,value with one header line.
void read_relaxometry_csv(const std::string& path, std::vector<double>& times,
                          std::vector<double>& values) {
    std::ifstream in(path);
    if (!in) throw deer::ValidationError("cannot open " + path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        double t = 0.0, v = 0.0;
        if (std::sscanf(line.c_str(), "%lf,%lf", &t, &v) != 2) {
            throw deer::ValidationError("malformed relaxometry row '" + line + "'");
        }
        times.push_back(t);
        values.push_back(v);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Forward simulator and analysis toolkit for DEER sensing of "
                 "surface radical spins with a shallow NV center"};
    app.require_subcommand(1);

    // --- simulate -----------------------------------------------------------
    auto* simulate = app.add_subcommand("simulate", "run a sweep described by a config file");
    std::string simulate_config;
    simulate->add_option("config", simulate_config, "experiment config (JSON)")->required();
    CommonFlags simulate_flags;
    add_common_flags(simulate, simulate_flags);

    // --- compare ------------------------------------------------------------
    auto* compare = app.add_subcommand("compare", "cross-check engines on one config");
    std::string compare_config;
    std::string compare_engines_list = "quantum,analytic";
    compare->add_option("config", compare_config, "experiment config (JSON)")->required();
    compare->add_option("--engines", compare_engines_list,
                        "comma-separated engines (quantum,bloch,analytic)");
    CommonFlags compare_flags;
    add_common_flags(compare, compare_flags);

    // --- estimate-density ----------------------------------------------------
    auto* estimate = app.add_subcommand("estimate-density",
                                        "areal density from a minimum signal");
    double min_signal = 0.5, est_depth_nm = 12.0, est_tau_ns = 900.0, min_signal_sem = 0.0;
    estimate->add_option("--min-signal", min_signal, "minimum DEER signal")->required();
    estimate->add_option("--depth-nm", est_depth_nm, "mean NV depth (nm)");
    estimate->add_option("--tau-ns", est_tau_ns, "total free evolution (ns)");
    estimate->add_option("--min-signal-sem", min_signal_sem, "SEM of the minimum");
    CommonFlags estimate_flags;
    add_common_flags(estimate, estimate_flags);

    // --- fit-lorentzian -------------------------------------------------------
    auto* lorentzian = app.add_subcommand("fit-lorentzian", "fit a frequency-sweep curve");
    std::string lorentzian_csv;
    lorentzian->add_option("curve", lorentzian_csv, "curve CSV")->required();
    CommonFlags lorentzian_flags;
    add_common_flags(lorentzian, lorentzian_flags);

    // --- fit-relax -------------------------------------------------------------
    auto* relax = app.add_subcommand("fit-relax", "bi-exponential relaxometry fit");
    std::string relax_csv;
    relax->add_option("data", relax_csv, "two-column CSV: time,value")->required();
    CommonFlags relax_flags;
    add_common_flags(relax, relax_flags);

    // --- split-compare -----------------------------------------------------------
    auto* split = app.add_subcommand("split-compare",
                                     "density change between two measurement periods");
    std::string split_a, split_b;
    double split_depth_nm = 12.0, split_tau_ns = 900.0;
    bool pair_average = false;
    int split_window = 5;
    split->add_option("first", split_a, "first-period curve CSV")->required();
    split->add_option("second", split_b, "second-period curve CSV")->required();
    split->add_option("--depth-nm", split_depth_nm, "mean NV depth (nm)");
    split->add_option("--tau-ns", split_tau_ns, "total free evolution (ns)");
    split->add_flag("--pair-average", pair_average, "average neighboring sweep points");
    split->add_option("--window", split_window, "smoothing window (odd)");
    CommonFlags split_flags;
    add_common_flags(split, split_flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) {
            const auto config = load_config(simulate_config, simulate_flags);
            const auto violations = config.validate();
            if (!violations.empty()) {
                std::cerr << "config validation failed:\n";
                for (const auto& v : violations) std::cerr << "  - " << v << '\n';
                return 2;
            }
            const auto result = deer::run_experiment(config);
            if (!simulate_flags.quiet) {
                std::cout << "wrote " << result.curve_path.string() << " ("
                          << result.curve.points.size() << " points, "
                          << result.manifest.engine_evaluations << " engine evaluations, "
                          << result.manifest.wall_clock_ms << " ms)\n";
                for (const auto& e : result.manifest.errors) {
                    std::cout << "warning: " << e << '\n';
                }
            }
            return result.partial_failure ? 3 : 0;
        }

        if (compare->parsed()) {
            auto config = load_config(compare_config, compare_flags);
            config.output_directory.clear();
            std::vector<deer::EngineKind> engines;
            std::stringstream list(compare_engines_list);
            std::string token;
            while (std::getline(list, token, ',')) {
                if (!token.empty()) engines.push_back(deer::parse_engine(token));
            }
            const auto comparison = deer::compare_engines(config, engines);
            CommonFlags out_flags = compare_flags;
            if (!out_flags.out.empty()) {
                out_flags.out += "/" + config.label + ".compare.json";
                std::filesystem::create_directories(compare_flags.out);
            }
            emit(comparison.to_json(), out_flags);
            return 0;
        }

        if (estimate->parsed()) {
            const auto result = deer::estimate_density(min_signal, est_depth_nm, est_tau_ns,
                                                       min_signal_sem);
            emit(density_json(result), estimate_flags);
            return 0;
        }

        if (lorentzian->parsed()) {
            const auto curve =
                deer::read_curve_csv(lorentzian_csv, deer::AxisKind::frequency_mhz);
            const auto fit = deer::fit_lorentzian(curve);
            emit(fit.to_json(), lorentzian_flags);
            return 0;
        }

        if (relax->parsed()) {
            std::vector<double> times, values;
            read_relaxometry_csv(relax_csv, times, values);
            const auto fit = deer::fit_biexponential(times, values);
            emit(fit.to_json(), relax_flags);
            return 0;
        }

        if (split->parsed()) {
            const auto first = deer::read_curve_csv(split_a);
            const auto second = deer::read_curve_csv(split_b);
            const auto report = deer::split_compare(first, second, split_depth_nm,
                                                    split_tau_ns, pair_average, split_window);
            json j;
            j["first"] = density_json(report.first);
            j["second"] = density_json(report.second);
            j["difference_per_nm2"] = report.difference;
            j["difference_sem"] = report.difference_sem;
            emit(j, split_flags);
            return 0;
        }
    } catch (const deer::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
