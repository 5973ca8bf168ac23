#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "deer/analysis.hpp"
#include "deer/bloch.hpp"
#include "deer/geometry.hpp"
#include "deer/quantum_engine.hpp"
#include "deer/sequence.hpp"

namespace deer {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kConfigSchemaVersion = 1;
/// Default output directory when neither the config nor --out provides one.
inline constexpr const char* kOutputDirEnvVar = "DEER_OUT_DIR";

enum class EngineKind { quantum, bloch, analytic };

std::string engine_name(EngineKind kind);
EngineKind parse_engine(const std::string& name);

/// Full experiment description. All physical quantities carry unit suffixes.
/// Parsed from a JSON document (see README for the schema); every default is
/// materialized back into the run manifest.
struct ExperimentConfig {
    // physics
    double field_gauss = 233.0;
    NvSite nv{};

    // targets
    SamplingParams targets{};
    RelaxationParams relax{};

    // sequence
    double tau_ns = 900.0;
    SweepKind sweep_kind = SweepKind::ts_sweep;
    /// T_s values in ns, or absolute drive frequencies in MHz for frequency
    /// sweeps (converted internally to offsets from the Larmor frequency).
    std::vector<double> sweep_values;
    DriveParams drive{};

    // engine
    EngineKind engine = EngineKind::quantum;
    int n_realizations = 1;
    std::uint64_t master_seed = 1;
    PairCouplingForm pair_form = PairCouplingForm::full_secular;
    bool gaussian_phase = false;  // bloch engine averaging mode
    double initial_polarization = 0.0;
    int max_dim = 4096;
    /// Worker pool size; 0 means the hardware default.
    int workers = 0;

    // output
    std::string output_directory;
    std::string label = "run";
    bool write_raw = false;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    /// Every violated precondition, empty when the config is runnable.
    std::vector<std::string> validate() const;

    /// Larmor frequency at the configured field.
    double nominal_resonance_mhz() const;
};

struct RunManifest {
    nlohmann::json resolved_config(const ExperimentConfig&) const;

    std::string tool_version = kToolVersion;
    std::vector<std::uint64_t> realization_seeds;
    double wall_clock_ms = 0.0;
    std::int64_t engine_evaluations = 0;
    std::vector<std::string> errors;  // realization/point failures
};

struct RunResult {
    DeerCurve curve;
    RunManifest manifest;
    std::filesystem::path curve_path;
    std::filesystem::path manifest_path;
    bool partial_failure = false;
};

/// Evaluates the configured engine over the sweep grid, n_realizations
/// deterministic child seeds per point, and persists curve CSV + manifest
/// JSON (append-then-rename). Output bytes depend only on (config, seed),
/// never on the worker count. Engine failures are recorded per point and the
/// run continues.
RunResult run_experiment(const ExperimentConfig& config);

/// In-memory evaluation without touching the filesystem.
RunResult evaluate_experiment(const ExperimentConfig& config);

struct EngineComparison {
    std::vector<EngineKind> engines;
    std::vector<DeerCurve> curves;  // one per engine, identical seeds/sweeps

    double max_abs_difference(std::size_t i, std::size_t j) const;
    nlohmann::json to_json() const;
};

/// Runs several engines over identical seeds and sweep values and reports
/// per-point differences. The quantum engine keeps the configured target cap;
/// bloch and analytic run unclamped.
EngineComparison compare_engines(const ExperimentConfig& config,
                                 const std::vector<EngineKind>& engines);

/// Curve CSVI/O. Schema: header `sweep_value,signal_mean,signal_sem,
/// n_realizations`, floats with 17 significant digits.
void write_curve_csv(const DeerCurve& curve, const std::filesystem::path& path);
DeerCurve read_curve_csv(const std::filesystem::path& path,
                         AxisKind axis = AxisKind::ts_ns);

}  // namespace deer
