#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "deer/errors.hpp"
#include "deer/runner.hpp"

using namespace deer;

namespace {

namespace fs = std::filesystem;

ExperimentConfig small_bloch_config(const fs::path& out_dir) {
    ExperimentConfig config;
    config.field_gauss = 233.0;
    config.nv.depth_nm = 12.0;
    config.targets.density_per_nm2 = 0.08;
    config.targets.rmax_factor = 3.0;
    config.engine = EngineKind::bloch;
    config.relax.t2_us = 0.3;
    config.n_realizations = 40;
    config.master_seed = 991;
    config.sweep_values = {20.0, 60.0, 100.0, 140.0, 180.0};
    config.drive.rabi_mhz = 10.0;
    config.output_directory = out_dir.string();
    config.label = "bloch_smoke";
    return config;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("deer_test_" + std::to_string(std::rand()) + std::to_string(std::rand()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config json round trip and validation") {
    TempDir tmp;
    auto config = small_bloch_config(tmp.path);
    const auto json_doc = config.to_json();
    const auto restored = ExperimentConfig::from_json(json_doc);
    CHECK(restored.field_gauss == config.field_gauss);
    CHECK(restored.targets.density_per_nm2 == config.targets.density_per_nm2);
    CHECK(restored.engine == config.engine);
    CHECK(restored.sweep_values == config.sweep_values);
    CHECK(restored.master_seed == config.master_seed);
    CHECK(std::isinf(restored.relax.t1_us));
    CHECK(restored.relax.t2_us == 0.3);
    CHECK(restored.validate().empty());

    SUBCASE("violations are all collected") {
        auto bad = config;
        bad.nv.depth_nm = -3.0;
        bad.tau_ns = 0.0;
        bad.sweep_values.clear();
        bad.n_realizations = 0;
        const auto violations = bad.validate();
        CHECK(violations.size() >= 4);
        CHECK_THROWS_AS((void)evaluate_experiment(bad), ValidationError);
    }

    SUBCASE("ts values beyond the half are reported with their value") {
        auto bad = config;
        bad.sweep_values = {100.0, 470.0};
        const auto violations = bad.validate();
        REQUIRE(violations.size() == 1);
        CHECK(violations[0].find("470") != std::string::npos);
    }
}

TEST_CASE("analytic engine on an empty surface is flat unity") {
    TempDir tmp;
    ExperimentConfig config;
    config.engine = EngineKind::analytic;
    config.targets.density_per_nm2 = 0.0;
    config.n_realizations = 3;
    config.sweep_values = {50.0, 150.0, 250.0};
    config.output_directory = tmp.path.string();
    const auto result = evaluate_experiment(config);
    REQUIRE(result.curve.points.size() == 3);
    for (const auto& point : result.curve.points) {
        CHECK(point.signal_mean == 1.0);
        CHECK(point.signal_sem == 0.0);
        CHECK(point.n == 3);
    }
}

TEST_CASE("runs are deterministic and independent of the worker count") {
    TempDir tmp;
    auto config = small_bloch_config(tmp.path);

    config.workers = 1;
    config.label = "serial";
    const auto serial = run_experiment(config);
    config.workers = 4;
    config.label = "parallel";
    const auto parallel = run_experiment(config);
    CHECK(slurp(serial.curve_path) == slurp(parallel.curve_path));

    config.workers = 1;
    config.label = "serial_repeat";
    const auto repeat = run_experiment(config);
    CHECK(slurp(serial.curve_path) == slurp(repeat.curve_path));

    // The manifest records one child seed per realization.
    const auto manifest = nlohmann::json::parse(slurp(serial.manifest_path));
    CHECK(manifest["realization_seeds"].size() ==
          static_cast<std::size_t>(config.n_realizations));
    CHECK(manifest["config"]["engine"]["kind"] == "bloch");
    CHECK(manifest["errors"].empty());
}

TEST_CASE("curve csv round trips at full precision") {
    TempDir tmp;
    DeerCurve curve;
    curve.axis = AxisKind::ts_ns;
    curve.points.push_back({20.0, 0.123456789012345678, 0.001234567890123456, 7});
    curve.points.push_back({40.0, -0.98765432109876543, 0.000000123456789, 9});
    const auto path = tmp.path / "round_trip.csv";
    write_curve_csv(curve, path);
    const auto restored = read_curve_csv(path);
    REQUIRE(restored.points.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(restored.points[i].x == curve.points[i].x);
        CHECK(restored.points[i].signal_mean == curve.points[i].signal_mean);
        CHECK(restored.points[i].signal_sem == curve.points[i].signal_sem);
        CHECK(restored.points[i].n == curve.points[i].n);
    }
    const std::string text = slurp(path);
    CHECK(text.rfind("sweep_value,signal_mean,signal_sem,n_realizations\n", 0) == 0);
}

TEST_CASE("raw per-realization output") {
    TempDir tmp;
    auto config = small_bloch_config(tmp.path);
    config.write_raw = true;
    config.n_realizations = 5;
    config.label = "raw";
    (void)run_experiment(config);
    const auto raw = slurp(tmp.path / "raw.raw.csv");
    CHECK(raw.rfind("sweep_value,realization,signal\n", 0) == 0);
    // 5 sweep points x 5 realizations plus the header.
    int lines = 0;
    for (char c : raw) {
        if (c == '\n') ++lines;
    }
    CHECK(lines == 1 + 5 * 5);
}

TEST_CASE("quantum engine through the runner") {
    TempDir tmp;
    ExperimentConfig config;
    config.engine = EngineKind::quantum;
    config.targets.density_per_nm2 = 0.1;
    config.targets.rmax_factor = 3.0;
    config.targets.max_targets = 4;
    config.n_realizations = 3;
    config.master_seed = 5;
    config.sweep_values = {25.0, 100.0, 250.0};
    config.drive.rabi_mhz = 10.0;
    config.output_directory = tmp.path.string();
    config.label = "quantum_smoke";
    const auto result = run_experiment(config);
    CHECK(!result.partial_failure);
    REQUIRE(result.curve.points.size() == 3);
    for (const auto& point : result.curve.points) {
        CHECK(point.n == 3);
        CHECK(std::abs(point.signal_mean) <= 1.0 + 1e-9);
    }

    SUBCASE("byte-identical across worker counts") {
        auto one = config;
        one.workers = 1;
        one.label = "quantum_w1";
        auto many = config;
        many.workers = 3;
        many.label = "quantum_w3";
        CHECK(slurp(run_experiment(one).curve_path) ==
              slurp(run_experiment(many).curve_path));
    }
}

TEST_CASE("engine comparison report") {
    ExperimentConfig config;
    config.targets.density_per_nm2 = 0.06;
    config.targets.rmax_factor = 3.0;
    config.targets.max_targets = 5;
    config.targets.detuning_fwhm_mhz = 10.0;
    config.n_realizations = 6;
    config.master_seed = 321;
    config.sweep_values = {30.0, 90.0, 150.0, 210.0};
    config.drive.rabi_mhz = 10.0;

    SUBCASE("without pair couplings quantum equals the analytic product") {
        auto uncoupled = config;
        uncoupled.pair_form = PairCouplingForm::none;
        // The analytic engine runs unclamped, so keep the density low enough
        // that the Poisson draws stay under the quantum cap and both engines
        // see identical spins.
        uncoupled.targets.density_per_nm2 = 0.001;
        uncoupled.targets.max_targets = 12;
        const auto comparison =
            compare_engines(uncoupled, {EngineKind::quantum, EngineKind::analytic});
        CHECK(comparison.max_abs_difference(0, 1) < 1e-6);
        const auto j = comparison.to_json();
        CHECK(j["engines"].size() == 2);
        CHECK(j["points"].size() == 4);
    }

    SUBCASE("interacting quantum deviates from the analytic product") {
        auto interacting = config;
        interacting.targets.density_per_nm2 = 0.3;
        interacting.targets.max_targets = 6;
        const auto comparison =
            compare_engines(interacting, {EngineKind::quantum, EngineKind::analytic});
        CHECK(comparison.max_abs_difference(0, 1) > 0.0);
    }
}

TEST_CASE("environment variable supplies the default output directory") {
    TempDir tmp;
    const auto env_dir = tmp.path / "from_env";
    setenv(kOutputDirEnvVar, env_dir.string().c_str(), 1);
    auto config = small_bloch_config("");
    config.output_directory.clear();
    config.n_realizations = 2;
    config.label = "env";
    const auto result = run_experiment(config);
    unsetenv(kOutputDirEnvVar);
    CHECK(result.curve_path.parent_path() == env_dir);
    CHECK(fs::exists(result.curve_path));
}
