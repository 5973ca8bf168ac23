// Compares the serial reference path against the OpenMP fan-out on the two
// realization-parallel workloads (Bloch Monte Carlo and the quantum engine)
// and checks that both produce identical bytes.

#include <chrono>
#include <cstdio>
#include <string>

#include "deer/parallel.hpp"
#include "deer/runner.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double run_ms(deer::ExperimentConfig config, int workers) {
    config.workers = workers;
    const auto start = Clock::now();
    (void)deer::evaluate_experiment(config);
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

bool identical_curves(const deer::DeerCurve& a, const deer::DeerCurve& b) {
    if (a.points.size() != b.points.size()) return false;
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        if (a.points[i].signal_mean != b.points[i].signal_mean ||
            a.points[i].signal_sem != b.points[i].signal_sem) {
            return false;
        }
    }
    return true;
}

deer::ExperimentConfig base_config() {
    deer::ExperimentConfig config;
    config.field_gauss = 233.0;
    config.nv.depth_nm = 12.0;
    config.targets.density_per_nm2 = 0.15;
    config.targets.rmax_factor = 4.0;
    config.tau_ns = 900.0;
    config.sweep_kind = deer::SweepKind::ts_sweep;
    for (double ts = 20.0; ts <= 440.0; ts += 30.0) config.sweep_values.push_back(ts);
    config.drive.rabi_mhz = 10.0;
    config.master_seed = 20240901;
    return config;
}

void bench(const std::string& name, deer::ExperimentConfig config) {
    const int workers = deer::hardware_worker_count();
    const double serial_ms = run_ms(config, 1);
    const double parallel_ms = run_ms(config, workers);

    config.workers = 1;
    const auto serial_curve = deer::evaluate_experiment(config).curve;
    config.workers = workers;
    const auto parallel_curve = deer::evaluate_experiment(config).curve;
    const bool match = identical_curves(serial_curve, parallel_curve);

    std::printf("%-18s serial %9.1f ms | omp(%d) %9.1f ms | speedup %.2fx | %s\n",
                name.c_str(), serial_ms, workers, parallel_ms, serial_ms / parallel_ms,
                match ? "identical results" : "RESULTS DIFFER");
}

}  // namespace

int main() {
    std::printf("workers available: %d\n", deer::hardware_worker_count());

    auto bloch = base_config();
    bloch.engine = deer::EngineKind::bloch;
    bloch.n_realizations = 400;
    bloch.relax.t2_us = 0.5;
    bench("bloch", bloch);

    auto analytic = base_config();
    analytic.engine = deer::EngineKind::analytic;
    analytic.n_realizations = 400;
    bench("analytic", analytic);

    auto quantum = base_config();
    quantum.engine = deer::EngineKind::quantum;
    quantum.targets.max_targets = 7;
    quantum.n_realizations = 8;
    bench("quantum", quantum);
    return 0;
}
