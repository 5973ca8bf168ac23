#include "deer/quantum_engine.hpp"

#include <cmath>
#include <complex>
#include <sstream>

#include "deer/errors.hpp"

namespace deer {

namespace {

using Mat = Eigen::MatrixXcd;
using std::complex;

constexpr double kUnitarityTolerance = 1e-8;
constexpr double kMinReferenceEcho = 1e-6;
// Exact diagonalization up to this dimension (N = 8), scaling-and-squaring above.
constexpr int kEigDimLimit = 256;

// Basis convention: bit k of the state index selects target k, bit value 0
// means m_k = +1/2. All Pauli-string builders below follow it.

void add_sz(Mat& h, int k, int n, double w) {
    const int dim = 1 << n;
    for (int b = 0; b < dim; ++b) {
        h(b, b) += w * (((b >> k) & 1) ? -0.5 : 0.5);
    }
}

void add_szsz(Mat& h, int j, int k, int n, double w) {
    const int dim = 1 << n;
    for (int b = 0; b < dim; ++b) {
        const double zj = ((b >> j) & 1) ? -0.5 : 0.5;
        const double zk = ((b >> k) & 1) ? -0.5 : 0.5;
        h(b, b) += w * zj * zk;
    }
}

// w * (s+_j s-_k + s-_j s+_k): couples |..down_j..up_k..> to |..up_j..down_k..>.
void add_flipflop(Mat& h, int j, int k, int n, double w) {
    const int dim = 1 << n;
    for (int b = 0; b < dim; ++b) {
        if (((b >> j) & 1) == 1 && ((b >> k) & 1) == 0) {
            const int b2 = (b & ~(1 << j)) | (1 << k);
            h(b2, b) += w;
            h(b, b2) += w;
        }
    }
}

void add_sx(Mat& h, int k, int n, double w) {
    const int dim = 1 << n;
    for (int b = 0; b < dim; ++b) {
        const int b2 = b ^ (1 << k);
        h(b2, b) += 0.5 * w;
    }
}

}  // namespace

namespace detail {

// Taylor series on a scaled matrix, then repeated squaring. The series is
// truncated where terms fall below machine precision for norm <= 1, which the
// scaling guarantees.
Mat expm_scaling_squaring(const Mat& a) {
    const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();  // inf-norm
    int squarings = 0;
    if (norm > 1.0) {
        squarings = static_cast<int>(std::ceil(std::log2(norm)));
    }
    const Mat scaled = a / std::pow(2.0, squarings);
    const int dim = static_cast<int>(a.rows());
    Mat result = Mat::Identity(dim, dim);
    Mat term = Mat::Identity(dim, dim);
    for (int i = 1; i <= 24; ++i) {
        term = (term * scaled / static_cast<double>(i)).eval();
        result += term;
    }
    for (int i = 0; i < squarings; ++i) {
        result = (result * result).eval();
    }
    return result;
}

}  // namespace detail

ConditionalHamiltonianPair build_segment_hamiltonians(const SpinConfiguration& config,
                                                      const DriveParams& drive,
                                                      SegmentKind kind,
                                                      const QuantumEngineOptions& options) {
    const int n = config.size();
    if (n > 30 || (1LL << n) > options.max_dim) {
        std::ostringstream msg;
        msg << "build_segment_hamiltonians: 2^" << n << " exceeds the dimension cap "
            << options.max_dim;
        throw CapacityError(msg.str());
    }
    const int dim = 1 << n;

    Mat base = Mat::Zero(dim, dim);
    for (int k = 0; k < n; ++k) {
        const double detuning =
            config.targets[k].detuning_mhz - drive.frequency_offset_mhz;
        add_sz(base, k, n, mhz_to_rad_per_us(detuning));
    }
    if (options.pair_form != PairCouplingForm::none) {
        for (int j = 0; j < n; ++j) {
            for (int k = j + 1; k < n; ++k) {
                const double wb = mhz_to_rad_per_us(config.pair_coupling(j, k));
                add_szsz(base, j, k, n, wb);
                if (options.pair_form == PairCouplingForm::full_secular) {
                    add_flipflop(base, j, k, n, -0.25 * wb);
                }
            }
        }
    }
    if (kind == SegmentKind::drive_on && !drive.instantaneous_pi) {
        for (int k = 0; k < n; ++k) {
            add_sx(base, k, n, mhz_to_rad_per_us(drive.rabi_mhz));
        }
    }

    Mat conditional_half = Mat::Zero(dim, dim);
    for (int k = 0; k < n; ++k) {
        add_sz(conditional_half, k, n, 0.5 * mhz_to_rad_per_us(config.nv_couplings_mhz[k]));
    }

    ConditionalHamiltonianPair pair;
    pair.segment_kind = kind;
    pair.h_plus = base + conditional_half;
    pair.h_minus = base - conditional_half;
    return pair;
}

struct QuantumEvaluator::Impl {
    struct KitKey {
        bool drive_on;
        bool plus_branch;
        double rabi_mhz;
        double offset_mhz;
        auto operator<=>(const KitKey&) const = default;
    };

    // Either an eigendecomposition (small dims) or the bare Hamiltonian for
    // the scaling-and-squaring path.
    struct Kit {
        bool has_eig = false;
        Eigen::VectorXd evals;
        Mat evecs;
        Mat hamiltonian;
    };

    SpinConfiguration config;
    QuantumEngineOptions options;
    int dim = 1;
    std::vector<double> weights;
    std::map<KitKey, Kit> kits;

    explicit Impl(SpinConfiguration cfg, QuantumEngineOptions opts)
        : config(std::move(cfg)), options(opts) {
        const int n = config.size();
        if (n > 30 || (1LL << n) > options.max_dim) {
            std::ostringstream msg;
            msg << "QuantumEvaluator: 2^" << n << " exceeds the dimension cap "
                << options.max_dim;
            throw CapacityError(msg.str());
        }
        dim = 1 << n;
        weights.assign(dim, 1.0 / dim);
        if (options.initial_state == InitialState::thermal) {
            const double p = std::tanh(0.5 * options.thermal_beta);
            for (int b = 0; b < dim; ++b) {
                double w = 1.0;
                for (int k = 0; k < n; ++k) {
                    w *= ((b >> k) & 1) ? 0.5 * (1.0 - p) : 0.5 * (1.0 + p);
                }
                weights[b] = w;
            }
        }
    }

    const Kit& kit(const KitKey& key, const DriveParams& drive) {
        auto it = kits.find(key);
        if (it != kits.end()) return it->second;

        DriveParams effective = drive;
        effective.frequency_offset_mhz = key.offset_mhz;
        effective.rabi_mhz = key.rabi_mhz;
        effective.instantaneous_pi = false;
        const auto pair = build_segment_hamiltonians(
            config, effective,
            key.drive_on ? SegmentKind::drive_on : SegmentKind::free_evolution, options);
        Kit k;
        const Mat& h = key.plus_branch ? pair.h_plus : pair.h_minus;
        if (dim <= kEigDimLimit) {
            Eigen::SelfAdjointEigenSolver<Mat> solver(h);
            if (solver.info() != Eigen::Success) {
                throw NumericsError("QuantumEvaluator: eigendecomposition failed");
            }
            k.has_eig = true;
            k.evals = solver.eigenvalues();
            k.evecs = solver.eigenvectors();
        } else {
            k.hamiltonian = h;
        }
        return kits.emplace(key, std::move(k)).first->second;
    }

    Mat propagator(const Kit& k, double duration_us) {
        Mat u;
        if (k.has_eig) {
            Eigen::VectorXcd phases(k.evals.size());
            for (Eigen::Index i = 0; i < k.evals.size(); ++i) {
                phases(i) = std::exp(complex<double>(0.0, -k.evals(i) * duration_us));
            }
            u = k.evecs * phases.asDiagonal() * k.evecs.adjoint();
        } else {
            u = detail::expm_scaling_squaring(complex<double>(0.0, -duration_us) *
                                              k.hamiltonian);
        }
        const double drift =
            (u.adjoint() * u - Mat::Identity(dim, dim)).cwiseAbs().maxCoeff();
        if (drift > kUnitarityTolerance) {
            std::ostringstream msg;
            msg << "QuantumEvaluator: propagator unitarity drift " << drift << " exceeds "
                << kUnitarityTolerance;
            throw NumericsError(msg.str());
        }
        return u;
    }

    // F * U with F = sigma_x on every target: a row permutation.
    static Mat apply_global_flip(const Mat& u, int dim) {
        Mat out(dim, dim);
        for (int i = 0; i < dim; ++i) {
            out.row(i) = u.row((dim - 1) ^ i);
        }
        return out;
    }

    double run(const DeerTimeline& timeline, const DriveParams& drive, bool drive_active) {
        Mat u_a = Mat::Identity(dim, dim);
        Mat u_b = Mat::Identity(dim, dim);
        bool after_pi = false;
        // Per-call propagator cache: segment durations repeat across the two
        // echo halves.
        std::map<std::pair<KitKey, double>, Mat> props;

        auto step = [&](Mat& u, bool plus_branch, bool drive_on, double duration_us) {
            const KitKey key{drive_on, plus_branch, drive.rabi_mhz,
                             drive.frequency_offset_mhz};
            auto it = props.find({key, duration_us});
            if (it == props.end()) {
                it = props.emplace(std::make_pair(key, duration_us),
                                   propagator(kit(key, drive), duration_us))
                         .first;
            }
            u = (it->second * u).eval();
        };

        for (const auto& segment : timeline.segments) {
            if (segment.nv_action == NvAction::pi_pulse) {
                after_pi = true;
                continue;
            }
            const bool drive_on = segment.drive_on && drive_active;
            if (segment.drive_on && drive.instantaneous_pi) {
                if (drive_active) {
                    u_a = apply_global_flip(u_a, dim);
                    u_b = apply_global_flip(u_b, dim);
                }
                continue;
            }
            if (segment.duration_ns <= 0.0) continue;
            const double duration_us = ns_to_us(segment.duration_ns);
            const bool a_plus = !after_pi;  // path A: m_s=0 branch first
            step(u_a, a_plus, drive_on, duration_us);
            step(u_b, !a_plus, drive_on, duration_us);
        }

        // Phase-alternated readout contrast equals Re Tr[rho U_B^dag U_A];
        // see the 4x4 oracle in the tests for the full pulse-level derivation.
        double overlap = 0.0;
        for (int j = 0; j < dim; ++j) {
            overlap += weights[j] * u_b.col(j).dot(u_a.col(j)).real();
        }
        return overlap;
    }

    double signal(const DeerTimeline& timeline, const DriveParams& drive) {
        bool has_drive = false;
        for (const auto& s : timeline.segments) has_drive |= s.drive_on;
        if (!has_drive || (drive.rabi_mhz == 0.0 && !drive.instantaneous_pi)) {
            return 1.0;  // drive-off evolution is its own reference
        }
        const double raw = run(timeline, drive, true);
        const double reference = run(timeline, drive, false);
        if (std::abs(reference) < kMinReferenceEcho) {
            std::ostringstream msg;
            msg << "QuantumEvaluator: reference echo " << reference
                << " too small to normalize against";
            throw NumericsError(msg.str());
        }
        return raw / reference;
    }
};

QuantumEvaluator::QuantumEvaluator(SpinConfiguration config, QuantumEngineOptions options)
    : impl_(std::make_unique<Impl>(std::move(config), options)) {}

QuantumEvaluator::~QuantumEvaluator() = default;
QuantumEvaluator::QuantumEvaluator(QuantumEvaluator&&) noexcept = default;

double QuantumEvaluator::signal(const DeerTimeline& timeline, const DriveParams& drive) {
    return impl_->signal(timeline, drive);
}

const SpinConfiguration& QuantumEvaluator::config() const { return impl_->config; }

DeerObservable deer_signal_quantum(const SpinConfiguration& config,
                                   const DeerTimeline& timeline, const DriveParams& drive,
                                   const QuantumEngineOptions& options) {
    QuantumEvaluator evaluator(config, options);
    return DeerObservable{evaluator.signal(timeline, drive)};
}

}  // namespace deer
