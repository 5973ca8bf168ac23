#pragma once

#include <cstdint>
#include <exception>
#include <functional>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace deer {

inline int hardware_worker_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

/// Runs fn(0), ..., fn(count-1). workers <= 1 takes the serial reference
/// path; otherwise the indices fan out over an OpenMP pool. Tasks must write
/// only to per-index slots, which keeps results byte-identical for any worker
/// count. The first exception thrown by any task is rethrown after the loop.
inline void parallel_for_indexed(std::int64_t count, int workers,
                                 const std::function<void(std::int64_t)>& fn) {
    if (count <= 0) return;
#ifdef _OPENMP
    if (workers > 1) {
        std::exception_ptr first_error = nullptr;
#pragma omp parallel for schedule(dynamic) num_threads(workers)
        for (std::int64_t i = 0; i < count; ++i) {
            try {
                fn(i);
            } catch (...) {
#pragma omp critical
                if (!first_error) first_error = std::current_exception();
            }
        }
        if (first_error) std::rethrow_exception(first_error);
        return;
    }
#endif
    (void)workers;
    for (std::int64_t i = 0; i < count; ++i) fn(i);
}

}  // namespace deer
