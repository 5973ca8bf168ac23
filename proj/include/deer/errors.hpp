#pragma once

#include <stdexcept>
#include <string>

namespace deer {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Precondition or input-domain violations (negative field, bad window, ...).
struct DomainError : Error {
    using Error::Error;
};

// Rejection sampling could not place a spin within the attempt budget.
struct SamplingError : Error {
    using Error::Error;
};

// Requested Hilbert-space dimension exceeds the configured limit.
struct CapacityError : Error {
    using Error::Error;
};

// A propagator failed its unitarity check or an integrator ran off the rails.
struct NumericsError : Error {
    using Error::Error;
};

// Adaptive quadrature exhausted its subdivision budget above tolerance.
struct AccuracyError : Error {
    using Error::Error;
};

// Config or CLI input failed structural validation.
struct ValidationError : Error {
    using Error::Error;
};

}  // namespace deer
