#pragma once

#include <stdexcept>
#include <string>

namespace emorf2 {

/// Argument outside the mathematical domain of an operation (non-finite
/// state, non-positive indicator, invalid hyperparameters).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Floating-point failure during filtering: a factorization that did not
/// succeed, a non-finite intermediate, a singular innovation covariance.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace emorf2
