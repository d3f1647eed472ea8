#pragma once

#include <stdexcept>
#include <string>

namespace rebayes {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed or non-conformable input data (parse failures, dimension mismatch).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An iterative or special-function computation failed to produce a finite answer.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_domain(bool ok, const char* what) {
    if (!ok) throw DomainError(what);
}

}  // namespace detail
}  // namespace rebayes
