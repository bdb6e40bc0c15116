#ifndef SFDA_ERROR_HPP
#define SFDA_ERROR_HPP

#include <stdexcept>
#include <string>

namespace sfda {

// Error taxonomy mirrored by the CLI exit codes:
//   InvalidArgument / ContractViolation -> 1, DataError -> 2, NumericalError -> 3.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& msg) : Error(msg) {}
};

// Filesystem / dataset / checkpoint problems.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf guards during optimization.
struct NumericalError : Error {
    explicit NumericalError(const std::string& msg) : Error(msg) {}
};

// API misuse that a caller could have checked (e.g. asking for gradients
// from a forward pass that did not record one).
struct ContractViolation : Error {
    explicit ContractViolation(const std::string& msg) : Error(msg) {}
};

} // namespace sfda

#endif
